#ifndef AGENCY_HJB_HPP
#define AGENCY_HJB_HPP

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "agency/model.hpp"

namespace agency::hjb {

enum class Scheme { Explicit, SemiImplicit };

// Uniform tensor grid on [x_lo, x_hi]^N with n_x points per axis and n_t
// backward Euler steps. Construction enforces the parabolic stability bound
// for the explicit scheme and keeps x0 away from the boundary by a
// three-standard-deviation margin.
struct Grid {
    int dim = 0;
    double x_lo = 0.0, x_hi = 0.0;
    int n_x = 0;
    double h = 0.0;
    int n_t = 0;
    double dt = 0.0;
    double horizon = 0.0;
    Scheme scheme = Scheme::Explicit;
    std::size_t n_nodes = 0;

    // n_t == 0 picks the stability-bound step count automatically.
    static Grid make(const ModelParams& params, double x_lo, double x_hi, int n_x, int n_t = 0,
                     Scheme scheme = Scheme::Explicit);

    double coord(int i) const { return x_lo + h * i; }
    Vector coords(std::size_t node) const;
    std::size_t index(std::span<const int> multi) const;
    void unravel(std::size_t node, std::span<int> multi) const;
    // Full central stencil available (one ring inside the boundary).
    bool is_interior(std::size_t node) const;
    double time(int layer) const { return dt * layer; }
};

// Scalar field on grid x time; layer k holds values at t = k dt.
struct TimeField {
    int n_layers = 0;
    std::size_t n_nodes = 0;
    std::vector<double> data;

    TimeField() = default;
    TimeField(int layers, std::size_t nodes)
        : n_layers(layers), n_nodes(nodes), data(static_cast<std::size_t>(layers) * nodes, 0.0) {}
    double& at(int layer, std::size_t node) { return data[static_cast<std::size_t>(layer) * n_nodes + node]; }
    double at(int layer, std::size_t node) const {
        return data[static_cast<std::size_t>(layer) * n_nodes + node];
    }
    std::span<double> layer(int k) { return {data.data() + static_cast<std::size_t>(k) * n_nodes, n_nodes}; }
    std::span<const double> layer(int k) const {
        return {data.data() + static_cast<std::size_t>(k) * n_nodes, n_nodes};
    }
};

// Vector field on grid x time (dim components per node).
struct VectorTimeField {
    int n_layers = 0;
    std::size_t n_nodes = 0;
    int dim = 0;
    std::vector<double> data;

    VectorTimeField() = default;
    VectorTimeField(int layers, std::size_t nodes, int d)
        : n_layers(layers),
          n_nodes(nodes),
          dim(d),
          data(static_cast<std::size_t>(layers) * nodes * d, 0.0) {}
    double& at(int layer, std::size_t node, int c) {
        return data[(static_cast<std::size_t>(layer) * n_nodes + node) * dim + c];
    }
    double at(int layer, std::size_t node, int c) const {
        return data[(static_cast<std::size_t>(layer) * n_nodes + node) * dim + c];
    }
};

struct Terminal {
    std::function<double(const Vector&)> value;
    std::optional<Vector> affine_gradient;

    static Terminal affine(const Vector& gradient, double offset = 0.0);
    static Terminal general(std::function<double(const Vector&)> f);
    // Competitive liquidation payoffs ell_i and their sum for the model.
    static Terminal liquidation_of(const ModelParams& params, int i);
    static Terminal aggregate_of(const ModelParams& params);
};

// Pointwise maps of the risk-neutral construction. phi solves the first-order
// coupling Phi; phi_inverse inverts Id + Phi (closed form M z for the
// linear-quadratic spec, damped Newton otherwise).
Vector phi(double t, const Vector& x, const Vector& beta_bar, const DriftCostSpec& spec,
           const ModelParams& params);
Vector phi_inverse(double t, const Vector& x, const Vector& z, const DriftCostSpec& spec,
                   const ModelParams& params);
double hamiltonian_H(double t, const Vector& x, const Vector& z, const DriftCostSpec& spec,
                     const ModelParams& params);

struct AggregatedSolution {
    TimeField V;
    TimeField source;  // H(t, x, grad V) per layer, cached for the component solves
    double max_interior_residual = 0.0;
};

// Backward time stepping of  d_t V + 1/2 Tr(Sigma Sigma^T D^2 V) + H(., grad V) = 0
// from t = T with V(T) = L; linear-extrapolation (zero second normal
// derivative) boundaries.
AggregatedSolution solve_aggregated(const Grid& grid, const DriftCostSpec& spec,
                                    const ModelParams& params, const Terminal& terminal);

// N linear backward solves sharing the cached source field H/N.
std::vector<TimeField> solve_components(const Grid& grid, const DriftCostSpec& spec,
                                        const ModelParams& params, const AggregatedSolution& agg,
                                        const std::vector<Terminal>& terminals, int threads = 0);

// Pure heat solve with a fixed per-layer source (source may be empty for the
// homogeneous equation). Shared machinery, exposed for verification runs.
TimeField solve_linear(const Grid& grid, const ModelParams& params, const Terminal& terminal,
                       const TimeField* source, double source_scale);

struct GridSolution {
    Grid grid;
    TimeField V;
    TimeField source;
    std::vector<TimeField> u_tilde;
    double v_residual = 0.0;          // Crank-Nicolson-centered interior diagnostic
    double decomposition_gap = 0.0;   // max_nodes |sum_i u_tilde^i - V|
};

GridSolution solve_all(const Grid& grid, const DriftCostSpec& spec, const ModelParams& params,
                       const std::vector<Terminal>& terminals, int threads = 0);

struct BetaFields {
    VectorTimeField grad_V;
    VectorTimeField beta_bar;
    std::vector<VectorTimeField> beta_i;
    double foc_residual = 0.0;  // max |beta^i - grad u^i + Phi/N|, zero by construction
    double sum_residual = 0.0;  // max interior |beta_bar - sum_i beta^i|
};

// beta_bar = phi_inverse(., grad V), beta^i = grad u^i - Phi(., beta_bar)/N.
BetaFields construct_betas(const GridSolution& sol, const DriftCostSpec& spec,
                           const ModelParams& params);

// Gradient of one layer: central differences inside, one-sided at the
// boundary. `out` must have grid.n_nodes * grid.dim entries.
void gradient_layer(const Grid& grid, std::span<const double> values, std::span<double> out);

// Columnar export, one row per node per exported layer:
//   t, x1..xN, V, u_tilde_1..N, grad_V_1..N, beta_bar_1..N, beta_1_1..beta_N_N.
// layer_stride <= 0 exports ~10 evenly spaced layers plus the terminal one.
extern const char* const kGridSchema;
void export_csv(std::ostream& os, const GridSolution& sol, const BetaFields& betas,
                int layer_stride);

// Multilinear space / linear time interpolation of grid outputs, clamped to
// the box; used to turn grid solutions into simulation policies.
double interpolate(const Grid& grid, const TimeField& field, double t, const Vector& x);
Policy vector_policy(const Grid& grid, const VectorTimeField& field);
ScalarPolicy scalar_policy(const Grid& grid, const TimeField& field);

}  // namespace agency::hjb

#endif  // AGENCY_HJB_HPP
