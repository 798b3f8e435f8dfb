#include "agency/hjb.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>
#include <sstream>
#include <thread>

#include "agency/csv.hpp"

namespace agency::hjb {

namespace {

constexpr double kNewtonTol = 1e-10;
constexpr int kNewtonMaxIter = 100;
constexpr double kDetThreshold = 1e-12;
constexpr double kBlowupLimit = 1e12;

double max_eig_ss(const ModelParams& params) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(params.sigma_sigma_t());
    return es.eigenvalues().maxCoeff();
}

// Closed forms for the linear-quadratic spec, Newton machinery otherwise.
class PointwiseOps {
public:
    PointwiseOps(const DriftCostSpec& spec, const ModelParams& params)
        : spec_(spec), params_(params), n_(params.n_principals) {
        ss_ = params.sigma_sigma_t();
        if (spec_.is_lq()) {
            const Vector& k = spec_.k_diag();
            if (k.size() != n_) throw ConfigError("efficiency diagonal has the wrong length");
            k2_ = k.cwiseProduct(k);
            Matrix a = Matrix::Identity(n_, n_);
            a += params_.risk_aversion * n_ * k2_.cwiseInverse().asDiagonal() * ss_;
            Eigen::FullPivLU<Matrix> lu(a);
            if (!lu.isInvertible())
                throw SingularMatrix("Id + Phi is numerically singular for this spec");
            m_lq_ = lu.inverse();
        }
    }

    Vector phi(double t, const Vector& x, const Vector& beta_bar) const {
        if (spec_.is_lq())
            return params_.risk_aversion * n_ *
                   k2_.cwiseInverse().cwiseProduct(ss_ * beta_bar);
        return phi_generic(t, x, beta_bar);
    }

    Vector phi_inverse(double t, const Vector& x, const Vector& z) const {
        if (spec_.is_lq()) return m_lq_ * z;
        return newton_invert(t, x, z);
    }

    double hamiltonian(double t, const Vector& x, const Vector& z) const {
        const Vector w = phi_inverse(t, x, z);
        const Vector nu = best_response(t, x, w, spec_);
        const Vector b = spec_.drift(t, x, nu);
        return (z - w).dot(b) - generator_G(t, x, w, params_, spec_);
    }

private:
    Vector phi_generic(double t, const Vector& x, const Vector& beta_bar) const {
        const Vector nu = best_response(t, x, beta_bar, spec_);
        // The derivative machinery below differentiates the stationarity
        // condition; a response pinned at the effort box has no interior
        // stationary point to differentiate.
        for (int i = 0; i < n_; ++i) {
            if (std::abs(nu(i)) >= spec_.effort_box() - 1e-9)
                throw SingularMBeta("best response is pinned at the effort box");
        }
        const Vector b = spec_.drift(t, x, nu);

        // M_beta = grad_nu b . grad_z nu*. By the implicit function theorem at
        // the interior maximizer, grad_z nu* = -Hg^-1 (grad_nu b)^T with Hg the
        // effort Hessian of b.z - c, so M_beta = -A Hg^-1 A^T.
        const double hb = 1e-5 * std::max(1.0, nu.norm());
        Matrix a(n_, n_), hg(n_, n_);
        Vector e = Vector::Zero(n_);
        for (int j = 0; j < n_; ++j) {
            e(j) = 1.0;
            a.col(j) =
                (spec_.drift(t, x, nu + hb * e) - spec_.drift(t, x, nu - hb * e)) / (2.0 * hb);
            hg.col(j) = (spec_.objective_gradient(t, x, nu + hb * e, beta_bar) -
                         spec_.objective_gradient(t, x, nu - hb * e, beta_bar)) /
                        (2.0 * hb);
            e(j) = 0.0;
        }
        hg = (0.5 * (hg + hg.transpose())).eval();
        Eigen::FullPivLU<Matrix> hg_lu(hg);
        if (!hg_lu.isInvertible())
            throw SingularMBeta("effort Hessian is singular at the best response");
        const Matrix m_beta = -a * hg_lu.solve(a.transpose());
        Eigen::JacobiSVD<Matrix> svd(m_beta);
        const double smax = svd.singularValues()(0);
        const double smin = svd.singularValues()(n_ - 1);
        if (!(smin > kDetThreshold * std::max(1.0, smax)))
            throw SingularMBeta("M_beta is numerically singular at this point");
        // grad G by the envelope formula: R_A Sigma Sigma^T z - b(nu*(z)).
        const Vector gg = params_.risk_aversion * (ss_ * beta_bar) - b;
        // First-order coupling with the other principals' drift rates held
        // fixed: Phi = N M_beta^-T (grad G + b).
        Eigen::PartialPivLU<Matrix> lu(m_beta.transpose());
        return static_cast<double>(n_) * lu.solve(gg + b);
    }

    Vector newton_invert(double t, const Vector& x, const Vector& z) const {
        const double tol = kNewtonTol * std::max(1.0, z.norm());
        Vector beta = z;
        double res = std::numeric_limits<double>::infinity();
        try {
            Vector f = beta + phi(t, x, beta) - z;
            res = f.norm();
            for (int it = 0; it < kNewtonMaxIter; ++it) {
                if (res <= tol) return beta;
                const double hz = 1e-6 * std::max(1.0, beta.norm());
                Matrix jac = Matrix::Identity(n_, n_);
                Vector e = Vector::Zero(n_);
                for (int j = 0; j < n_; ++j) {
                    e(j) = 1.0;
                    jac.col(j) =
                        e + (phi(t, x, beta + hz * e) - phi(t, x, beta - hz * e)) / (2.0 * hz);
                    e(j) = 0.0;
                }
                Eigen::FullPivLU<Matrix> lu(jac);
                if (!lu.isInvertible())
                    throw NoConvergence("phi_inverse: singular Newton Jacobian", res);
                const Vector step = -lu.solve(f);
                double alpha = 1.0;
                bool accepted = false;
                for (int ls = 0; ls < 30; ++ls) {
                    const Vector cand = beta + alpha * step;
                    const Vector fc = cand + phi(t, x, cand) - z;
                    if (fc.norm() < res) {
                        beta = cand;
                        f = fc;
                        res = fc.norm();
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if (!accepted)
                    throw NoConvergence("phi_inverse: line search stalled (Id + Phi may not be "
                                        "invertible near this point)",
                                        res);
            }
        } catch (const SingularMBeta&) {
            throw NoConvergence("phi_inverse: M_beta became singular during the iteration", res);
        } catch (const NonConcaveHamiltonian&) {
            throw NoConvergence("phi_inverse: inner best response failed during the iteration",
                                res);
        }
        throw NoConvergence("phi_inverse: no convergence after max iterations", res);
    }

    const DriftCostSpec& spec_;
    const ModelParams& params_;
    int n_;
    Matrix ss_;
    Vector k2_;
    Matrix m_lq_;
};

// Layer padded with one ghost ring, ghosts linearly extrapolated so that the
// second normal derivative vanishes at the boundary. Central stencils applied
// to the padded array are exact for affine fields, and the boundary gradient
// reduces to the one-sided difference.
class PaddedLayer {
public:
    explicit PaddedLayer(const Grid& grid) : g_(grid), pnx_(grid.n_x + 2) {
        std::size_t total = 1;
        pstr_.assign(g_.dim, 0);
        for (int d = g_.dim - 1; d >= 0; --d) {
            pstr_[d] = total;
            total *= static_cast<std::size_t>(pnx_);
        }
        p_.assign(total, 0.0);
        nstr_.assign(g_.dim, 0);
        std::size_t t2 = 1;
        for (int d = g_.dim - 1; d >= 0; --d) {
            nstr_[d] = t2;
            t2 *= static_cast<std::size_t>(g_.n_x);
        }
    }

    void fill(std::span<const double> layer) {
        std::vector<int> m(g_.dim, 0);
        for (std::size_t node = 0; node < g_.n_nodes; ++node) {
            p_[padded_index(m)] = layer[node];
            for (int d = g_.dim - 1; d >= 0; --d) {
                if (++m[d] < g_.n_x) break;
                m[d] = 0;
            }
        }
        // Extrapolate axis by axis; later axes fill edge/corner ghosts using
        // ghosts of earlier axes.
        for (int d = 0; d < g_.dim; ++d) extrapolate_axis(d);
    }

    double at(std::span<const int> node_multi, std::span<const int> offset) const {
        std::size_t idx = 0;
        for (int d = 0; d < g_.dim; ++d)
            idx += static_cast<std::size_t>(node_multi[d] + 1 + offset[d]) * pstr_[d];
        return p_[idx];
    }

    std::size_t padded_node(std::span<const int> node_multi) const {
        std::size_t idx = 0;
        for (int d = 0; d < g_.dim; ++d)
            idx += static_cast<std::size_t>(node_multi[d] + 1) * pstr_[d];
        return idx;
    }

    double value(std::size_t padded_idx) const { return p_[padded_idx]; }
    std::size_t stride(int d) const { return pstr_[d]; }

private:
    std::size_t padded_index(const std::vector<int>& m) const {
        std::size_t idx = 0;
        for (int d = 0; d < g_.dim; ++d) idx += static_cast<std::size_t>(m[d] + 1) * pstr_[d];
        return idx;
    }

    void extrapolate_axis(int axis) {
        // Iterate the face spanned by the other axes; axes before `axis` run
        // over the full padded range, later ones over the real range.
        std::vector<int> lo(g_.dim), hi(g_.dim);
        for (int d = 0; d < g_.dim; ++d) {
            if (d == axis) {
                lo[d] = 0;
                hi[d] = 1;
            } else if (d < axis) {
                lo[d] = 0;
                hi[d] = pnx_;
            } else {
                lo[d] = 1;
                hi[d] = pnx_ - 1;
            }
        }
        std::vector<int> m = lo;
        const std::size_t s = pstr_[axis];
        for (;;) {
            std::size_t base = 0;
            for (int d = 0; d < g_.dim; ++d)
                if (d != axis) base += static_cast<std::size_t>(m[d]) * pstr_[d];
            p_[base] = 2.0 * p_[base + s] - p_[base + 2 * s];
            const std::size_t top = base + static_cast<std::size_t>(pnx_ - 1) * s;
            p_[top] = 2.0 * p_[top - s] - p_[top - 2 * s];

            int d = g_.dim - 1;
            for (; d >= 0; --d) {
                if (d == axis) continue;
                if (++m[d] < hi[d]) break;
                m[d] = lo[d];
            }
            if (d < 0) break;
        }
    }

    const Grid& g_;
    int pnx_;
    std::vector<double> p_;
    std::vector<std::size_t> pstr_;
    std::vector<std::size_t> nstr_;
};

struct NodeDerivatives {
    Vector grad;
    double diffusion = 0.0;  // 1/2 Tr(Sigma Sigma^T D^2 .)
};

NodeDerivatives node_derivatives(const Grid& g, const PaddedLayer& pad, std::size_t pidx,
                                 const Matrix& ss, bool need_diffusion) {
    NodeDerivatives out;
    out.grad.resize(g.dim);
    const double inv2h = 1.0 / (2.0 * g.h);
    const double invh2 = 1.0 / (g.h * g.h);
    for (int d = 0; d < g.dim; ++d) {
        const std::size_t s = pad.stride(d);
        out.grad(d) = (pad.value(pidx + s) - pad.value(pidx - s)) * inv2h;
    }
    if (!need_diffusion) return out;
    double acc = 0.0;
    const double center = pad.value(pidx);
    for (int d = 0; d < g.dim; ++d) {
        const std::size_t s = pad.stride(d);
        acc += ss(d, d) * (pad.value(pidx + s) - 2.0 * center + pad.value(pidx - s)) * invh2;
    }
    for (int d1 = 0; d1 < g.dim; ++d1) {
        for (int d2 = d1 + 1; d2 < g.dim; ++d2) {
            const std::size_t s1 = pad.stride(d1), s2 = pad.stride(d2);
            const double cross = (pad.value(pidx + s1 + s2) - pad.value(pidx + s1 - s2) -
                                  pad.value(pidx - s1 + s2) + pad.value(pidx - s1 - s2)) *
                                 0.25 * invh2;
            acc += 2.0 * ss(d1, d2) * cross;
        }
    }
    out.diffusion = 0.5 * acc;
    return out;
}

double cross_coupling(const Matrix& ss) {
    double b = 0.0;
    for (int i = 0; i < ss.rows(); ++i)
        for (int j = 0; j < ss.cols(); ++j)
            if (i != j) b += std::abs(ss(i, j));
    return b;
}

void check_finite_layer(std::span<const double> layer, const char* what) {
    for (double v : layer) {
        if (!std::isfinite(v) || std::abs(v) > kBlowupLimit)
            throw Unstable(std::string(what) + ": nodal value exceeded the blow-up limit");
    }
}

// One implicit LOD sweep per axis for the diagonal diffusion part.
void implicit_diagonal_sweeps(const Grid& g, const Matrix& ss, double dt,
                              std::span<double> layer) {
    std::vector<std::size_t> nstr(g.dim);
    std::size_t total = 1;
    for (int d = g.dim - 1; d >= 0; --d) {
        nstr[d] = total;
        total *= static_cast<std::size_t>(g.n_x);
    }
    const int n = g.n_x;
    std::vector<double> rhs(n), sol(n), cp(n);
    for (int axis = 0; axis < g.dim; ++axis) {
        const double c = 0.5 * dt * ss(axis, axis) / (g.h * g.h);
        if (c == 0.0) continue;
        const std::size_t s = nstr[axis];
        // Enumerate line starts: nodes whose `axis` index is zero.
        std::vector<int> m(g.dim, 0);
        for (;;) {
            std::size_t base = 0;
            for (int d = 0; d < g.dim; ++d) base += static_cast<std::size_t>(m[d]) * nstr[d];
            for (int i = 0; i < n; ++i) rhs[i] = layer[base + i * s];
            // Rows 0 and n-1 are identity (zero second normal derivative).
            // Thomas elimination on the tridiagonal (-c, 1+2c, -c) interior.
            sol[0] = rhs[0];
            cp[0] = 0.0;
            for (int i = 1; i < n - 1; ++i) {
                const double denom = (1.0 + 2.0 * c) + c * cp[i - 1];
                cp[i] = -c / denom;
                sol[i] = (rhs[i] + c * sol[i - 1]) / denom;
            }
            sol[n - 1] = rhs[n - 1];
            for (int i = n - 2; i >= 1; --i) sol[i] -= cp[i] * sol[i + 1];
            for (int i = 0; i < n; ++i) layer[base + i * s] = sol[i];

            int d = g.dim - 1;
            for (; d >= 0; --d) {
                if (d == axis) continue;
                if (++m[d] == g.n_x) {
                    m[d] = 0;
                    continue;
                }
                break;
            }
            if (d < 0) break;
        }
    }
}

}  // namespace

Grid Grid::make(const ModelParams& params, double x_lo, double x_hi, int n_x, int n_t,
                Scheme scheme) {
    if (n_x < 5) throw ConfigError("grid needs at least 5 points per axis");
    if (!(x_hi > x_lo)) throw ConfigError("grid box is empty");
    Grid g;
    g.dim = params.n_principals;
    if (g.dim > 3)
        throw ConfigError("grids with more than 3 dimensions are not supported (documented limit)");
    g.x_lo = x_lo;
    g.x_hi = x_hi;
    g.n_x = n_x;
    g.h = (x_hi - x_lo) / (n_x - 1);
    g.horizon = params.horizon;
    g.scheme = scheme;
    g.n_nodes = 1;
    for (int d = 0; d < g.dim; ++d) g.n_nodes *= static_cast<std::size_t>(n_x);

    const double lam = max_eig_ss(params);
    const double margin = 3.0 * std::sqrt(params.horizon * lam);
    for (int d = 0; d < g.dim; ++d) {
        const double lo_gap = params.x0(d) - x_lo;
        const double hi_gap = x_hi - params.x0(d);
        if (!(lo_gap > 0.0) || !(hi_gap > 0.0))
            throw ConfigError("x0 must lie strictly inside the grid box");
        if (std::min(lo_gap, hi_gap) < margin - 1e-9)
            throw ConfigError(
                "x0 is too close to the grid boundary: need a margin of 3 sqrt(T max-eig) = " +
                std::to_string(margin));
    }

    const double cfl = g.h * g.h / (2.0 * g.dim * lam);
    const double cross = cross_coupling(params.sigma_sigma_t());
    if (scheme == Scheme::Explicit) {
        if (n_t <= 0) {
            g.n_t = static_cast<int>(std::ceil(params.horizon / cfl));
        } else {
            g.n_t = n_t;
            if (params.horizon / n_t > cfl * (1.0 + 1e-12))
                throw ConfigError("explicit scheme: dt violates the stability bound h^2/(2 N "
                                  "max-eig); increase n_t");
        }
    } else {
        const double cross_bound =
            cross > 0.0 ? g.h * g.h / (2.0 * cross) : std::numeric_limits<double>::infinity();
        if (n_t <= 0) {
            const double dt_target = std::min(g.h, cross_bound);
            g.n_t = static_cast<int>(std::ceil(params.horizon / dt_target));
        } else {
            g.n_t = n_t;
            if (params.horizon / n_t > cross_bound * (1.0 + 1e-12))
                throw ConfigError("semi-implicit scheme: dt violates the explicit cross-term "
                                  "bound; increase n_t");
        }
    }
    g.dt = params.horizon / g.n_t;
    return g;
}

Vector Grid::coords(std::size_t node) const {
    Vector x(dim);
    std::vector<int> m(dim);
    unravel(node, m);
    for (int d = 0; d < dim; ++d) x(d) = coord(m[d]);
    return x;
}

std::size_t Grid::index(std::span<const int> multi) const {
    std::size_t idx = 0;
    for (int d = 0; d < dim; ++d) idx = idx * static_cast<std::size_t>(n_x) + multi[d];
    return idx;
}

void Grid::unravel(std::size_t node, std::span<int> multi) const {
    for (int d = dim - 1; d >= 0; --d) {
        multi[d] = static_cast<int>(node % n_x);
        node /= static_cast<std::size_t>(n_x);
    }
}

bool Grid::is_interior(std::size_t node) const {
    std::vector<int> m(dim);
    unravel(node, m);
    for (int d = 0; d < dim; ++d)
        if (m[d] == 0 || m[d] == n_x - 1) return false;
    return true;
}

Terminal Terminal::affine(const Vector& gradient, double offset) {
    Terminal t;
    t.affine_gradient = gradient;
    t.value = [gradient, offset](const Vector& x) { return gradient.dot(x) + offset; };
    return t;
}

Terminal Terminal::general(std::function<double(const Vector&)> f) {
    Terminal t;
    t.value = std::move(f);
    return t;
}

Terminal Terminal::liquidation_of(const ModelParams& params, int i) {
    return affine(liquidation_gradient(params, i));
}

Terminal Terminal::aggregate_of(const ModelParams& params) {
    return affine(aggregate_gradient(params));
}

Vector phi(double t, const Vector& x, const Vector& beta_bar, const DriftCostSpec& spec,
           const ModelParams& params) {
    return PointwiseOps(spec, params).phi(t, x, beta_bar);
}

Vector phi_inverse(double t, const Vector& x, const Vector& z, const DriftCostSpec& spec,
                   const ModelParams& params) {
    PointwiseOps ops(spec, params);
    const Vector w = ops.phi_inverse(t, x, z);
    if (!spec.is_lq()) {
        const double res = (w + ops.phi(t, x, w) - z).norm();
        if (res > kNewtonTol * std::max(1.0, z.norm()))
            throw NoConvergence("phi_inverse: residual above tolerance", res);
    }
    return w;
}

double hamiltonian_H(double t, const Vector& x, const Vector& z, const DriftCostSpec& spec,
                     const ModelParams& params) {
    return PointwiseOps(spec, params).hamiltonian(t, x, z);
}

AggregatedSolution solve_aggregated(const Grid& grid, const DriftCostSpec& spec,
                                    const ModelParams& params, const Terminal& terminal) {
    PointwiseOps ops(spec, params);
    const Matrix ss = params.sigma_sigma_t();

    AggregatedSolution out;
    out.V = TimeField(grid.n_t + 1, grid.n_nodes);
    out.source = TimeField(grid.n_t + 1, grid.n_nodes);

    // Terminal layer.
    for (std::size_t node = 0; node < grid.n_nodes; ++node)
        out.V.at(grid.n_t, node) = terminal.value(grid.coords(node));

    PaddedLayer pad(grid);
    std::vector<int> multi(grid.dim);
    for (int k = grid.n_t - 1; k >= 0; --k) {
        const int next = k + 1;
        const double t_next = grid.time(next);
        pad.fill(out.V.layer(next));
        auto vnext = out.V.layer(next);
        auto vcur = out.V.layer(k);
        auto src = out.source.layer(next);
        for (std::size_t node = 0; node < grid.n_nodes; ++node) {
            grid.unravel(node, multi);
            const std::size_t pidx = pad.padded_node(multi);
            const bool explicit_diffusion = grid.scheme == Scheme::Explicit;
            const auto der = node_derivatives(grid, pad, pidx, ss, explicit_diffusion);
            const double hval = ops.hamiltonian(t_next, grid.coords(node), der.grad);
            src[node] = hval;
            if (explicit_diffusion) {
                vcur[node] = vnext[node] + grid.dt * (der.diffusion + hval);
            } else {
                // Cross terms stay explicit; diagonal diffusion is applied
                // implicitly below.
                double cross_term = 0.0;
                for (int d1 = 0; d1 < grid.dim; ++d1)
                    for (int d2 = d1 + 1; d2 < grid.dim; ++d2) {
                        const std::size_t s1 = pad.stride(d1), s2 = pad.stride(d2);
                        const double cr =
                            (pad.value(pidx + s1 + s2) - pad.value(pidx + s1 - s2) -
                             pad.value(pidx - s1 + s2) + pad.value(pidx - s1 - s2)) /
                            (4.0 * grid.h * grid.h);
                        cross_term += ss(d1, d2) * cr;
                    }
                vcur[node] = vnext[node] + grid.dt * (cross_term + hval);
            }
        }
        if (grid.scheme == Scheme::SemiImplicit)
            implicit_diagonal_sweeps(grid, ss, grid.dt, vcur);
        check_finite_layer(vcur, "aggregated solve");
    }
    // Source at the initial layer, for completeness of the cache.
    pad.fill(out.V.layer(0));
    for (std::size_t node = 0; node < grid.n_nodes; ++node) {
        grid.unravel(node, multi);
        const auto der = node_derivatives(grid, pad, pad.padded_node(multi), ss, false);
        out.source.at(0, node) = ops.hamiltonian(0.0, grid.coords(node), der.grad);
    }

    // Crank-Nicolson-centered interior residual on a sample of layers: an
    // O(dt) diagnostic of the time discretization.
    const int stride = std::max(1, grid.n_t / 32);
    PaddedLayer pad2(grid);
    double max_res = 0.0;
    for (int k = 0; k < grid.n_t; k += stride) {
        pad.fill(out.V.layer(k));
        pad2.fill(out.V.layer(k + 1));
        for (std::size_t node = 0; node < grid.n_nodes; ++node) {
            if (!grid.is_interior(node)) continue;
            grid.unravel(node, multi);
            const std::size_t pidx = pad.padded_node(multi);
            const auto d0 = node_derivatives(grid, pad, pidx, ss, true);
            const auto d1 = node_derivatives(grid, pad2, pidx, ss, true);
            const double op0 = d0.diffusion + out.source.at(k, node);
            const double op1 = d1.diffusion + out.source.at(k + 1, node);
            const double r =
                (out.V.at(k + 1, node) - out.V.at(k, node)) / grid.dt + 0.5 * (op0 + op1);
            max_res = std::max(max_res, std::abs(r));
        }
    }
    out.max_interior_residual = max_res;
    return out;
}

TimeField solve_linear(const Grid& grid, const ModelParams& params, const Terminal& terminal,
                       const TimeField* source, double source_scale) {
    const Matrix ss = params.sigma_sigma_t();
    TimeField u(grid.n_t + 1, grid.n_nodes);
    for (std::size_t node = 0; node < grid.n_nodes; ++node)
        u.at(grid.n_t, node) = terminal.value(grid.coords(node));

    PaddedLayer pad(grid);
    std::vector<int> multi(grid.dim);
    for (int k = grid.n_t - 1; k >= 0; --k) {
        const int next = k + 1;
        pad.fill(u.layer(next));
        auto unext = u.layer(next);
        auto ucur = u.layer(k);
        for (std::size_t node = 0; node < grid.n_nodes; ++node) {
            grid.unravel(node, multi);
            const std::size_t pidx = pad.padded_node(multi);
            const double s = source ? source_scale * source->at(next, node) : 0.0;
            if (grid.scheme == Scheme::Explicit) {
                const auto der = node_derivatives(grid, pad, pidx, ss, true);
                ucur[node] = unext[node] + grid.dt * (der.diffusion + s);
            } else {
                double cross_term = 0.0;
                for (int d1 = 0; d1 < grid.dim; ++d1)
                    for (int d2 = d1 + 1; d2 < grid.dim; ++d2) {
                        const std::size_t s1 = pad.stride(d1), s2 = pad.stride(d2);
                        const double cr =
                            (pad.value(pidx + s1 + s2) - pad.value(pidx + s1 - s2) -
                             pad.value(pidx - s1 + s2) + pad.value(pidx - s1 - s2)) /
                            (4.0 * grid.h * grid.h);
                        cross_term += ss(d1, d2) * cr;
                    }
                ucur[node] = unext[node] + grid.dt * (cross_term + s);
            }
        }
        if (grid.scheme == Scheme::SemiImplicit)
            implicit_diagonal_sweeps(grid, ss, grid.dt, ucur);
        check_finite_layer(ucur, "linear solve");
    }
    return u;
}

std::vector<TimeField> solve_components(const Grid& grid, const DriftCostSpec& spec,
                                        const ModelParams& params, const AggregatedSolution& agg,
                                        const std::vector<Terminal>& terminals, int threads) {
    (void)spec;
    const int n = params.n_principals;
    if (static_cast<int>(terminals.size()) != n)
        throw ConfigError("solve_components expects one terminal per principal");
    if (agg.V.n_layers != grid.n_t + 1 || agg.V.n_nodes != grid.n_nodes)
        throw ConfigError("aggregated solution does not match the grid");

    // The terminals must sum to the aggregated terminal.
    const std::size_t check = std::min<std::size_t>(grid.n_nodes, 64);
    const std::size_t step = std::max<std::size_t>(1, grid.n_nodes / check);
    for (std::size_t node = 0; node < grid.n_nodes; node += step) {
        const Vector x = grid.coords(node);
        double sum = 0.0;
        for (const auto& term : terminals) sum += term.value(x);
        const double ref = agg.V.at(grid.n_t, node);
        if (std::abs(sum - ref) > 1e-8 * std::max(1.0, std::abs(ref)))
            throw ConfigError("component terminals do not sum to the aggregated terminal");
    }

    std::vector<TimeField> out(n);
    const double scale = 1.0 / n;
    auto run = [&](int i) { out[i] = solve_linear(grid, params, terminals[i], &agg.source, scale); };
    if (threads != 1 && n > 1) {
        std::vector<std::thread> pool;
        pool.reserve(n);
        for (int i = 0; i < n; ++i) pool.emplace_back(run, i);
        for (auto& th : pool) th.join();
    } else {
        for (int i = 0; i < n; ++i) run(i);
    }
    return out;
}

GridSolution solve_all(const Grid& grid, const DriftCostSpec& spec, const ModelParams& params,
                       const std::vector<Terminal>& terminals, int threads) {
    GridSolution sol;
    sol.grid = grid;

    const int n = params.n_principals;
    if (static_cast<int>(terminals.size()) != n)
        throw ConfigError("solve_all expects one terminal per principal");
    Terminal total = Terminal::general([terminals](const Vector& x) {
        double s = 0.0;
        for (const auto& t : terminals) s += t.value(x);
        return s;
    });

    AggregatedSolution agg = solve_aggregated(grid, spec, params, total);
    sol.v_residual = agg.max_interior_residual;
    sol.u_tilde = solve_components(grid, spec, params, agg, terminals, threads);
    sol.V = std::move(agg.V);
    sol.source = std::move(agg.source);

    double gap = 0.0;
    for (int k = 0; k <= grid.n_t; ++k) {
        for (std::size_t node = 0; node < grid.n_nodes; ++node) {
            double s = 0.0;
            for (const auto& u : sol.u_tilde) s += u.at(k, node);
            gap = std::max(gap, std::abs(s - sol.V.at(k, node)));
        }
    }
    sol.decomposition_gap = gap;
    return sol;
}

void gradient_layer(const Grid& grid, std::span<const double> values, std::span<double> out) {
    if (values.size() != grid.n_nodes || out.size() != grid.n_nodes * grid.dim)
        throw ConfigError("gradient_layer: size mismatch");
    PaddedLayer pad(grid);
    pad.fill(values);
    std::vector<int> multi(grid.dim);
    for (std::size_t node = 0; node < grid.n_nodes; ++node) {
        grid.unravel(node, multi);
        const std::size_t pidx = pad.padded_node(multi);
        for (int d = 0; d < grid.dim; ++d) {
            const std::size_t s = pad.stride(d);
            out[node * grid.dim + d] =
                (pad.value(pidx + s) - pad.value(pidx - s)) / (2.0 * grid.h);
        }
    }
}

BetaFields construct_betas(const GridSolution& sol, const DriftCostSpec& spec,
                           const ModelParams& params) {
    const Grid& grid = sol.grid;
    const int n = params.n_principals;
    PointwiseOps ops(spec, params);

    BetaFields out;
    out.grad_V = VectorTimeField(grid.n_t + 1, grid.n_nodes, grid.dim);
    out.beta_bar = VectorTimeField(grid.n_t + 1, grid.n_nodes, grid.dim);
    out.beta_i.assign(n, VectorTimeField(grid.n_t + 1, grid.n_nodes, grid.dim));

    std::vector<double> gv(grid.n_nodes * grid.dim);
    std::vector<std::vector<double>> gu(n, std::vector<double>(grid.n_nodes * grid.dim));
    for (int k = 0; k <= grid.n_t; ++k) {
        const double t = grid.time(k);
        gradient_layer(grid, sol.V.layer(k), gv);
        for (int i = 0; i < n; ++i) gradient_layer(grid, sol.u_tilde[i].layer(k), gu[i]);
        for (std::size_t node = 0; node < grid.n_nodes; ++node) {
            const Vector x = grid.coords(node);
            Vector grad(grid.dim);
            for (int d = 0; d < grid.dim; ++d) grad(d) = gv[node * grid.dim + d];
            const Vector bb = ops.phi_inverse(t, x, grad);
            const Vector corr = ops.phi(t, x, bb) / n;
            Vector beta_sum = Vector::Zero(grid.dim);
            for (int d = 0; d < grid.dim; ++d) {
                out.grad_V.at(k, node, d) = grad(d);
                out.beta_bar.at(k, node, d) = bb(d);
            }
            for (int i = 0; i < n; ++i) {
                for (int d = 0; d < grid.dim; ++d) {
                    const double bi = gu[i][node * grid.dim + d] - corr(d);
                    out.beta_i[i].at(k, node, d) = bi;
                    beta_sum(d) += bi;
                    // FOC residual is zero by construction; recompute from the
                    // stored values to catch plumbing mistakes.
                    out.foc_residual = std::max(
                        out.foc_residual, std::abs(bi - gu[i][node * grid.dim + d] + corr(d)));
                }
            }
            if (grid.is_interior(node))
                out.sum_residual =
                    std::max(out.sum_residual, (beta_sum - bb).cwiseAbs().maxCoeff());
        }
    }
    return out;
}

const char* const kGridSchema = "agency.grid.v1";

void export_csv(std::ostream& os, const GridSolution& sol, const BetaFields& betas,
                int layer_stride) {
    const Grid& grid = sol.grid;
    const int n = static_cast<int>(sol.u_tilde.size());
    CsvWriter csv(os, kGridSchema);
    std::vector<std::string> cols = {"t"};
    for (int d = 0; d < grid.dim; ++d) cols.push_back("x" + std::to_string(d + 1));
    cols.push_back("V");
    for (int i = 0; i < n; ++i) cols.push_back("u_tilde_" + std::to_string(i + 1));
    for (int d = 0; d < grid.dim; ++d) cols.push_back("grad_V_" + std::to_string(d + 1));
    for (int d = 0; d < grid.dim; ++d) cols.push_back("beta_bar_" + std::to_string(d + 1));
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < grid.dim; ++d)
            cols.push_back("beta_" + std::to_string(i + 1) + "_" + std::to_string(d + 1));
    csv.header(cols);

    const int stride = layer_stride > 0 ? layer_stride : std::max(1, grid.n_t / 10);
    std::vector<double> row;
    for (int k = 0; k <= grid.n_t; k += (k + stride <= grid.n_t ? stride : std::max(1, grid.n_t - k))) {
        for (std::size_t node = 0; node < grid.n_nodes; ++node) {
            row.clear();
            row.push_back(grid.time(k));
            const Vector x = grid.coords(node);
            for (int d = 0; d < grid.dim; ++d) row.push_back(x(d));
            row.push_back(sol.V.at(k, node));
            for (int i = 0; i < n; ++i) row.push_back(sol.u_tilde[i].at(k, node));
            for (int d = 0; d < grid.dim; ++d) row.push_back(betas.grad_V.at(k, node, d));
            for (int d = 0; d < grid.dim; ++d) row.push_back(betas.beta_bar.at(k, node, d));
            for (int i = 0; i < n; ++i)
                for (int d = 0; d < grid.dim; ++d) row.push_back(betas.beta_i[i].at(k, node, d));
            csv.row(row);
        }
        if (k == grid.n_t) break;
    }
}

namespace {

// Multilinear interpolation of one layer.
double interp_layer(const Grid& grid, std::span<const double> layer, const Vector& x) {
    std::vector<int> base(grid.dim);
    std::vector<double> frac(grid.dim);
    for (int d = 0; d < grid.dim; ++d) {
        const double clamped = std::clamp(x(d), grid.x_lo, grid.x_hi);
        double cell = (clamped - grid.x_lo) / grid.h;
        int idx = static_cast<int>(std::floor(cell));
        idx = std::clamp(idx, 0, grid.n_x - 2);
        base[d] = idx;
        frac[d] = std::clamp(cell - idx, 0.0, 1.0);
    }
    const int corners = 1 << grid.dim;
    double acc = 0.0;
    std::vector<int> multi(grid.dim);
    for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        for (int d = 0; d < grid.dim; ++d) {
            const bool hi = (c >> d) & 1;
            multi[d] = base[d] + (hi ? 1 : 0);
            w *= hi ? frac[d] : 1.0 - frac[d];
        }
        acc += w * layer[grid.index(multi)];
    }
    return acc;
}

}  // namespace

double interpolate(const Grid& grid, const TimeField& field, double t, const Vector& x) {
    const double tc = std::clamp(t, 0.0, grid.horizon);
    const double pos = tc / grid.dt;
    int k = std::clamp(static_cast<int>(std::floor(pos)), 0, grid.n_t - 1);
    const double w = std::clamp(pos - k, 0.0, 1.0);
    const double lo = interp_layer(grid, field.layer(k), x);
    const double hi = interp_layer(grid, field.layer(k + 1), x);
    return (1.0 - w) * lo + w * hi;
}

Policy vector_policy(const Grid& grid, const VectorTimeField& field) {
    auto shared = std::make_shared<VectorTimeField>(field);
    Grid g = grid;
    return Policy::feedback([g, shared](double t, const Vector& x) -> Vector {
        const double tc = std::clamp(t, 0.0, g.horizon);
        const double pos = tc / g.dt;
        int k = std::clamp(static_cast<int>(std::floor(pos)), 0, g.n_t - 1);
        const double wt = std::clamp(pos - k, 0.0, 1.0);

        std::vector<int> base(g.dim);
        std::vector<double> frac(g.dim);
        for (int d = 0; d < g.dim; ++d) {
            const double clamped = std::clamp(x(d), g.x_lo, g.x_hi);
            double cell = (clamped - g.x_lo) / g.h;
            int idx = std::clamp(static_cast<int>(std::floor(cell)), 0, g.n_x - 2);
            base[d] = idx;
            frac[d] = std::clamp(cell - idx, 0.0, 1.0);
        }
        Vector out = Vector::Zero(g.dim);
        const int corners = 1 << g.dim;
        std::vector<int> multi(g.dim);
        for (int c = 0; c < corners; ++c) {
            double w = 1.0;
            for (int d = 0; d < g.dim; ++d) {
                const bool hi = (c >> d) & 1;
                multi[d] = base[d] + (hi ? 1 : 0);
                w *= hi ? frac[d] : 1.0 - frac[d];
            }
            const std::size_t node = g.index(multi);
            for (int d = 0; d < g.dim; ++d)
                out(d) += w * ((1.0 - wt) * shared->at(k, node, d) + wt * shared->at(k + 1, node, d));
        }
        return out;
    });
}

ScalarPolicy scalar_policy(const Grid& grid, const TimeField& field) {
    auto shared = std::make_shared<TimeField>(field);
    Grid g = grid;
    return ScalarPolicy::feedback(
        [g, shared](double t, const Vector& x) { return interpolate(g, *shared, t, x); });
}

}  // namespace agency::hjb
