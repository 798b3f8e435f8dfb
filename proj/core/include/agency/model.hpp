#ifndef AGENCY_MODEL_HPP
#define AGENCY_MODEL_HPP

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "agency/errors.hpp"

namespace agency {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Full problem specification shared by every solver. Immutable after
// validate(); all operations on it are pure functions.
struct ModelParams {
    int n_principals = 2;
    double horizon = 1.0;                 // T
    Vector x0;                            // initial output, length N
    Matrix sigma;                         // N x N volatility
    double risk_aversion = 1.0;           // R_A >= 0
    double reservation_utility = -1.0;    // R_0 < 0
    Vector appetence;                     // gamma, entries in [0,1]
    double discount = 0.0;                // only 0 is accepted

    // Recorded by validate().
    double sigma_condition = 0.0;

    // Throws ConfigError on any violated invariant; records the condition
    // number of sigma.
    void validate();

    // Certainty-equivalent reservation wage -ln(-R_0)/R_A. Requires R_A > 0.
    double r0() const;

    Matrix sigma_sigma_t() const { return sigma * sigma.transpose(); }
};

// Drift b and effort cost c. The linear-quadratic variant (b = K nu,
// c = |nu|^2/2 with diagonal K) is distinguished because every closed form
// attaches to it; generic specs carry callables plus an effort bounding box
// for the inner maximization.
class DriftCostSpec {
public:
    using DriftFn = std::function<Vector(double, const Vector&, const Vector&)>;
    using CostFn = std::function<double(double, const Vector&, const Vector&)>;
    // (t, x, nu, z) -> gradient in nu of b(t,x,nu).z - c(t,x,nu).
    using GradFn = std::function<Vector(double, const Vector&, const Vector&, const Vector&)>;

    static DriftCostSpec linear_quadratic(const Vector& k_diag);
    static DriftCostSpec generic(DriftFn drift, CostFn cost, double effort_box_halfwidth,
                                 std::optional<GradFn> objective_gradient = std::nullopt,
                                 double m_lower = 1.0);
    // Built-in demo specs: "lq", "quartic" (b = K nu, c = |nu|^2/2 + |nu|^4/4),
    // "tanh" (b = K tanh(nu), c = |nu|^2/2).
    static DriftCostSpec named(const std::string& name, const Vector& k_diag,
                               double effort_box_halfwidth = 8.0);

    bool is_lq() const { return lq_.has_value(); }
    const Vector& k_diag() const;

    Vector drift(double t, const Vector& x, const Vector& nu) const;
    double cost(double t, const Vector& x, const Vector& nu) const;

    double effort_box() const { return effort_box_; }
    double m_lower() const { return m_lower_; }

    // Gradient of nu -> b(t,x,nu).z - c(t,x,nu), analytic when available.
    Vector objective_gradient(double t, const Vector& x, const Vector& nu, const Vector& z) const;

private:
    DriftCostSpec() = default;
    std::optional<Vector> lq_;  // diagonal of K
    DriftFn drift_;
    CostFn cost_;
    std::optional<GradFn> grad_;
    double effort_box_ = 8.0;
    double m_lower_ = 1.0;
};

// Feedback effort policy (t, x) -> nu. Constant policies are flagged so hot
// loops can skip the indirection.
struct Policy {
    std::function<Vector(double, const Vector&)> fn;
    std::optional<Vector> constant;

    static Policy constant_effort(const Vector& v) {
        Policy p;
        p.constant = v;
        p.fn = [v](double, const Vector&) { return v; };
        return p;
    }
    static Policy feedback(std::function<Vector(double, const Vector&)> f) {
        Policy p;
        p.fn = std::move(f);
        return p;
    }
    Vector operator()(double t, const Vector& x) const { return constant ? *constant : fn(t, x); }
    bool is_constant() const { return constant.has_value(); }
};

struct ScalarPolicy {
    std::function<double(double, const Vector&)> fn;
    std::optional<double> constant;

    static ScalarPolicy constant_rate(double v) {
        ScalarPolicy p;
        p.constant = v;
        p.fn = [v](double, const Vector&) { return v; };
        return p;
    }
    static ScalarPolicy feedback(std::function<double(double, const Vector&)> f) {
        ScalarPolicy p;
        p.fn = std::move(f);
        return p;
    }
    double operator()(double t, const Vector& x) const { return constant ? *constant : fn(t, x); }
    bool is_constant() const { return constant.has_value(); }
};

// Pointwise best response: argmax_nu (b(t,x,nu).z - c(t,x,nu)).
// LQ closed form is K z; generic specs run a damped multi-start Newton over
// the effort box and reject multiple maximizers.
Vector best_response(double t, const Vector& x, const Vector& z, const DriftCostSpec& spec);

// Contract drift generator:
//   G(t,x,z) = (R_A/2) |Sigma^T z|^2 - sup_nu (b(t,x,nu).z - c(t,x,nu)).
double generator_G(double t, const Vector& x, const Vector& z, const ModelParams& params,
                   const DriftCostSpec& spec);

// Liquidation payoff of principal i with the competitive appetence form:
//   ell_i(x) = x_i + gamma_i (x_i - mean of the others).
double liquidation(const ModelParams& params, int i, const Vector& x);
Vector liquidation_gradient(const ModelParams& params, int i);
// Gradient of the aggregated terminal L = sum_i ell_i.
Vector aggregate_gradient(const ModelParams& params);

// Numeric spot check of the growth bounds
//   |nu*(z)| <= C (1 + |z|^(1/m_lower)),  |G(z)| <= C (1 + |z|^2 + |z||x|).
// Fits the smallest admissible constants on the samples; evaluation failures
// are flagged (for LQ there are none).
struct GrowthReport {
    double c_best_response = 0.0;
    double c_generator = 0.0;
    double m_lower = 1.0;
    std::size_t n_samples = 0;
    std::vector<std::string> flags;
    bool ok() const { return flags.empty(); }
};

GrowthReport growth_sanity(const std::vector<Vector>& z_samples, const DriftCostSpec& spec,
                           const ModelParams& params,
                           const std::vector<Vector>& x_samples = {});

}  // namespace agency

#endif  // AGENCY_MODEL_HPP
