#include "agency/lq.hpp"

#include <cmath>
#include <limits>

namespace agency::lq {

namespace {
constexpr double kDetThreshold = 1e-12;
constexpr double kRhoMargin = 1e-9;
}  // namespace

void LQParams::validate() const {
    if (!(k1 > 0.0) || !(k2 > 0.0)) throw ConfigError("efficiencies k1, k2 must be > 0");
    if (rho.has_value() == sigma.has_value())
        throw ConfigError("exactly one of rho or an explicit sigma must be given");
    if (rho && !(std::abs(*rho) <= 1.0 - kRhoMargin))
        throw ConfigError("rho must satisfy |rho| <= 1 - 1e-9; at |rho| = 1 the volatility is singular");
    if (gamma1 < 0.0 || gamma1 > 1.0 || gamma2 < 0.0 || gamma2 > 1.0)
        throw ConfigError("appetence parameters must lie in [0,1]");
    if (!(risk_aversion >= 0.0)) throw ConfigError("risk_aversion must be >= 0");
    if (!(reservation_utility < 0.0)) throw ConfigError("reservation_utility must be < 0");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be > 0");
    if (y_share < 0.0 || y_share > 1.0 || alpha_share < 0.0 || alpha_share > 1.0)
        throw ConfigError("y_share and alpha_share must lie in [0,1]");
    const Vector2 g = Gamma();
    if (g(0) < 0.0 || g(0) > 2.0 || g(1) < 0.0 || g(1) > 2.0 || std::abs(g.sum() - 2.0) > 1e-12)
        throw ConfigError("appetence vector is inconsistent");  // unreachable for valid gammas
    if (sigma) {
        ModelParams mp = to_model_params();
        mp.validate();  // rejects a singular explicit sigma
    }
}

Matrix2 LQParams::Sigma() const {
    if (sigma) return *sigma;
    Matrix2 s;
    s << 1.0, 0.0, *rho, std::sqrt(1.0 - *rho * *rho);
    return s;
}

ModelParams LQParams::to_model_params() const {
    ModelParams mp;
    mp.n_principals = 2;
    mp.horizon = horizon;
    mp.x0 = x0;
    mp.sigma = Sigma();
    mp.risk_aversion = risk_aversion;
    mp.reservation_utility = reservation_utility;
    mp.appetence = Vector2(gamma1, gamma2);
    return mp;
}

DriftCostSpec LQParams::to_spec() const {
    return DriftCostSpec::linear_quadratic(Vector2(k1, k2));
}

Matrix2 invert2x2(const Matrix2& a, const std::string& label) {
    const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    const double scale = a.cwiseAbs().maxCoeff();
    if (!(std::abs(det) > kDetThreshold * std::max(1.0, scale * scale)))
        throw SingularMatrix(label + " is numerically singular (det = " + std::to_string(det) + ")");
    Matrix2 inv;
    inv << a(1, 1), -a(0, 1), -a(1, 0), a(0, 0);
    return inv / det;
}

LQSolution solve(const LQParams& params) {
    params.validate();
    const Matrix2 K = params.K();
    const Matrix2 K2 = K * K;
    const Matrix2 K2inv = invert2x2(K2, "K^2");
    const Matrix2 SS = params.Sigma() * params.Sigma().transpose();
    const double ra = params.risk_aversion;
    const Vector2 gamma = params.Gamma();

    LQSolution sol;
    if (ra == 0.0) {
        // Exact risk-neutral limit: both inversions collapse to the identity.
        sol.m = Matrix2::Identity();
        sol.ma = Matrix2::Identity();
    } else {
        sol.m = invert2x2(Matrix2(Matrix2::Identity() + 2.0 * ra * K2inv * SS),
                          "I + 2 K^-2 R_A Sigma Sigma^T");
        sol.ma = invert2x2(Matrix2(ra * SS + K2), "R_A Sigma Sigma^T + K^2") * K2;
    }

    const Vector2 mg = sol.m * gamma;
    sol.nu_star = K * mg;
    sol.nu_aggregated = K * (sol.ma * gamma);
    sol.nu_first_best = K * gamma;

    const double s_norm2 = (params.Sigma().transpose() * mg).squaredNorm();
    const double q_norm2 = (K * mg).squaredNorm();
    const double a_term = gamma.dot(K2 * mg);
    sol.lambda = a_term - 0.5 * ra * s_norm2 - 0.5 * q_norm2;
    sol.lambda_tilde = a_term - 1.25 * ra * s_norm2 - 0.75 * q_norm2;
    sol.delta = 0.5 * ra * s_norm2 + 0.5 * q_norm2;

    const Vector2 mag = sol.ma * gamma;
    sol.delta_a = 0.5 * ra * (params.Sigma().transpose() * mag).squaredNorm() +
                  0.5 * (K * mag).squaredNorm();

    const Vector2 common = K2inv * (ra * (SS * mg));
    sol.beta1 = Vector2(1.0 + params.gamma1, -params.gamma1) - common;
    sol.beta2 = Vector2(-params.gamma2, 1.0 + params.gamma2) - common;

    // G is constant in (t,x) for this model.
    const double g_rate = 0.5 * ra * s_norm2 - 0.5 * q_norm2;
    sol.alpha_rate = 0.5 * g_rate;

    if (ra > 0.0) {
        sol.r0 = -std::log(-params.reservation_utility) / ra;
        sol.y_split = {params.y_share * sol.r0, (1.0 - params.y_share) * sol.r0};
    } else {
        // The certainty-equivalent wage is undefined for a risk-neutral agent.
        sol.r0 = std::numeric_limits<double>::quiet_NaN();
        sol.y_split = {sol.r0, sol.r0};
    }
    return sol;
}

double value_V(double t, const Vector2& x, const LQSolution& sol, const LQParams& params) {
    if (t < 0.0 || t > params.horizon) throw ConfigError("value_V: t must lie in [0, T]");
    return x.dot(params.Gamma()) + sol.lambda * (params.horizon - t);
}

double value_vi(int i, double t, const Vector2& x, const LQSolution& sol, const LQParams& params) {
    if (t < 0.0 || t > params.horizon) throw ConfigError("value_vi: t must lie in [0, T]");
    if (i != 1 && i != 2) throw ConfigError("value_vi: principal index must be 1 or 2");
    const double tail = sol.lambda_tilde * (params.horizon - t);
    if (i == 1) return tail + (1.0 + params.gamma1) * x(0) - params.gamma1 * x(1);
    return tail - params.gamma2 * x(0) + (1.0 + params.gamma2) * x(1);
}

std::pair<double, double> hjb_residuals(double t, const Vector2& x, const LQSolution& sol,
                                        const LQParams& params) {
    (void)x;
    if (t < 0.0 || t > params.horizon) throw ConfigError("hjb_residuals: t must lie in [0, T]");
    const Matrix2 K2 = params.K() * params.K();
    const Matrix2 SigmaT = params.Sigma().transpose();
    const double ra = params.risk_aversion;
    const Vector2 bsum = sol.beta1 + sol.beta2;
    const double s_norm2 = (SigmaT * bsum).squaredNorm();
    const double q_norm2 = (params.K() * bsum).squaredNorm();

    const Vector2 grad_v1(1.0 + params.gamma1, -params.gamma1);
    const Vector2 grad_v2(-params.gamma2, 1.0 + params.gamma2);
    // -d_t v^i = lambda_tilde; second derivatives vanish; alpha of the other
    // principal enters with an equal split.
    const double alpha_other = sol.alpha_rate;
    const double r1 = sol.lambda_tilde - grad_v1.dot(K2 * bsum) + 0.5 * ra * s_norm2 -
                      0.5 * q_norm2 - alpha_other + (K2 * bsum).dot(sol.beta1);
    const double r2 = sol.lambda_tilde - grad_v2.dot(K2 * bsum) + 0.5 * ra * s_norm2 -
                      0.5 * q_norm2 - alpha_other + (K2 * bsum).dot(sol.beta2);
    return {r1, r2};
}

FirstBest first_best(const LQParams& params) {
    params.validate();
    FirstBest fb;
    fb.effort = params.K() * params.Gamma();
    if (params.risk_aversion > 0.0) {
        // Participation binds: wage = r0 + T |K Gamma|^2 / 2.
        fb.total_wage = 0.5 * params.horizon * fb.effort.squaredNorm() -
                        std::log(-params.reservation_utility) / params.risk_aversion;
    }
    return fb;
}

CorrelatedEfforts effort_components_correlated(const LQParams& params) {
    params.validate();
    if (!params.rho) throw ConfigError("effort_components_correlated requires the rho form of sigma");
    const double rho = *params.rho;
    const double ra = params.risk_aversion;
    const double k1 = params.k1, k2 = params.k2;
    const double g12 = 1.0 + params.gamma1 - params.gamma2;
    const double g21 = 1.0 + params.gamma2 - params.gamma1;

    CorrelatedEfforts out;
    out.nu_matrix = solve(params).nu_star;

    // Printed per-component expressions, kept verbatim behind this comparison
    // flag; the matrix route is authoritative.
    const double den =
        2.0 * ra * ra * (rho * rho - 1.0) - 2.0 * ra * (k1 * k1 + k2 * k2) - k1 * k1 * k2 * k2;
    const double n1 =
        2.0 * ra * k1 * (g21 * k2 * k2 * rho - g12 * k1 * k1) - k1 * k1 * k1 * k2 * k2 * g12;
    const double n2 =
        2.0 * ra * k2 * (g12 * k1 * k1 * rho - g21 * k2 * k2) - k1 * k1 * k2 * k2 * k2 * g21;
    out.nu_printed = Vector2(n1 / den, n2 / den);
    out.max_discrepancy = (out.nu_matrix - out.nu_printed).cwiseAbs().maxCoeff();
    return out;
}

double proportion_gap(double rho, const LQParams& params) {
    params.validate();
    if (std::abs(params.k1 - params.k2) > 1e-12)
        throw ConfigError("proportion_gap requires k1 == k2");
    if (!(rho >= -1.0 && rho < 1.0)) throw ConfigError("proportion_gap requires rho in [-1, 1)");
    const double k = params.k1;
    const double k3 = k * k * k, k5 = k3 * k * k;
    const double ra = params.risk_aversion;
    const double den = 2.0 * ra * k3 * (1.0 - rho) + k5;
    if (!(std::abs(den) > 0.0)) throw Degenerate("proportion_gap: total effort vanishes");
    return (params.gamma1 - params.gamma2) * (2.0 * ra * k3 * (1.0 + rho) + k5) / den;
}

Dominance dominance_condition(const LQParams& params) {
    params.validate();
    if (params.risk_aversion != 0.0)
        throw ConfigError("dominance_condition requires a risk-neutral agent (R_A = 0)");
    const Matrix2 s = params.Sigma();
    if (!s.isApprox(Matrix2::Identity(), 1e-12))
        throw ConfigError("dominance_condition requires Sigma = I");
    Dominance d;
    const double x = params.gamma2 - params.gamma1;
    if (x >= 1.0) {
        // The agent never works for principal 1, whatever her efficiency.
        d.degenerate = true;
        d.threshold = std::numeric_limits<double>::infinity();
        d.works_more_for_1 = false;
        return d;
    }
    d.threshold = (1.0 + x) / (1.0 - x);
    d.works_more_for_1 =
        params.k1 * (1.0 + params.gamma1 - params.gamma2) > params.k2 * (1.0 + params.gamma2 - params.gamma1);
    return d;
}

const char* const kRecordSchema = "agency.lq.v1";

const std::vector<std::string>& record_columns() {
    static const std::vector<std::string> cols = {
        "m11",     "m12",     "m21",     "m22",     "ma11",         "ma12",
        "ma21",    "ma22",    "nu1",     "nu2",     "nua1",         "nua2",
        "nufb1",   "nufb2",   "lambda",  "lambda_tilde", "delta",   "delta_a",
        "beta1_1", "beta1_2", "beta2_1", "beta2_2", "y1",           "y2",
        "alpha_rate", "r0"};
    return cols;
}

std::vector<double> record_values(const LQSolution& s) {
    return {s.m(0, 0),  s.m(0, 1),  s.m(1, 0),  s.m(1, 1),  s.ma(0, 0), s.ma(0, 1),
            s.ma(1, 0), s.ma(1, 1), s.nu_star(0), s.nu_star(1), s.nu_aggregated(0),
            s.nu_aggregated(1), s.nu_first_best(0), s.nu_first_best(1), s.lambda,
            s.lambda_tilde, s.delta, s.delta_a, s.beta1(0), s.beta1(1), s.beta2(0),
            s.beta2(1), s.y_split.first, s.y_split.second, s.alpha_rate, s.r0};
}

nlohmann::json to_json(const LQSolution& sol) {
    nlohmann::json j;
    j["schema"] = kRecordSchema;
    const auto& cols = record_columns();
    const auto vals = record_values(sol);
    for (std::size_t i = 0; i < cols.size(); ++i) j[cols[i]] = vals[i];
    return j;
}

}  // namespace agency::lq
