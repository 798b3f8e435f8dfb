#ifndef AGENCY_LQ_HPP
#define AGENCY_LQ_HPP

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "agency/model.hpp"
#include "json.hpp"

namespace agency::lq {

using Vector2 = Eigen::Vector2d;
using Matrix2 = Eigen::Matrix2d;

// Bi-principal linear-quadratic model. Sigma is either built from a
// correlation rho as [[1,0],[rho,sqrt(1-rho^2)]] or given explicitly.
struct LQParams {
    double k1 = 1.0, k2 = 1.0;            // diagonal of K, > 0
    std::optional<double> rho;            // correlation in (-1, 1)
    std::optional<Matrix2> sigma;         // explicit alternative to rho
    double gamma1 = 0.0, gamma2 = 0.0;    // appetence in [0,1]
    double risk_aversion = 1.0;           // R_A >= 0
    double reservation_utility = -1.0;    // R_0 < 0
    double horizon = 1.0;                 // T
    Vector2 x0 = Vector2::Zero();
    double y_share = 0.5;                 // principal 1's share of the initial transfer
    double alpha_share = 0.5;             // principal 1's share of the drift rate

    void validate() const;
    Matrix2 Sigma() const;
    Matrix2 K() const { return Vector2(k1, k2).asDiagonal(); }
    Vector2 Gamma() const { return Vector2(1.0 + gamma1 - gamma2, 1.0 + gamma2 - gamma1); }

    ModelParams to_model_params() const;
    DriftCostSpec to_spec() const;
};

// Every closed-form quantity of the bi-principal model.
struct LQSolution {
    Matrix2 m;               // (I + 2 K^-2 R_A Sigma Sigma^T)^-1
    Matrix2 ma;              // (R_A Sigma Sigma^T + K^2)^-1 K^2
    Vector2 nu_star;         // K M Gamma
    Vector2 nu_aggregated;   // K Ma Gamma
    Vector2 nu_first_best;   // K Gamma
    Vector2 beta1, beta2;    // constant equilibrium sensitivities
    double lambda = 0.0;
    double lambda_tilde = 0.0;
    double delta = 0.0;      // non-risk remuneration rate, competitive
    double delta_a = 0.0;    // ... aggregated benchmark
    std::pair<double, double> y_split{0.0, 0.0};   // NaN when R_A = 0
    double alpha_rate = 0.0;                        // common alpha under an equal split
    double r0 = 0.0;                                // NaN when R_A = 0
};

// 2x2 inversion by the adjugate formula; throws SingularMatrix when the
// determinant is below threshold.
Matrix2 invert2x2(const Matrix2& a, const std::string& label);

LQSolution solve(const LQParams& params);

double value_V(double t, const Vector2& x, const LQSolution& sol, const LQParams& params);
double value_vi(int i, double t, const Vector2& x, const LQSolution& sol, const LQParams& params);

// Residuals of the two coupled value-function equations at (t,x), evaluated
// with the closed forms (all derivatives analytic). Zero for a correct
// solution.
std::pair<double, double> hjb_residuals(double t, const Vector2& x, const LQSolution& sol,
                                        const LQParams& params);

struct FirstBest {
    Vector2 effort;                      // K Gamma
    std::optional<double> total_wage;    // T|K Gamma|^2/2 - ln(-R0)/R_A; empty when R_A = 0
};
FirstBest first_best(const LQParams& params);

// The matrix route K M Gamma (authoritative) next to the printed per-component
// rational expressions; max_discrepancy records their largest absolute gap.
struct CorrelatedEfforts {
    Vector2 nu_matrix;
    Vector2 nu_printed;
    double max_discrepancy = 0.0;
};
CorrelatedEfforts effort_components_correlated(const LQParams& params);

// d(rho) = (nu1 - nu2)/(nu1 + nu2) for equal efficiencies, in the printed
// closed form; requires k1 == k2 and rho in [-1, 1).
double proportion_gap(double rho, const LQParams& params);

struct Dominance {
    bool works_more_for_1 = false;
    double threshold = 0.0;   // f(gamma2 - gamma1), +inf in the degenerate case
    bool degenerate = false;  // gamma2 - gamma1 == 1: condition never satisfied
};
// Risk-neutral agent comparison (requires R_A = 0 and Sigma = I).
Dominance dominance_condition(const LQParams& params);

// Flat serialization. Column names are a frozen schema.
extern const char* const kRecordSchema;
const std::vector<std::string>& record_columns();
std::vector<double> record_values(const LQSolution& sol);
nlohmann::json to_json(const LQSolution& sol);

}  // namespace agency::lq

#endif  // AGENCY_LQ_HPP
