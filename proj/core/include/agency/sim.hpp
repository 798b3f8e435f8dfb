#ifndef AGENCY_SIM_HPP
#define AGENCY_SIM_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "agency/hjb.hpp"
#include "agency/lq.hpp"
#include "agency/model.hpp"
#include "agency/numerics.hpp"
#include "json.hpp"

namespace agency::sim {

struct SimConfig {
    std::size_t n_paths = 10000;
    double dt = 1e-3;
    std::uint64_t seed = 0;
    bool antithetic = false;
    double path_step_budget = 1e9;
    int threads = 0;  // 0 = hardware concurrency

    void validate(const ModelParams& params) const;
    int n_steps(const ModelParams& params) const;
};

// One principal's contract: an initial transfer, a drift-rate policy and a
// sensitivity policy against the output increments.
struct ContractTriple {
    double y = 0.0;
    ScalarPolicy alpha;
    Policy beta;
};

// Spot check that the contract policies are finite on a box around x0.
void validate_contract(const ContractTriple& contract, const ModelParams& params,
                       double box_halfwidth = 0.0);

// Same sampled check for a feedback effort policy.
void validate_policy(const Policy& policy, const ModelParams& params,
                     double box_halfwidth = 0.0);

// Lazy deterministic ensemble: path p is regenerated bitwise from
// (seed, path index), independent of thread scheduling.
class PathEnsemble {
public:
    PathEnsemble(ModelParams params, DriftCostSpec spec, Policy effort, SimConfig config);

    std::size_t n_paths() const { return config_.n_paths; }
    int n_steps() const { return n_steps_; }
    const SimConfig& config() const { return config_; }
    const ModelParams& params() const { return params_; }
    const DriftCostSpec& spec() const { return spec_; }
    const Policy& effort() const { return effort_; }

    // Fill X, one row per time point (n_steps+1 x N), with path p.
    void path(std::size_t p, Eigen::MatrixXd& X) const;

private:
    ModelParams params_;
    DriftCostSpec spec_;
    Policy effort_;
    SimConfig config_;
    int n_steps_ = 0;
};

// Euler-Maruyama ensemble under the feedback effort policy.
PathEnsemble simulate_paths(const ModelParams& params, const DriftCostSpec& spec,
                            const Policy& effort, const SimConfig& config);

// Left-endpoint accrual of one contract along every path; returns the
// per-path terminal values xi.
std::vector<double> accrue_contract(const PathEnsemble& ensemble, const ContractTriple& contract);

// Monte Carlo mean of -exp(-R_A (sum_i xi^i - integral of the effort cost)).
MCEstimate agent_utility(const PathEnsemble& ensemble,
                         const std::vector<ContractTriple>& contracts);

// E[ell_i(X_T) - xi^i] for principal i (0-based).
MCEstimate principal_payoff(const PathEnsemble& ensemble,
                            const std::vector<ContractTriple>& contracts, int i);

struct PolicyCheckRow {
    std::string label;
    MCEstimate utility;
    double delta = 0.0;     // mean per-path utility difference vs the base policy
    double delta_se = 0.0;  // common random numbers make this tight
};

struct BestResponseReport {
    std::vector<PolicyCheckRow> rows;  // rows[0] is the base policy
    bool violation = false;
    std::string message;
};

// The base policy nu*(., sum_i beta^i) against constant-offset perturbations
// nu* + eps e_j for eps in {+-0.05, +-0.2} (plus any extra labelled policies),
// all under common random numbers. A perturbation beating the base by more
// than 2 SE flags a violation.
BestResponseReport agent_best_response_check(
    const std::vector<ContractTriple>& contracts, const DriftCostSpec& spec,
    const ModelParams& params, const SimConfig& config,
    const std::vector<std::pair<std::string, Policy>>& extra_policies = {});

void require_no_violation(const BestResponseReport& report);

struct Deviation {
    enum class Kind { BetaOffset, FreeRider };
    int principal = 0;  // 0-based
    Kind kind = Kind::BetaOffset;
    Vector beta_offset;  // added to the equilibrium beta^i (BetaOffset only)
    std::string label;

    static Deviation beta(int principal, const Vector& offset);
    static Deviation free_rider(int principal);
};

struct DeviationRow {
    std::string label;
    int principal = 0;
    double payoff = 0.0;
    double payoff_se = 0.0;
    double delta = 0.0;     // payoff - equilibrium payoff, per-path differences
    double delta_se = 0.0;
    double agent_utility = 0.0;  // realized agent utility under the deviation
};

struct DeviationTable {
    double equilibrium_payoff = 0.0;  // per deviating principal, filled per row set
    std::vector<DeviationRow> rows;
    bool violation = false;
    std::string message;
};

// For each deviation: replace (alpha^i, beta^i), re-solve the agent response
// nu*(., sum beta) pointwise, re-balance the deviator's wage level so
// participation stays binding, and estimate the payoff delta under common
// random numbers. A delta above +2 SE flags a Nash violation.
DeviationTable nash_deviation_check(const std::vector<ContractTriple>& equilibrium,
                                    const std::vector<Deviation>& deviations,
                                    const DriftCostSpec& spec, const ModelParams& params,
                                    const SimConfig& config);

void require_no_violation(const DeviationTable& table);

// Default deviation family: per-coordinate and per-coordinate-pair constant
// offsets with the given magnitudes, plus the free-rider deviation.
std::vector<Deviation> default_deviations(const ModelParams& params, int principal,
                                          const std::vector<double>& offsets,
                                          bool include_free_rider);

struct ResidualTriple {
    double y_gap = 0.0;      // |sum_i y^i - Y0|
    double alpha_gap = 0.0;  // sup |sum_i alpha^i(t,X_t) - G(t,X_t,sum_i beta^i)|
    double beta_gap = 0.0;   // sup |sum_i beta^i(t,X_t) - Z_t|
};

// Equilibrium-condition residuals along simulated paths against a reference
// (Y0, Z) pair.
ResidualTriple equilibrium_residuals(const std::vector<ContractTriple>& contracts,
                                     const DriftCostSpec& spec, const ModelParams& params,
                                     const PathEnsemble& ensemble, double y0_reference,
                                     const Policy& z_reference);

struct SimReport {
    std::size_t n_paths = 0;
    double dt = 0.0;
    std::uint64_t seed = 0;
    bool antithetic = false;
    MCEstimate agent_utility;
    double predicted_agent_utility = 0.0;  // -exp(-R_A Y0)
    std::vector<MCEstimate> principal_payoffs;
    ResidualTriple equilibrium_residuals;
    std::optional<DeviationTable> deviations;
    std::string note;
};

extern const char* const kSimSchema;
nlohmann::json to_json(const SimReport& report);
nlohmann::json to_json(const DeviationTable& table);

// One fused pass over the ensemble: agent utility, principal payoffs and
// equilibrium residuals.
SimReport run_report(const ModelParams& params, const DriftCostSpec& spec,
                     const std::vector<ContractTriple>& contracts, const Policy& effort,
                     const SimConfig& config, double y0_reference, const Policy& z_reference);

// Per-path CSV dump: path_id, t, x1..xN, xi_1..xi_N.
void dump_paths_csv(std::ostream& os, const PathEnsemble& ensemble,
                    const std::vector<ContractTriple>& contracts, std::size_t max_paths);

// Equilibrium contracts and policies from the closed-form solution.
std::vector<ContractTriple> lq_equilibrium_contracts(const lq::LQParams& params,
                                                     const lq::LQSolution& sol);
Policy lq_equilibrium_effort(const lq::LQSolution& sol);
Policy lq_equilibrium_z(const lq::LQSolution& sol);

// Contracts and policies interpolated from a grid solution.
struct GridContracts {
    std::vector<ContractTriple> contracts;
    Policy effort;
    Policy z_policy;
};
GridContracts grid_contracts(const hjb::GridSolution& sol, const hjb::BetaFields& betas,
                             const DriftCostSpec& spec, const ModelParams& params);

}  // namespace agency::sim

#endif  // AGENCY_SIM_HPP
