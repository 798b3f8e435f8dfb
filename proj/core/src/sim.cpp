#include "agency/sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "agency/csv.hpp"
#include "agency/rng.hpp"

namespace agency::sim {

namespace {

constexpr double kOverflowLimit = 1e9;

const char* kCertificationNote =
    "Nash certification is local: deviations are drawn from a structured family of constant "
    "offsets with the agent response re-solved pointwise, not from the full contract class.";

// Draw the step's Gaussian vector; one pair per two components, pair cache
// flushed per step so draw (path, step) alignment is fixed.
inline void draw_step_gaussians(GaussianStream& gs, double sign, Vector& xi) {
    gs.flush_pair();
    for (int d = 0; d < xi.size(); ++d) xi(d) = sign * gs.next();
}

}  // namespace

void SimConfig::validate(const ModelParams& params) const {
    if (n_paths < 100) throw ConfigError("n_paths must be at least 100");
    if (!(dt > 0.0) || dt > params.horizon) throw ConfigError("dt must lie in (0, T]");
    const double steps = params.horizon / dt;
    if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
        throw ConfigError("horizon must be an integer multiple of dt");
    const double total = static_cast<double>(n_paths) * std::round(steps);
    if (total > path_step_budget)
        throw ConfigError("n_paths * (T/dt) exceeds the configured budget");
}

int SimConfig::n_steps(const ModelParams& params) const {
    return static_cast<int>(std::round(params.horizon / dt));
}

namespace {

// Walk a coarse (t, x) sample box around x0 and hand each point to check.
void sample_box(const ModelParams& params, double box_halfwidth,
                const std::function<void(double, const Vector&)>& check) {
    double hw = box_halfwidth;
    if (hw <= 0.0) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(params.sigma_sigma_t());
        hw = 5.0 * std::sqrt(params.horizon * es.eigenvalues().maxCoeff()) + 1.0;
    }
    const int pts = 5;
    const std::vector<double> times = {0.0, 0.25 * params.horizon, 0.5 * params.horizon,
                                       0.75 * params.horizon, params.horizon};
    Vector x(params.n_principals);
    std::vector<int> m(params.n_principals, 0);
    const std::size_t total = static_cast<std::size_t>(std::pow(pts, params.n_principals));
    for (std::size_t it = 0; it < total; ++it) {
        for (int d = 0; d < params.n_principals; ++d)
            x(d) = params.x0(d) - hw + 2.0 * hw * m[d] / (pts - 1);
        for (double t : times) check(t, x);
        for (int d = params.n_principals - 1; d >= 0; --d) {
            if (++m[d] < pts) break;
            m[d] = 0;
        }
    }
}

}  // namespace

void validate_contract(const ContractTriple& contract, const ModelParams& params,
                       double box_halfwidth) {
    sample_box(params, box_halfwidth, [&](double t, const Vector& x) {
        const double a = contract.alpha(t, x);
        const Vector b = contract.beta(t, x);
        if (!std::isfinite(a) || !b.allFinite())
            throw ConfigError("contract policy is not finite on the simulation box");
    });
}

void validate_policy(const Policy& policy, const ModelParams& params, double box_halfwidth) {
    sample_box(params, box_halfwidth, [&](double t, const Vector& x) {
        if (!policy(t, x).allFinite())
            throw ConfigError("effort policy is not finite on the simulation box");
    });
}

PathEnsemble::PathEnsemble(ModelParams params, DriftCostSpec spec, Policy effort, SimConfig config)
    : params_(std::move(params)),
      spec_(std::move(spec)),
      effort_(std::move(effort)),
      config_(config) {
    config_.validate(params_);
    validate_policy(effort_, params_);
    n_steps_ = config_.n_steps(params_);
}

void PathEnsemble::path(std::size_t p, Eigen::MatrixXd& X) const {
    const int n = params_.n_principals;
    X.resize(n_steps_ + 1, n);
    const std::uint64_t stream = config_.antithetic ? p / 2 : p;
    const double sign = (config_.antithetic && (p & 1)) ? -1.0 : 1.0;
    GaussianStream gs(SplitMix64::stream(config_.seed, stream));

    const double dt = config_.dt;
    const double sqdt = std::sqrt(dt);
    Vector x = params_.x0;
    Vector xi(n), noise(n);
    X.row(0) = x;

    // Constant-effort LQ drift never re-evaluates the policy.
    Vector bdt;
    const bool const_drift = effort_.is_constant() && spec_.is_lq();
    if (const_drift) bdt = spec_.drift(0.0, x, *effort_.constant) * dt;

    for (int k = 0; k < n_steps_; ++k) {
        draw_step_gaussians(gs, sign, xi);
        noise.noalias() = params_.sigma * xi;
        if (const_drift) {
            x += bdt + sqdt * noise;
        } else {
            const double t = dt * k;
            x += spec_.drift(t, x, effort_(t, x)) * dt + sqdt * noise;
        }
        for (int d = 0; d < n; ++d) {
            if (!(std::abs(x(d)) <= kOverflowLimit))
                throw NumericOverflow("simulated path left the admissible range [-1e9, 1e9]");
        }
        X.row(k + 1) = x;
    }
}

PathEnsemble simulate_paths(const ModelParams& params, const DriftCostSpec& spec,
                            const Policy& effort, const SimConfig& config) {
    return PathEnsemble(params, spec, effort, config);
}

namespace {

// Accrue every contract and the effort cost along one path.
// xi_out must have one slot per contract.
void accrue_path(const PathEnsemble& ens, const Eigen::MatrixXd& X,
                 const std::vector<ContractTriple>& contracts, std::span<double> xi_out,
                 double* cost_out) {
    const double dt = ens.config().dt;
    const int steps = ens.n_steps();
    for (std::size_t c = 0; c < contracts.size(); ++c) xi_out[c] = contracts[c].y;
    double cost = 0.0;
    Vector x(X.cols()), dx(X.cols());
    for (int k = 0; k < steps; ++k) {
        const double t = dt * k;
        x = X.row(k);
        dx = X.row(k + 1) - X.row(k);
        for (std::size_t c = 0; c < contracts.size(); ++c) {
            xi_out[c] += contracts[c].alpha(t, x) * dt + contracts[c].beta(t, x).dot(dx);
        }
        if (cost_out) cost += ens.spec().cost(t, x, ens.effort()(t, x)) * dt;
    }
    if (cost_out) *cost_out = cost;
}

}  // namespace

std::vector<double> accrue_contract(const PathEnsemble& ensemble, const ContractTriple& contract) {
    validate_contract(contract, ensemble.params());
    std::vector<double> out(ensemble.n_paths());
    std::vector<ContractTriple> one = {contract};
    parallel_for_index(ensemble.n_paths(), ensemble.config().threads, [&](std::size_t p) {
        thread_local Eigen::MatrixXd X;
        ensemble.path(p, X);
        double xi = 0.0;
        accrue_path(ensemble, X, one, {&xi, 1}, nullptr);
        out[p] = xi;
    });
    return out;
}

MCEstimate agent_utility(const PathEnsemble& ensemble,
                         const std::vector<ContractTriple>& contracts) {
    const double ra = ensemble.params().risk_aversion;
    std::vector<double> u(ensemble.n_paths());
    parallel_for_index(ensemble.n_paths(), ensemble.config().threads, [&](std::size_t p) {
        thread_local Eigen::MatrixXd X;
        thread_local std::vector<double> xi;
        xi.assign(contracts.size(), 0.0);
        ensemble.path(p, X);
        double cost = 0.0;
        accrue_path(ensemble, X, contracts, xi, &cost);
        double wage = 0.0;
        for (double v : xi) wage += v;
        u[p] = -std::exp(-ra * (wage - cost));
    });
    return mean_se(u);
}

MCEstimate principal_payoff(const PathEnsemble& ensemble,
                            const std::vector<ContractTriple>& contracts, int i) {
    if (i < 0 || i >= static_cast<int>(contracts.size()))
        throw ConfigError("principal_payoff: index out of range");
    std::vector<double> v(ensemble.n_paths());
    parallel_for_index(ensemble.n_paths(), ensemble.config().threads, [&](std::size_t p) {
        thread_local Eigen::MatrixXd X;
        thread_local std::vector<double> xi;
        xi.assign(contracts.size(), 0.0);
        ensemble.path(p, X);
        accrue_path(ensemble, X, contracts, xi, nullptr);
        const Vector xT = X.row(X.rows() - 1);
        v[p] = liquidation(ensemble.params(), i, xT) - xi[i];
    });
    return mean_se(v);
}

namespace {

Policy best_response_policy(const std::vector<ContractTriple>& contracts,
                            const DriftCostSpec& spec) {
    // Constant betas give a constant response.
    bool all_const = true;
    for (const auto& c : contracts) all_const = all_const && c.beta.is_constant();
    if (all_const) {
        Vector z = *contracts[0].beta.constant;
        for (std::size_t i = 1; i < contracts.size(); ++i) z += *contracts[i].beta.constant;
        return Policy::constant_effort(best_response(0.0, Vector::Zero(z.size()), z, spec));
    }
    std::vector<Policy> betas;
    betas.reserve(contracts.size());
    for (const auto& c : contracts) betas.push_back(c.beta);
    return Policy::feedback([betas, spec](double t, const Vector& x) {
        Vector z = betas[0](t, x);
        for (std::size_t i = 1; i < betas.size(); ++i) z += betas[i](t, x);
        return best_response(t, x, z, spec);
    });
}

std::vector<double> per_path_agent_utilities(const ModelParams& params, const DriftCostSpec& spec,
                                             const std::vector<ContractTriple>& contracts,
                                             const Policy& effort, const SimConfig& config) {
    PathEnsemble ens(params, spec, effort, config);
    const double ra = params.risk_aversion;
    std::vector<double> u(ens.n_paths());
    parallel_for_index(ens.n_paths(), config.threads, [&](std::size_t p) {
        thread_local Eigen::MatrixXd X;
        thread_local std::vector<double> xi;
        xi.assign(contracts.size(), 0.0);
        ens.path(p, X);
        double cost = 0.0;
        accrue_path(ens, X, contracts, xi, &cost);
        double wage = 0.0;
        for (double v : xi) wage += v;
        u[p] = -std::exp(-ra * (wage - cost));
    });
    return u;
}

}  // namespace

BestResponseReport agent_best_response_check(
    const std::vector<ContractTriple>& contracts, const DriftCostSpec& spec,
    const ModelParams& params, const SimConfig& config,
    const std::vector<std::pair<std::string, Policy>>& extra_policies) {
    for (const auto& c : contracts) validate_contract(c, params);

    const Policy base = best_response_policy(contracts, spec);
    std::vector<std::pair<std::string, Policy>> grid;
    grid.emplace_back("best_response", base);
    const int n = params.n_principals;
    for (double eps : {0.05, 0.2}) {
        for (int d = 0; d < n; ++d) {
            for (double s : {1.0, -1.0}) {
                Vector e = Vector::Zero(n);
                e(d) = s * eps;
                std::ostringstream label;
                label << "offset[" << d + 1 << "]" << (s > 0 ? "+" : "-") << eps;
                if (base.is_constant()) {
                    grid.emplace_back(label.str(), Policy::constant_effort(*base.constant + e));
                } else {
                    Policy b = base;
                    grid.emplace_back(label.str(), Policy::feedback([b, e](double t, const Vector& x) {
                                          return Vector(b(t, x) + e);
                                      }));
                }
            }
        }
    }
    for (const auto& ex : extra_policies) grid.push_back(ex);

    BestResponseReport report;
    const std::vector<double> base_u =
        per_path_agent_utilities(params, spec, contracts, grid[0].second, config);
    {
        PolicyCheckRow row;
        row.label = grid[0].first;
        row.utility = mean_se(base_u);
        report.rows.push_back(row);
    }
    for (std::size_t gi = 1; gi < grid.size(); ++gi) {
        const std::vector<double> u =
            per_path_agent_utilities(params, spec, contracts, grid[gi].second, config);
        std::vector<double> diff(u.size());
        for (std::size_t p = 0; p < u.size(); ++p) diff[p] = u[p] - base_u[p];
        const MCEstimate d = mean_se(diff);
        PolicyCheckRow row;
        row.label = grid[gi].first;
        row.utility = mean_se(u);
        row.delta = d.mean;
        row.delta_se = d.se;
        report.rows.push_back(row);
        if (d.mean > 2.0 * d.se && d.se > 0.0) {
            report.violation = true;
            report.message = "policy '" + row.label + "' beats the best response by " +
                             std::to_string(d.mean) + " (2 SE = " + std::to_string(2.0 * d.se) + ")";
        }
    }
    return report;
}

void require_no_violation(const BestResponseReport& report) {
    if (report.violation) throw BestResponseViolation(report.message);
}

Deviation Deviation::beta(int principal, const Vector& offset) {
    Deviation d;
    d.principal = principal;
    d.kind = Kind::BetaOffset;
    d.beta_offset = offset;
    std::ostringstream label;
    label << "beta" << principal + 1 << "+(";
    for (int i = 0; i < offset.size(); ++i) label << (i ? "," : "") << offset(i);
    label << ")";
    d.label = label.str();
    return d;
}

Deviation Deviation::free_rider(int principal) {
    Deviation d;
    d.principal = principal;
    d.kind = Kind::FreeRider;
    d.label = "free_rider" + std::to_string(principal + 1);
    return d;
}

std::vector<Deviation> default_deviations(const ModelParams& params, int principal,
                                          const std::vector<double>& offsets,
                                          bool include_free_rider) {
    const int n = params.n_principals;
    std::vector<Deviation> out;
    std::vector<double> signed_offsets;
    for (double o : offsets) {
        signed_offsets.push_back(o);
        signed_offsets.push_back(-o);
    }
    // Single-coordinate offsets.
    for (int d = 0; d < n; ++d) {
        for (double o : signed_offsets) {
            Vector e = Vector::Zero(n);
            e(d) = o;
            out.push_back(Deviation::beta(principal, e));
        }
    }
    // Full product over coordinate pairs (the planar grid used by the
    // concavity profile).
    for (int d1 = 0; d1 < n; ++d1) {
        for (int d2 = d1 + 1; d2 < n; ++d2) {
            for (double o1 : signed_offsets) {
                for (double o2 : signed_offsets) {
                    Vector e = Vector::Zero(n);
                    e(d1) = o1;
                    e(d2) = o2;
                    out.push_back(Deviation::beta(principal, e));
                }
            }
        }
    }
    if (include_free_rider) out.push_back(Deviation::free_rider(principal));
    return out;
}

namespace {

struct DeviatedSetup {
    std::vector<ContractTriple> contracts;
    Policy effort;
};

// Replace principal i's contract, re-balance its drift rate so the aggregate
// stays inside the representable class where possible, re-solve the agent
// response, and re-set the wage level so participation stays binding. All
// policies in scope are constant, which keeps the binding correction exact.
DeviatedSetup apply_deviation(const std::vector<ContractTriple>& equilibrium,
                              const Deviation& dev, const DriftCostSpec& spec,
                              const ModelParams& params) {
    const int i = dev.principal;
    if (i < 0 || i >= static_cast<int>(equilibrium.size()))
        throw ConfigError("deviation principal index out of range");
    for (const auto& c : equilibrium) {
        if (!c.beta.is_constant() || !c.alpha.is_constant())
            throw ConfigError("nash_deviation_check requires constant equilibrium policies");
    }

    DeviatedSetup out;
    out.contracts = equilibrium;

    Vector beta_sum = Vector::Zero(params.n_principals);
    double alpha_others = 0.0;
    for (int j = 0; j < static_cast<int>(equilibrium.size()); ++j) {
        if (j != i) {
            beta_sum += *equilibrium[j].beta.constant;
            alpha_others += *equilibrium[j].alpha.constant;
        }
    }

    Vector beta_i;
    double alpha_i = 0.0;
    if (dev.kind == Deviation::Kind::FreeRider) {
        beta_i = Vector::Zero(params.n_principals);
        alpha_i = 0.0;
    } else {
        beta_i = *equilibrium[i].beta.constant + dev.beta_offset;
    }
    beta_sum += beta_i;
    const double g_new = generator_G(0.0, params.x0, beta_sum, params, spec);
    if (dev.kind == Deviation::Kind::BetaOffset) {
        alpha_i = g_new - alpha_others;  // keeps sum alpha = G(., sum beta)
    }

    // Binding participation: the agent's certainty equivalent is
    //   sum y + T (sum alpha - G(sum beta)),
    // so the deviating wage level absorbs the drift mismatch (zero for
    // re-balanced offsets, nonzero for the free rider).
    double y_others = 0.0;
    for (int j = 0; j < static_cast<int>(equilibrium.size()); ++j)
        if (j != i) y_others += equilibrium[j].y;
    const double drift_mismatch = (alpha_others + alpha_i) - g_new;
    const double y_i = params.r0() - y_others - params.horizon * drift_mismatch;

    out.contracts[i].y = y_i;
    out.contracts[i].alpha = ScalarPolicy::constant_rate(alpha_i);
    out.contracts[i].beta = Policy::constant_effort(beta_i);
    out.effort = Policy::constant_effort(best_response(0.0, params.x0, beta_sum, spec));
    return out;
}

struct PayoffSample {
    std::vector<double> payoff;   // deviating principal's payoff per path
    std::vector<double> utility;  // agent utility per path
};

PayoffSample per_path_payoffs(const ModelParams& params, const DriftCostSpec& spec,
                              const std::vector<ContractTriple>& contracts, const Policy& effort,
                              const SimConfig& config, int principal) {
    PathEnsemble ens(params, spec, effort, config);
    PayoffSample out;
    out.payoff.resize(ens.n_paths());
    out.utility.resize(ens.n_paths());
    const double ra = params.risk_aversion;
    parallel_for_index(ens.n_paths(), config.threads, [&](std::size_t p) {
        thread_local Eigen::MatrixXd X;
        thread_local std::vector<double> xi;
        xi.assign(contracts.size(), 0.0);
        ens.path(p, X);
        double cost = 0.0;
        accrue_path(ens, X, contracts, xi, &cost);
        const Vector xT = X.row(X.rows() - 1);
        out.payoff[p] = liquidation(params, principal, xT) - xi[principal];
        double wage = 0.0;
        for (double v : xi) wage += v;
        out.utility[p] = -std::exp(-ra * (wage - cost));
    });
    return out;
}

}  // namespace

DeviationTable nash_deviation_check(const std::vector<ContractTriple>& equilibrium,
                                    const std::vector<Deviation>& deviations,
                                    const DriftCostSpec& spec, const ModelParams& params,
                                    const SimConfig& config) {
    for (const auto& c : equilibrium) validate_contract(c, params);

    DeviationTable table;
    const Policy eq_effort = best_response_policy(equilibrium, spec);

    // Equilibrium payoff per principal, shared across deviations of the same
    // principal (common random numbers: same seed).
    std::vector<std::optional<PayoffSample>> eq_samples(equilibrium.size());
    auto eq_sample = [&](int i) -> const PayoffSample& {
        if (!eq_samples[i])
            eq_samples[i] = per_path_payoffs(params, spec, equilibrium, eq_effort, config, i);
        return *eq_samples[i];
    };

    for (const auto& dev : deviations) {
        const auto setup = apply_deviation(equilibrium, dev, spec, params);
        const PayoffSample dev_s =
            per_path_payoffs(params, spec, setup.contracts, setup.effort, config, dev.principal);
        const PayoffSample& eq_s = eq_sample(dev.principal);

        std::vector<double> diff(dev_s.payoff.size());
        for (std::size_t p = 0; p < diff.size(); ++p) diff[p] = dev_s.payoff[p] - eq_s.payoff[p];
        const MCEstimate d = mean_se(diff);
        const MCEstimate pay = mean_se(dev_s.payoff);

        DeviationRow row;
        row.label = dev.label;
        row.principal = dev.principal;
        row.payoff = pay.mean;
        row.payoff_se = pay.se;
        row.delta = d.mean;
        row.delta_se = d.se;
        row.agent_utility = mean_se(dev_s.utility).mean;
        table.rows.push_back(row);
        table.equilibrium_payoff = mean_se(eq_s.payoff).mean;

        if (d.mean > 2.0 * d.se && d.se > 0.0) {
            table.violation = true;
            table.message = "deviation '" + dev.label + "' improves the payoff by " +
                            std::to_string(d.mean) + " (2 SE = " + std::to_string(2.0 * d.se) + ")";
        }
    }
    return table;
}

void require_no_violation(const DeviationTable& table) {
    if (table.violation) throw NashViolation(table.message);
}

ResidualTriple equilibrium_residuals(const std::vector<ContractTriple>& contracts,
                                     const DriftCostSpec& spec, const ModelParams& params,
                                     const PathEnsemble& ensemble, double y0_reference,
                                     const Policy& z_reference) {
    ResidualTriple out;
    double y_sum = 0.0;
    for (const auto& c : contracts) y_sum += c.y;
    out.y_gap = std::abs(y_sum - y0_reference);

    bool all_const = z_reference.is_constant();
    for (const auto& c : contracts)
        all_const = all_const && c.beta.is_constant() && c.alpha.is_constant();

    auto eval_point = [&](double t, const Vector& x) {
        double alpha_sum = 0.0;
        Vector beta_sum = Vector::Zero(params.n_principals);
        for (const auto& c : contracts) {
            alpha_sum += c.alpha(t, x);
            beta_sum += c.beta(t, x);
        }
        const double g = generator_G(t, x, beta_sum, params, spec);
        out.alpha_gap = std::max(out.alpha_gap, std::abs(alpha_sum - g));
        out.beta_gap = std::max(out.beta_gap, (beta_sum - z_reference(t, x)).norm());
    };

    if (all_const && spec.is_lq()) {
        // Constant policies and an x-free generator: one point is the sup.
        eval_point(0.0, params.x0);
        return out;
    }
    Eigen::MatrixXd X;
    const double dt = ensemble.config().dt;
    for (std::size_t p = 0; p < ensemble.n_paths(); ++p) {
        ensemble.path(p, X);
        for (int k = 0; k <= ensemble.n_steps(); ++k) eval_point(dt * k, X.row(k));
    }
    return out;
}

const char* const kSimSchema = "agency.sim.v1";

namespace {

nlohmann::json estimate_json(const MCEstimate& e) {
    return {{"estimate", e.mean}, {"se", e.se}, {"n", e.n}};
}

}  // namespace

nlohmann::json to_json(const DeviationTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : table.rows) {
        rows.push_back({{"label", r.label},
                        {"principal", r.principal + 1},
                        {"payoff", r.payoff},
                        {"payoff_se", r.payoff_se},
                        {"delta", r.delta},
                        {"delta_se", r.delta_se},
                        {"agent_utility", r.agent_utility}});
    }
    return {{"schema", kSimSchema},
            {"equilibrium_payoff", table.equilibrium_payoff},
            {"rows", rows},
            {"violation", table.violation},
            {"message", table.message}};
}

nlohmann::json to_json(const SimReport& report) {
    nlohmann::json j;
    j["schema"] = kSimSchema;
    j["n_paths"] = report.n_paths;
    j["dt"] = report.dt;
    j["seed"] = report.seed;
    j["antithetic"] = report.antithetic;
    j["agent_utility"] = estimate_json(report.agent_utility);
    j["predicted_agent_utility"] = report.predicted_agent_utility;
    nlohmann::json pp = nlohmann::json::array();
    for (const auto& e : report.principal_payoffs) pp.push_back(estimate_json(e));
    j["principal_payoffs"] = pp;
    j["equilibrium_residuals"] = {{"y_gap", report.equilibrium_residuals.y_gap},
                                  {"alpha_gap", report.equilibrium_residuals.alpha_gap},
                                  {"beta_gap", report.equilibrium_residuals.beta_gap}};
    if (report.deviations) j["deviations"] = to_json(*report.deviations);
    j["note"] = report.note;
    return j;
}

SimReport run_report(const ModelParams& params, const DriftCostSpec& spec,
                     const std::vector<ContractTriple>& contracts, const Policy& effort,
                     const SimConfig& config, double y0_reference, const Policy& z_reference) {
    for (const auto& c : contracts) validate_contract(c, params);
    PathEnsemble ens(params, spec, effort, config);

    const int n = static_cast<int>(contracts.size());
    const double ra = params.risk_aversion;
    std::vector<double> util(ens.n_paths());
    std::vector<std::vector<double>> payoff(n, std::vector<double>(ens.n_paths()));
    parallel_for_index(ens.n_paths(), config.threads, [&](std::size_t p) {
        thread_local Eigen::MatrixXd X;
        thread_local std::vector<double> xi;
        xi.assign(contracts.size(), 0.0);
        ens.path(p, X);
        double cost = 0.0;
        accrue_path(ens, X, contracts, xi, &cost);
        const Vector xT = X.row(X.rows() - 1);
        double wage = 0.0;
        for (double v : xi) wage += v;
        util[p] = -std::exp(-ra * (wage - cost));
        for (int i = 0; i < n; ++i) payoff[i][p] = liquidation(params, i, xT) - xi[i];
    });

    SimReport report;
    report.n_paths = ens.n_paths();
    report.dt = config.dt;
    report.seed = config.seed;
    report.antithetic = config.antithetic;
    report.agent_utility = mean_se(util);
    report.predicted_agent_utility = -std::exp(-ra * y0_reference);
    for (int i = 0; i < n; ++i) report.principal_payoffs.push_back(mean_se(payoff[i]));
    report.equilibrium_residuals =
        equilibrium_residuals(contracts, spec, params, ens, y0_reference, z_reference);
    report.note = kCertificationNote;
    return report;
}

void dump_paths_csv(std::ostream& os, const PathEnsemble& ensemble,
                    const std::vector<ContractTriple>& contracts, std::size_t max_paths) {
    const int n = ensemble.params().n_principals;
    CsvWriter csv(os, "agency.paths.v1");
    std::vector<std::string> cols = {"path_id", "t"};
    for (int d = 0; d < n; ++d) cols.push_back("x" + std::to_string(d + 1));
    for (std::size_t c = 0; c < contracts.size(); ++c)
        cols.push_back("xi_" + std::to_string(c + 1));
    csv.header(cols);

    const std::size_t count = std::min(max_paths, ensemble.n_paths());
    Eigen::MatrixXd X;
    const double dt = ensemble.config().dt;
    std::vector<double> row;
    for (std::size_t p = 0; p < count; ++p) {
        ensemble.path(p, X);
        // Running accruals so each row carries the contract value to date.
        std::vector<double> xi(contracts.size());
        for (std::size_t c = 0; c < contracts.size(); ++c) xi[c] = contracts[c].y;
        for (int k = 0; k <= ensemble.n_steps(); ++k) {
            if (k > 0) {
                const double t_prev = dt * (k - 1);
                const Vector x_prev = X.row(k - 1);
                const Vector dx = X.row(k) - X.row(k - 1);
                for (std::size_t c = 0; c < contracts.size(); ++c)
                    xi[c] += contracts[c].alpha(t_prev, x_prev) * dt +
                             contracts[c].beta(t_prev, x_prev).dot(dx);
            }
            row.clear();
            row.push_back(static_cast<double>(p));
            row.push_back(dt * k);
            for (int d = 0; d < n; ++d) row.push_back(X(k, d));
            for (double v : xi) row.push_back(v);
            csv.row(row);
        }
    }
}

std::vector<ContractTriple> lq_equilibrium_contracts(const lq::LQParams& params,
                                                     const lq::LQSolution& sol) {
    std::vector<ContractTriple> out(2);
    out[0].y = sol.y_split.first;
    out[1].y = sol.y_split.second;
    const double g_rate = 2.0 * sol.alpha_rate;
    out[0].alpha = ScalarPolicy::constant_rate(params.alpha_share * g_rate);
    out[1].alpha = ScalarPolicy::constant_rate((1.0 - params.alpha_share) * g_rate);
    out[0].beta = Policy::constant_effort(sol.beta1);
    out[1].beta = Policy::constant_effort(sol.beta2);
    return out;
}

Policy lq_equilibrium_effort(const lq::LQSolution& sol) {
    return Policy::constant_effort(sol.nu_star);
}

Policy lq_equilibrium_z(const lq::LQSolution& sol) {
    return Policy::constant_effort(Vector(sol.beta1 + sol.beta2));
}

GridContracts grid_contracts(const hjb::GridSolution& sol, const hjb::BetaFields& betas,
                             const DriftCostSpec& spec, const ModelParams& params) {
    const int n = params.n_principals;
    GridContracts out;
    out.z_policy = hjb::vector_policy(sol.grid, betas.beta_bar);
    const Policy z = out.z_policy;
    const DriftCostSpec spec_copy = spec;
    out.effort = Policy::feedback([z, spec_copy](double t, const Vector& x) {
        return best_response(t, x, z(t, x), spec_copy);
    });
    const double y_each = params.r0() / n;
    const ModelParams params_copy = params;
    for (int i = 0; i < n; ++i) {
        ContractTriple c;
        c.y = y_each;
        c.beta = hjb::vector_policy(sol.grid, betas.beta_i[i]);
        c.alpha = ScalarPolicy::feedback([z, spec_copy, params_copy, n](double t, const Vector& x) {
            return generator_G(t, x, z(t, x), params_copy, spec_copy) / n;
        });
        out.contracts.push_back(std::move(c));
    }
    return out;
}

}  // namespace agency::sim
