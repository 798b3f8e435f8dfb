#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "agency/csv.hpp"
#include "agency/sim.hpp"

namespace agency::cli {

namespace {

namespace fs = std::filesystem;

fs::path prepare_out_dir(const RunConfig& config) {
    fs::path dir(config.out_dir);
    fs::create_directories(dir);
    std::ofstream echo(dir / "resolved_config.json");
    echo << config.resolved().dump(2) << "\n";
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

}  // namespace

void cmd_lq(const RunConfig& config) {
    const auto params = config.lq_params();
    const auto dir = prepare_out_dir(config);
    const auto sol = lq::solve(params);
    const auto fb = lq::first_best(params);

    if (config.format == "json") {
        nlohmann::json j = lq::to_json(sol);
        j["first_best_wage"] =
            fb.total_wage ? nlohmann::json(*fb.total_wage) : nlohmann::json(nullptr);
        write_json(dir / "lq_solution.json", j);
    } else {
        std::ostringstream os;
        CsvWriter csv(os, lq::kRecordSchema);
        auto cols = lq::record_columns();
        cols.push_back("first_best_wage");
        csv.header(cols);
        auto vals = lq::record_values(sol);
        vals.push_back(fb.total_wage.value_or(std::numeric_limits<double>::quiet_NaN()));
        csv.row(vals);
        write_text(dir / "lq_solution.csv", os.str());
    }

    std::cout << "effort    competitive (" << CsvWriter::format(sol.nu_star(0)) << ", "
              << CsvWriter::format(sol.nu_star(1)) << ")\n"
              << "          aggregated  (" << CsvWriter::format(sol.nu_aggregated(0)) << ", "
              << CsvWriter::format(sol.nu_aggregated(1)) << ")\n"
              << "          first-best  (" << CsvWriter::format(sol.nu_first_best(0)) << ", "
              << CsvWriter::format(sol.nu_first_best(1)) << ")\n"
              << "rates     delta " << CsvWriter::format(sol.delta) << "  delta_a "
              << CsvWriter::format(sol.delta_a) << "\n"
              << "values    lambda " << CsvWriter::format(sol.lambda) << "  lambda_tilde "
              << CsvWriter::format(sol.lambda_tilde) << "\n"
              << "wrote " << (dir / ("lq_solution." + config.format)).string() << "\n";
}

void cmd_hjb(const RunConfig& config) {
    auto params = config.model_params();
    const auto spec = config.drift_cost_spec();
    const auto dir = prepare_out_dir(config);
    const auto grid = config.make_grid(params);

    std::vector<hjb::Terminal> terminals;
    for (int i = 0; i < params.n_principals; ++i)
        terminals.push_back(hjb::Terminal::liquidation_of(params, i));

    const auto sol = hjb::solve_all(grid, spec, params, terminals, config.threads);
    const auto betas = hjb::construct_betas(sol, spec, params);

    {
        std::ostringstream os;
        hjb::export_csv(os, sol, betas, config.export_stride);
        write_text(dir / "grid_solution.csv", os.str());
    }

    nlohmann::json summary;
    summary["schema"] = hjb::kGridSchema;
    summary["grid"] = {{"n_x", grid.n_x}, {"n_t", grid.n_t}, {"h", grid.h},
                       {"dt", grid.dt},   {"x_lo", grid.x_lo}, {"x_hi", grid.x_hi}};
    summary["interior_residual"] = sol.v_residual;
    summary["decomposition_gap"] = sol.decomposition_gap;
    summary["foc_residual"] = betas.foc_residual;
    summary["beta_sum_residual"] = betas.sum_residual;
    // The scheme only returns its limit; uniqueness of the aggregated
    // solution is outside numerical scope.
    summary["uniqueness_certified"] = false;

    if (config.spec_name == "lq" && params.n_principals == 2) {
        const auto lp = config.lq_params();
        const auto lsol = lq::solve(lp);
        double ev = 0.0, eu = 0.0, ebar = 0.0, eb1 = 0.0;
        const Vector bsum = lsol.beta1 + lsol.beta2;
        for (std::size_t node = 0; node < grid.n_nodes; ++node) {
            if (!grid.is_interior(node)) continue;
            const Vector x = grid.coords(node);
            const Eigen::Vector2d x2(x(0), x(1));
            ev = std::max(ev, std::abs(sol.V.at(0, node) - lq::value_V(0.0, x2, lsol, lp)));
            eu = std::max(eu,
                          std::abs(sol.u_tilde[0].at(0, node) - lq::value_vi(1, 0.0, x2, lsol, lp)));
            for (int d = 0; d < 2; ++d) {
                ebar = std::max(ebar, std::abs(betas.beta_bar.at(0, node, d) - bsum(d)));
                eb1 = std::max(eb1, std::abs(betas.beta_i[0].at(0, node, d) - lsol.beta1(d)));
            }
        }
        summary["closed_form_errors"] = {
            {"V", ev}, {"u_tilde_1", eu}, {"beta_bar", ebar}, {"beta_1", eb1}};
        std::cout << "closed-form check: max interior |V - closed| = " << CsvWriter::format(ev)
                  << "\n";
    }
    write_json(dir / "hjb_summary.json", summary);
    std::cout << "grid " << grid.n_x << "^" << grid.dim << " x " << grid.n_t
              << " steps; decomposition gap " << CsvWriter::format(sol.decomposition_gap) << "\n"
              << "wrote " << (dir / "grid_solution.csv").string() << "\n";
}

void cmd_simulate(const RunConfig& config) {
    const auto lp = config.lq_params();
    auto params = config.model_params();
    const auto spec = config.drift_cost_spec();
    const auto dir = prepare_out_dir(config);

    const auto sol = lq::solve(lp);
    const auto contracts = sim::lq_equilibrium_contracts(lp, sol);
    const auto effort = sim::lq_equilibrium_effort(sol);
    const auto report = sim::run_report(params, spec, contracts, effort, config.sim_config(),
                                        sol.r0, sim::lq_equilibrium_z(sol));
    write_json(dir / "sim_report.json", sim::to_json(report));

    if (config.dump_paths) {
        const auto ens = sim::simulate_paths(params, spec, effort, config.sim_config());
        std::ostringstream os;
        sim::dump_paths_csv(os, ens, contracts, config.max_dumped_paths);
        write_text(dir / "paths.csv", os.str());
    }

    std::cout << "agent utility " << CsvWriter::format(report.agent_utility.mean) << " +- "
              << CsvWriter::format(report.agent_utility.se) << " (predicted "
              << CsvWriter::format(report.predicted_agent_utility) << ")\n"
              << "wrote " << (dir / "sim_report.json").string() << "\n";
}

void cmd_nash_check(const RunConfig& config) {
    const auto lp = config.lq_params();
    auto params = config.model_params();
    const auto spec = config.drift_cost_spec();
    const auto dir = prepare_out_dir(config);

    if (config.nash_principal < 1 || config.nash_principal > params.n_principals)
        throw ConfigError("nash.principal out of range");

    const auto sol = lq::solve(lp);
    const auto contracts = sim::lq_equilibrium_contracts(lp, sol);
    const auto deviations = sim::default_deviations(params, config.nash_principal - 1,
                                                    config.offsets, config.free_rider);
    const auto table =
        sim::nash_deviation_check(contracts, deviations, spec, params, config.sim_config());

    write_json(dir / "deviation_table.json", sim::to_json(table));
    {
        std::ostringstream os;
        CsvWriter csv(os, sim::kSimSchema);
        csv.header({"label", "principal", "payoff", "payoff_se", "delta", "delta_se",
                    "agent_utility"});
        for (const auto& row : table.rows) {
            csv.raw_row({row.label, std::to_string(row.principal + 1),
                         CsvWriter::format(row.payoff), CsvWriter::format(row.payoff_se),
                         CsvWriter::format(row.delta), CsvWriter::format(row.delta_se),
                         CsvWriter::format(row.agent_utility)});
        }
        write_text(dir / "deviation_table.csv", os.str());
    }
    std::cout << table.rows.size() << " deviations checked; equilibrium payoff "
              << CsvWriter::format(table.equilibrium_payoff) << "\n"
              << "wrote " << (dir / "deviation_table.csv").string() << "\n";
    sim::require_no_violation(table);
}

void cmd_sensitivity(const RunConfig& config) {
    const auto base = config.lq_params();
    const auto dir = prepare_out_dir(config);
    if (config.sweep_count < 2) throw ConfigError("sweep.count must be at least 2");
    if (config.log_scale && !(config.sweep_lo > 0.0 && config.sweep_hi > 0.0))
        throw ConfigError("sweep: log_scale needs positive bounds");

    const std::set<std::string> known = {"rho",        "gamma1", "gamma2", "gamma_diff",
                                         "k1",         "k2",     "risk_aversion"};
    if (!known.count(config.sweep_parameter))
        throw ConfigError("sweep.parameter '" + config.sweep_parameter + "' is not sweepable");

    struct Row {
        double value = 0.0;
        double nu1 = 0.0, nu2 = 0.0, d = 0.0, delta = 0.0, delta_a = 0.0;
        bool dominant1 = false;
    };
    std::vector<Row> rows(config.sweep_count);

    auto value_at = [&](int i) {
        if (config.log_scale) {
            const double t = static_cast<double>(i) / (config.sweep_count - 1);
            return config.sweep_lo * std::pow(config.sweep_hi / config.sweep_lo, t);
        }
        return config.sweep_lo +
               (config.sweep_hi - config.sweep_lo) * i / (config.sweep_count - 1);
    };

    // Sweep points run in a work pool; rows stay ordered by index.
    parallel_for_index(rows.size(), config.threads, [&](std::size_t i) {
        lq::LQParams p = base;
        const double v = value_at(static_cast<int>(i));
        const std::string& name = config.sweep_parameter;
        if (name == "rho") {
            p.sigma.reset();
            p.rho = v;
        } else if (name == "gamma1") {
            p.gamma1 = v;
        } else if (name == "gamma2") {
            p.gamma2 = v;
        } else if (name == "gamma_diff") {
            // Symmetric reparametrization around the base mean: v = gamma2 - gamma1.
            const double mean = 0.5 * (base.gamma1 + base.gamma2);
            p.gamma1 = mean - 0.5 * v;
            p.gamma2 = mean + 0.5 * v;
        } else if (name == "k1") {
            p.k1 = v;
        } else if (name == "k2") {
            p.k2 = v;
        } else if (name == "risk_aversion") {
            p.risk_aversion = v;
        }
        const auto sol = lq::solve(p);
        Row r;
        r.value = v;
        r.nu1 = sol.nu_star(0);
        r.nu2 = sol.nu_star(1);
        const double total = r.nu1 + r.nu2;
        r.d = total != 0.0 ? (r.nu1 - r.nu2) / total : 0.0;
        r.delta = sol.delta;
        r.delta_a = sol.delta_a;
        r.dominant1 = r.nu1 > r.nu2;
        rows[i] = r;
    });

    if (config.format == "json") {
        nlohmann::json arr = nlohmann::json::array();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            arr.push_back({{"index", i},
                           {"parameter", config.sweep_parameter},
                           {"value", rows[i].value},
                           {"nu1", rows[i].nu1},
                           {"nu2", rows[i].nu2},
                           {"d", rows[i].d},
                           {"delta", rows[i].delta},
                           {"delta_a", rows[i].delta_a},
                           {"works_more_for_1", rows[i].dominant1}});
        }
        write_json(dir / "sensitivity.json",
                   {{"schema", "agency.sensitivity.v1"}, {"rows", arr}});
    } else {
        std::ostringstream os;
        CsvWriter csv(os, "agency.sensitivity.v1");
        csv.header({"index", "parameter", "value", "nu1", "nu2", "d", "delta", "delta_a",
                    "works_more_for_1"});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            csv.raw_row({std::to_string(i), config.sweep_parameter,
                         CsvWriter::format(rows[i].value), CsvWriter::format(rows[i].nu1),
                         CsvWriter::format(rows[i].nu2), CsvWriter::format(rows[i].d),
                         CsvWriter::format(rows[i].delta), CsvWriter::format(rows[i].delta_a),
                         rows[i].dominant1 ? "1" : "0"});
        }
        write_text(dir / "sensitivity.csv", os.str());
    }
    std::cout << rows.size() << " sweep points over " << config.sweep_parameter << "\n"
              << "wrote " << (dir / ("sensitivity." + config.format)).string() << "\n";
}

}  // namespace agency::cli
