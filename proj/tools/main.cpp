#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "commands.hpp"
#include "config.hpp"

namespace {

// 0 ok, 2 invalid config, 3 solver/verification error.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"agency: equilibrium contracts for multi-principal moral-hazard models"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> format;
    int threads = 0;
    app.add_option("--config", config_path, "JSON config file (defaults apply when omitted)");
    app.add_option("--seed", seed, "override sim.seed");
    app.add_option("--out", out_dir, "override output.dir");
    app.add_option("--format", format, "override output.format (csv|json)")
        ->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--threads", threads, "worker threads (0 = hardware)");

    auto* lq_cmd = app.add_subcommand("lq", "closed-form bi-principal solution and benchmarks");
    auto* hjb_cmd = app.add_subcommand("hjb", "grid solver for the risk-neutral system");
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo check of the agent problem");
    auto* nash_cmd = app.add_subcommand("nash-check", "local non-deviation check");
    auto* sens_cmd = app.add_subcommand("sensitivity", "comparative-statics sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        agency::cli::RunConfig config = config_path.empty()
                                            ? agency::cli::RunConfig{}
                                            : agency::cli::RunConfig::from_file(config_path);
        if (seed) config.seed = *seed;
        if (out_dir) config.out_dir = *out_dir;
        if (format) config.format = *format;
        config.threads = threads;

        if (lq_cmd->parsed()) {
            agency::cli::cmd_lq(config);
        } else if (hjb_cmd->parsed()) {
            agency::cli::cmd_hjb(config);
        } else if (sim_cmd->parsed()) {
            agency::cli::cmd_simulate(config);
        } else if (nash_cmd->parsed()) {
            agency::cli::cmd_nash_check(config);
        } else if (sens_cmd->parsed()) {
            agency::cli::cmd_sensitivity(config);
        }
        return kExitOk;
    } catch (const agency::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const agency::Error& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
}
