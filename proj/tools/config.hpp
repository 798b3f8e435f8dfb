#ifndef AGENCY_TOOLS_CONFIG_HPP
#define AGENCY_TOOLS_CONFIG_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "agency/hjb.hpp"
#include "agency/lq.hpp"
#include "agency/model.hpp"
#include "agency/sim.hpp"
#include "json.hpp"

namespace agency::cli {

// One structured config file per run; flags override file values. Unknown
// keys are rejected with a pointer to the offending key, and the resolved
// config is echoed beside every output.
struct RunConfig {
    // model
    int n_principals = 2;
    double horizon = 1.0;
    std::vector<double> x0;  // defaults to zeros
    std::optional<double> rho;
    std::optional<std::vector<std::vector<double>>> sigma;
    double risk_aversion = 1.0;
    double reservation_utility = -1.0;
    std::vector<double> appetence;   // defaults to zeros
    std::vector<double> efficiency;  // defaults to ones
    std::string spec_name = "lq";
    double effort_box = 8.0;

    // lq
    double y_share = 0.5;
    double alpha_share = 0.5;

    // grid
    double x_lo = -3.0, x_hi = 3.0;
    int n_x = 61;
    int n_t = 0;  // 0 = automatic from the stability bound
    std::string scheme = "explicit";
    int export_stride = 0;

    // sim
    std::size_t n_paths = 100000;
    double dt = 1e-3;
    std::uint64_t seed = 42;
    bool antithetic = false;
    bool dump_paths = false;
    std::size_t max_dumped_paths = 10;

    // nash
    int nash_principal = 1;  // 1-based in config
    std::vector<double> offsets = {0.05, 0.2};
    bool free_rider = true;

    // sweep
    std::string sweep_parameter = "rho";
    double sweep_lo = -0.99, sweep_hi = 0.99;
    int sweep_count = 100;
    bool log_scale = false;

    // output
    std::string out_dir = "out";
    std::string format = "csv";  // csv | json

    // runtime (flags only)
    int threads = 0;

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);
    nlohmann::json resolved() const;

    ModelParams model_params() const;
    DriftCostSpec drift_cost_spec() const;
    lq::LQParams lq_params() const;
    hjb::Grid make_grid(const ModelParams& params) const;
    sim::SimConfig sim_config() const;
};

}  // namespace agency::cli

#endif  // AGENCY_TOOLS_CONFIG_HPP
