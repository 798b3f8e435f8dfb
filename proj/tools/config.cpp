#include "config.hpp"

#include <fstream>
#include <set>

namespace agency::cli {

namespace {

void check_keys(const nlohmann::json& j, const std::string& section,
                const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + (section.empty() ? key : section + "." + key) + "'");
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    check_keys(j, "", {"model", "lq", "grid", "sim", "nash", "sweep", "output"});

    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, "model",
                   {"n_principals", "horizon", "x0", "rho", "sigma", "risk_aversion",
                    "reservation_utility", "appetence", "efficiency", "spec", "effort_box"});
        read(m, "n_principals", c.n_principals);
        read(m, "horizon", c.horizon);
        read(m, "x0", c.x0);
        if (m.contains("rho")) c.rho = m.at("rho").get<double>();
        if (m.contains("sigma")) c.sigma = m.at("sigma").get<std::vector<std::vector<double>>>();
        read(m, "risk_aversion", c.risk_aversion);
        read(m, "reservation_utility", c.reservation_utility);
        read(m, "appetence", c.appetence);
        read(m, "efficiency", c.efficiency);
        read(m, "spec", c.spec_name);
        read(m, "effort_box", c.effort_box);
    }
    if (j.contains("lq")) {
        const auto& m = j.at("lq");
        check_keys(m, "lq", {"y_share", "alpha_share"});
        read(m, "y_share", c.y_share);
        read(m, "alpha_share", c.alpha_share);
    }
    if (j.contains("grid")) {
        const auto& m = j.at("grid");
        check_keys(m, "grid", {"x_lo", "x_hi", "n_x", "n_t", "scheme", "export_stride"});
        read(m, "x_lo", c.x_lo);
        read(m, "x_hi", c.x_hi);
        read(m, "n_x", c.n_x);
        read(m, "n_t", c.n_t);
        read(m, "scheme", c.scheme);
        read(m, "export_stride", c.export_stride);
    }
    if (j.contains("sim")) {
        const auto& m = j.at("sim");
        check_keys(m, "sim",
                   {"n_paths", "dt", "seed", "antithetic", "dump_paths", "max_dumped_paths"});
        read(m, "n_paths", c.n_paths);
        read(m, "dt", c.dt);
        read(m, "seed", c.seed);
        read(m, "antithetic", c.antithetic);
        read(m, "dump_paths", c.dump_paths);
        read(m, "max_dumped_paths", c.max_dumped_paths);
    }
    if (j.contains("nash")) {
        const auto& m = j.at("nash");
        check_keys(m, "nash", {"principal", "offsets", "free_rider"});
        read(m, "principal", c.nash_principal);
        read(m, "offsets", c.offsets);
        read(m, "free_rider", c.free_rider);
    }
    if (j.contains("sweep")) {
        const auto& m = j.at("sweep");
        check_keys(m, "sweep", {"parameter", "lo", "hi", "count", "log_scale"});
        read(m, "parameter", c.sweep_parameter);
        read(m, "lo", c.sweep_lo);
        read(m, "hi", c.sweep_hi);
        read(m, "count", c.sweep_count);
        read(m, "log_scale", c.log_scale);
    }
    if (j.contains("output")) {
        const auto& m = j.at("output");
        check_keys(m, "output", {"dir", "format"});
        read(m, "dir", c.out_dir);
        read(m, "format", c.format);
    }
    if (c.format != "csv" && c.format != "json")
        throw ConfigError("output.format must be 'csv' or 'json'");
    if (c.scheme != "explicit" && c.scheme != "semi_implicit")
        throw ConfigError("grid.scheme must be 'explicit' or 'semi_implicit'");
    if (c.rho && c.sigma) throw ConfigError("model: give either rho or sigma, not both");
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in '" + path + "': " + e.what());
    }
    try {
        return from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config type error in '" + path + "': " + e.what());
    }
}

nlohmann::json RunConfig::resolved() const {
    nlohmann::json m;
    m["n_principals"] = n_principals;
    m["horizon"] = horizon;
    m["x0"] = x0.empty() ? std::vector<double>(n_principals, 0.0) : x0;
    if (rho) m["rho"] = *rho;
    if (sigma) m["sigma"] = *sigma;
    if (!rho && !sigma) m["rho"] = 0.0;
    m["risk_aversion"] = risk_aversion;
    m["reservation_utility"] = reservation_utility;
    m["appetence"] = appetence.empty() ? std::vector<double>(n_principals, 0.0) : appetence;
    m["efficiency"] = efficiency.empty() ? std::vector<double>(n_principals, 1.0) : efficiency;
    m["spec"] = spec_name;
    m["effort_box"] = effort_box;

    nlohmann::json j;
    j["model"] = m;
    j["lq"] = {{"y_share", y_share}, {"alpha_share", alpha_share}};
    j["grid"] = {{"x_lo", x_lo},   {"x_hi", x_hi},     {"n_x", n_x},
                 {"n_t", n_t},     {"scheme", scheme}, {"export_stride", export_stride}};
    j["sim"] = {{"n_paths", n_paths},       {"dt", dt},
                {"seed", seed},             {"antithetic", antithetic},
                {"dump_paths", dump_paths}, {"max_dumped_paths", max_dumped_paths}};
    j["nash"] = {{"principal", nash_principal}, {"offsets", offsets}, {"free_rider", free_rider}};
    j["sweep"] = {{"parameter", sweep_parameter},
                  {"lo", sweep_lo},
                  {"hi", sweep_hi},
                  {"count", sweep_count},
                  {"log_scale", log_scale}};
    j["output"] = {{"dir", out_dir}, {"format", format}};
    j["threads"] = threads;
    return j;
}

ModelParams RunConfig::model_params() const {
    ModelParams p;
    p.n_principals = n_principals;
    p.horizon = horizon;
    p.x0 = Vector::Zero(n_principals);
    if (!x0.empty()) {
        if (static_cast<int>(x0.size()) != n_principals)
            throw ConfigError("model.x0 must have n_principals entries");
        for (int i = 0; i < n_principals; ++i) p.x0(i) = x0[i];
    }
    if (sigma) {
        if (static_cast<int>(sigma->size()) != n_principals)
            throw ConfigError("model.sigma must be n_principals x n_principals");
        p.sigma.resize(n_principals, n_principals);
        for (int i = 0; i < n_principals; ++i) {
            if (static_cast<int>((*sigma)[i].size()) != n_principals)
                throw ConfigError("model.sigma must be n_principals x n_principals");
            for (int k = 0; k < n_principals; ++k) p.sigma(i, k) = (*sigma)[i][k];
        }
    } else {
        const double r = rho.value_or(0.0);
        if (n_principals == 2) {
            if (!(std::abs(r) <= 1.0 - 1e-9))
                throw ConfigError("model.rho must satisfy |rho| <= 1 - 1e-9");
            p.sigma.resize(2, 2);
            p.sigma << 1.0, 0.0, r, std::sqrt(1.0 - r * r);
        } else {
            if (r != 0.0)
                throw ConfigError("model.rho is only supported for two principals; give sigma");
            p.sigma = Matrix::Identity(n_principals, n_principals);
        }
    }
    p.risk_aversion = risk_aversion;
    p.reservation_utility = reservation_utility;
    p.appetence = Vector::Zero(n_principals);
    if (!appetence.empty()) {
        if (static_cast<int>(appetence.size()) != n_principals)
            throw ConfigError("model.appetence must have n_principals entries");
        for (int i = 0; i < n_principals; ++i) p.appetence(i) = appetence[i];
    }
    p.validate();
    return p;
}

DriftCostSpec RunConfig::drift_cost_spec() const {
    Vector k = Vector::Ones(n_principals);
    if (!efficiency.empty()) {
        if (static_cast<int>(efficiency.size()) != n_principals)
            throw ConfigError("model.efficiency must have n_principals entries");
        for (int i = 0; i < n_principals; ++i) k(i) = efficiency[i];
    }
    return DriftCostSpec::named(spec_name, k, effort_box);
}

lq::LQParams RunConfig::lq_params() const {
    if (n_principals != 2)
        throw ConfigError("the closed-form solver requires exactly two principals");
    if (spec_name != "lq")
        throw ConfigError("the closed-form solver requires the linear-quadratic spec");
    lq::LQParams p;
    p.k1 = efficiency.empty() ? 1.0 : efficiency.at(0);
    p.k2 = efficiency.empty() ? 1.0 : efficiency.at(1);
    if (sigma) {
        Eigen::Matrix2d s;
        s << (*sigma)[0][0], (*sigma)[0][1], (*sigma)[1][0], (*sigma)[1][1];
        p.sigma = s;
    } else {
        p.rho = rho.value_or(0.0);
    }
    p.gamma1 = appetence.empty() ? 0.0 : appetence.at(0);
    p.gamma2 = appetence.empty() ? 0.0 : appetence.at(1);
    p.risk_aversion = risk_aversion;
    p.reservation_utility = reservation_utility;
    p.horizon = horizon;
    p.x0 = Eigen::Vector2d(x0.empty() ? 0.0 : x0.at(0), x0.empty() ? 0.0 : x0.at(1));
    p.y_share = y_share;
    p.alpha_share = alpha_share;
    p.validate();
    return p;
}

hjb::Grid RunConfig::make_grid(const ModelParams& params) const {
    const hjb::Scheme s =
        scheme == "explicit" ? hjb::Scheme::Explicit : hjb::Scheme::SemiImplicit;
    return hjb::Grid::make(params, x_lo, x_hi, n_x, n_t, s);
}

sim::SimConfig RunConfig::sim_config() const {
    sim::SimConfig c;
    c.n_paths = n_paths;
    c.dt = dt;
    c.seed = seed;
    c.antithetic = antithetic;
    c.threads = threads;
    return c;
}

}  // namespace agency::cli
