// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Usage: acceptance <path-to-cli-binary> <scratch-dir>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "agency/hjb.hpp"
#include "agency/lq.hpp"
#include "agency/sim.hpp"
#include "support/oracles.hpp"

#ifdef __unix__
#include <sys/wait.h>
#endif

using namespace agency;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
    std::cout << id << (pass ? "  PASS  " : "  FAIL  ") << detail << std::endl;
    if (!pass) ++g_failures;
}

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

lq::LQParams flagship() {
    lq::LQParams p;
    p.rho = 0.0;
    return p;
}

Vector vec2(double a, double b) { return Eigen::Vector2d(a, b); }

// ---------------------------------------------------------------------------

void criterion_1() {
    const auto t0 = Clock::now();
    const auto sol = lq::solve(flagship());
    const double elapsed = ms_since(t0);

    double dev = 0.0;
    auto track = [&](double got, double want) { dev = std::max(dev, std::abs(got - want)); };
    track(sol.nu_star(0), 1.0 / 3.0);
    track(sol.nu_star(1), 1.0 / 3.0);
    track(sol.nu_aggregated(0), 0.5);
    track(sol.nu_aggregated(1), 0.5);
    track(sol.lambda, 4.0 / 9.0);
    track(sol.lambda_tilde, 2.0 / 9.0);
    track(sol.delta, 2.0 / 9.0);
    track(sol.delta_a, 0.5);

    std::ostringstream os;
    os << "lq golden values: max deviation " << dev << ", solve " << elapsed << " ms";
    report("C1", dev <= 1e-12 && elapsed < 1.0, os.str());
}

void criterion_2() {
    const auto t0 = Clock::now();
    lq::LQParams p = flagship();
    bool ok = true;
    double prev = std::numeric_limits<double>::infinity();
    double last_gap = 0.0;
    for (double ra : {1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6}) {
        p.risk_aversion = ra;
        const auto sol = lq::solve(p);
        const double gap = (sol.nu_star - sol.nu_aggregated).norm();
        ok = ok && gap < prev;
        prev = gap;
        last_gap = gap;
    }
    ok = ok && last_gap < 1e-5;
    p.risk_aversion = 0.0;
    const auto sol0 = lq::solve(p);
    const bool exact = (sol0.nu_star - sol0.nu_aggregated).norm() == 0.0 &&
                       (sol0.nu_star - p.K() * p.Gamma()).norm() == 0.0 &&
                       (sol0.nu_star - sol0.nu_first_best).norm() == 0.0;
    const double elapsed = ms_since(t0);
    std::ostringstream os;
    os << "competitive vs aggregated gap: strictly decreasing in R_A, gap(1e-6) = " << last_gap
       << ", exact first-best coincidence at R_A = 0, " << elapsed << " ms";
    report("C2", ok && exact && elapsed < 10.0, os.str());
}

void criterion_3() {
    std::mt19937 rng(101);
    std::uniform_real_distribution<double> uk(0.4, 2.5), ur(-0.9, 0.9), ug(0.0, 1.0),
        ua(0.0, 2.0), ux(-3.0, 3.0), ut(0.0, 1.0);
    double max_gap = 0.0, max_res = 0.0;
    for (int i = 0; i < 1000; ++i) {
        lq::LQParams p;
        p.k1 = uk(rng);
        p.k2 = uk(rng);
        p.rho = ur(rng);
        p.gamma1 = ug(rng);
        p.gamma2 = ug(rng);
        p.risk_aversion = ua(rng);
        p.reservation_utility = -std::exp(ur(rng));
        p.horizon = 0.5 + ug(rng);
        const auto sol = lq::solve(p);
        const double t = ut(rng) * p.horizon;
        const Eigen::Vector2d x(ux(rng), ux(rng));
        max_gap = std::max(max_gap, std::abs(lq::value_V(t, x, sol, p) -
                                             lq::value_vi(1, t, x, sol, p) -
                                             lq::value_vi(2, t, x, sol, p)));
        const auto [r1, r2] = lq::hjb_residuals(t, x, sol, p);
        max_res = std::max({max_res, std::abs(r1), std::abs(r2)});
    }
    std::ostringstream os;
    os << "decomposition v1 + v2 = V: max gap " << max_gap << " (tol 1e-12), coupled-equation "
       << "residuals " << max_res << " (tol 1e-10), 1000 draws";
    report("C3", max_gap <= 1e-12 && max_res <= 1e-10, os.str());
}

struct CurvedErrors {
    double v = 0.0, u1 = 0.0, bbar = 0.0, b1 = 0.0;
};

CurvedErrors curved_run(int n_x, double horizon, const oracles::ExpTransformOracle& oracle,
                        const std::function<double(const Vector&)>& terminal) {
    ModelParams p;
    p.n_principals = 2;
    p.horizon = horizon;
    p.x0 = Vector::Zero(2);
    p.sigma = Matrix::Identity(2, 2);
    p.risk_aversion = 1.0;
    p.appetence = Vector::Zero(2);
    p.validate();
    auto spec = DriftCostSpec::linear_quadratic(vec2(1.0, 1.0));
    const hjb::Grid g = hjb::Grid::make(p, -3.0, 3.0, n_x);
    const hjb::Terminal half =
        hjb::Terminal::general([terminal](const Vector& x) { return 0.5 * terminal(x); });
    const auto sol = hjb::solve_all(g, spec, p, {half, half}, /*threads=*/1);
    const auto betas = hjb::construct_betas(sol, spec, p);

    const std::vector<Vector> probes = {vec2(-1.0, -1.0), vec2(-0.5, 0.5), vec2(0.0, 0.0),
                                        vec2(1.0, -0.5),  vec2(1.0, 1.0),  vec2(0.5, 0.0)};
    CurvedErrors e;
    for (const auto& probe : probes) {
        std::vector<int> m(2);
        for (int d = 0; d < 2; ++d) m[d] = static_cast<int>(std::round((probe(d) + 3.0) / g.h));
        const std::size_t node = g.index(m);
        const double vref = oracle.value(0.0, probe);
        const Vector gref = oracle.gradient(0.0, probe);
        const Vector bbar_ref = gref / 3.0;
        const Vector b1_ref = gref / 2.0 - bbar_ref;
        e.v = std::max(e.v, std::abs(sol.V.at(0, node) - vref));
        e.u1 = std::max(e.u1, std::abs(sol.u_tilde[0].at(0, node) - 0.5 * vref));
        for (int d = 0; d < 2; ++d) {
            e.bbar = std::max(e.bbar, std::abs(betas.beta_bar.at(0, node, d) - bbar_ref(d)));
            e.b1 = std::max(e.b1, std::abs(betas.beta_i[0].at(0, node, d) - b1_ref(d)));
        }
    }
    return e;
}

void criterion_4() {
    const auto t0 = Clock::now();

    // (a) Flagship affine instance on [-3,3]^2 with h = 0.1: interior match
    // within 1e-3 against the closed forms.
    const lq::LQParams lp = flagship();
    const auto lsol = lq::solve(lp);
    ModelParams p = lp.to_model_params();
    p.validate();
    auto spec = lp.to_spec();
    const hjb::Grid g = hjb::Grid::make(p, -3.0, 3.0, 61);
    const auto sol = hjb::solve_all(
        g, spec, p, {hjb::Terminal::liquidation_of(p, 0), hjb::Terminal::liquidation_of(p, 1)},
        /*threads=*/1);
    const auto betas = hjb::construct_betas(sol, spec, p);
    double ev = 0.0, eu = 0.0, ebar = 0.0, eb1 = 0.0;
    const Eigen::Vector2d bsum = lsol.beta1 + lsol.beta2;
    for (std::size_t node = 0; node < g.n_nodes; ++node) {
        if (!g.is_interior(node)) continue;
        const Vector x = g.coords(node);
        const Eigen::Vector2d x2(x(0), x(1));
        ev = std::max(ev, std::abs(sol.V.at(0, node) - lq::value_V(0.0, x2, lsol, lp)));
        eu = std::max(eu, std::abs(sol.u_tilde[0].at(0, node) - lq::value_vi(1, 0.0, x2, lsol, lp)));
        for (int d = 0; d < 2; ++d) {
            ebar = std::max(ebar, std::abs(betas.beta_bar.at(0, node, d) - bsum(d)));
            eb1 = std::max(eb1, std::abs(betas.beta_i[0].at(0, node, d) - lsol.beta1(d)));
        }
    }
    const bool match = ev <= 1e-3 && eu <= 1e-3 && ebar <= 1e-3 && eb1 <= 1e-3;

    // (b) Refinement order on the curved-terminal variant of the same
    // instance (the affine run is reproduced at rounding level, so the order
    // signal needs genuine curvature; the oracle is the exponential-transform
    // quadrature solution over a short horizon where the boundary condition
    // is exact to well below the scheme error).
    const double horizon = 0.1;
    auto terminal = [](const Vector& x) {
        return x(0) + x(1) + 0.5 * std::cos(2.0 * x(0)) * std::cos(2.0 * x(1));
    };
    auto terminal_grad = [](const Vector& x) {
        return vec2(1.0 - std::sin(2.0 * x(0)) * std::cos(2.0 * x(1)),
                    1.0 - std::cos(2.0 * x(0)) * std::sin(2.0 * x(1)));
    };
    const oracles::ExpTransformOracle oracle(terminal, terminal_grad, 2.0 / 9.0, 1.0, horizon);
    const CurvedErrors coarse = curved_run(61, horizon, oracle, terminal);
    const CurvedErrors fine = curved_run(121, horizon, oracle, terminal);
    const std::array<double, 4> orders = {
        std::log2(coarse.v / fine.v), std::log2(coarse.u1 / fine.u1),
        std::log2(coarse.bbar / fine.bbar), std::log2(coarse.b1 / fine.b1)};
    bool order_ok = true;
    double min_order = 1e300;
    for (double o : orders) {
        order_ok = order_ok && o >= 1.8;
        min_order = std::min(min_order, o);
    }
    const double elapsed = ms_since(t0);
    std::ostringstream os;
    os << "grid vs closed forms: max interior errors V " << ev << ", u1 " << eu << ", beta_bar "
       << ebar << ", beta_1 " << eb1 << " (tol 1e-3); refinement order >= " << min_order
       << " (need 1.8); " << elapsed / 1000.0 << " s single-threaded";
    report("C4", match && order_ok && elapsed < 30000.0, os.str());
}

void criterion_5() {
    const auto t0 = Clock::now();
    const lq::LQParams lp = flagship();
    const auto sol = lq::solve(lp);
    ModelParams p = lp.to_model_params();
    p.validate();
    const auto spec = lp.to_spec();
    sim::SimConfig config;
    config.n_paths = 100000;
    config.dt = 1e-3;
    config.seed = 20240817;
    const auto ens = sim::simulate_paths(p, spec, sim::lq_equilibrium_effort(sol), config);
    const auto est = sim::agent_utility(ens, sim::lq_equilibrium_contracts(lp, sol));
    const double elapsed = ms_since(t0);
    const double gap = std::abs(est.mean - lp.reservation_utility);
    std::ostringstream os;
    os << "agent utility " << est.mean << " +- " << est.se << " vs reservation "
       << lp.reservation_utility << " (|gap| = " << gap << " <= 3 SE), SE < 5e-3, "
       << elapsed / 1000.0 << " s multi-threaded";
    report("C5", gap <= 3.0 * est.se && est.se < 5e-3 && elapsed < 60000.0, os.str());
}

void criterion_6() {
    const lq::LQParams lp = flagship();
    const auto sol = lq::solve(lp);
    ModelParams p = lp.to_model_params();
    p.validate();
    const auto spec = lp.to_spec();
    const auto contracts = sim::lq_equilibrium_contracts(lp, sol);
    sim::SimConfig config;
    config.n_paths = 100000;
    config.dt = 0.01;
    config.seed = 7011;

    const auto deviations = sim::default_deviations(p, 0, {0.05, 0.2}, true);
    const auto table = sim::nash_deviation_check(contracts, deviations, spec, p, config);

    bool offsets_ok = true;
    double free_rider_delta = 0.0, free_rider_se = 0.0;
    for (const auto& row : table.rows) {
        if (row.label.rfind("free_rider", 0) == 0) {
            free_rider_delta = row.delta;
            free_rider_se = row.delta_se;
        } else {
            offsets_ok = offsets_ok && row.delta <= 2.0 * row.delta_se;
        }
    }
    const bool free_rider_ok = free_rider_delta < -2.0 * free_rider_se;

    // Concave delta-versus-offset profile peaking at zero, per coordinate.
    bool concave_ok = true;
    double worst_vertex = 0.0;
    for (int d = 0; d < 2; ++d) {
        std::vector<double> xs = {-0.2, -0.05, 0.0, 0.05, 0.2};
        std::vector<double> ys;
        for (double o : xs) {
            if (o == 0.0) {
                ys.push_back(0.0);
                continue;
            }
            for (const auto& row : table.rows) {
                Vector e = Vector::Zero(2);
                e(d) = o;
                if (row.label == sim::Deviation::beta(0, e).label) ys.push_back(row.delta);
            }
        }
        const auto fit = oracles::fit_quadratic(xs, ys);
        concave_ok = concave_ok && fit.a < 0.0 && std::abs(fit.vertex()) <= 0.05;
        worst_vertex = std::max(worst_vertex, std::abs(fit.vertex()));
    }

    std::ostringstream os;
    os << "non-deviation: " << table.rows.size() - 1 << " offsets within +2 SE: "
       << (offsets_ok ? "yes" : "no") << "; concave profile, |vertex| <= " << worst_vertex
       << "; free-rider delta " << free_rider_delta << " < -2 SE (" << -2.0 * free_rider_se << ")";
    report("C6", offsets_ok && free_rider_ok && concave_ok && !table.violation, os.str());
}

void criterion_7() {
    // d(rho) increasing with nonnegative second differences.
    lq::LQParams p = flagship();
    p.gamma1 = 0.8;
    p.gamma2 = 0.2;
    p.risk_aversion = 1.0;
    std::vector<double> d;
    const int n = 100;
    for (int i = 0; i < n; ++i) d.push_back(lq::proportion_gap(-1.0 + 1.9 * i / (n - 1), p));
    bool inc = true, convex = true;
    for (int i = 0; i + 1 < n; ++i) inc = inc && d[i + 1] > d[i];
    for (int i = 0; i + 2 < n; ++i) convex = convex && (d[i + 2] - 2 * d[i + 1] + d[i] >= -1e-9);

    // delta_a >= delta on 1000 random identity-volatility draws.
    std::mt19937 rng(301);
    std::uniform_real_distribution<double> uk(0.4, 2.5), ug(0.0, 1.0), ua(0.0, 2.0);
    bool remuneration_ok = true;
    for (int i = 0; i < 1000; ++i) {
        lq::LQParams q = flagship();
        q.k1 = uk(rng);
        q.k2 = uk(rng);
        q.gamma1 = ug(rng);
        q.gamma2 = ug(rng);
        q.risk_aversion = ua(rng);
        const auto sol = lq::solve(q);
        remuneration_ok = remuneration_ok && sol.delta_a >= sol.delta - 1e-12;
    }

    // Effort ranking follows the appetence ranking at equal efficiencies.
    bool sign_ok = true;
    for (int i = 0; i < 500; ++i) {
        lq::LQParams q = flagship();
        q.k1 = q.k2 = uk(rng);
        q.gamma1 = ug(rng);
        q.gamma2 = ug(rng);
        q.risk_aversion = ua(rng);
        q.rho = std::uniform_real_distribution<double>(-0.9, 0.9)(rng);
        const auto sol = lq::solve(q);
        const double s = sol.nu_star(0) - sol.nu_star(1);
        const double g = q.gamma1 - q.gamma2;
        if (std::abs(g) > 1e-9) sign_ok = sign_ok && (s * g > 0.0);
    }

    std::ostringstream os;
    os << "stylized facts: d(rho) increasing " << (inc ? "yes" : "no") << ", convex "
       << (convex ? "yes" : "no") << "; delta_a >= delta on 1000 draws "
       << (remuneration_ok ? "yes" : "no") << "; effort ranking follows appetence "
       << (sign_ok ? "yes" : "no");
    report("C7", inc && convex && remuneration_ok && sign_ok, os.str());
}

void criterion_8() {
    const auto cmp = lq::effort_components_correlated(flagship());
    const bool flagged = cmp.max_discrepancy > 0.0;
    const double matrix_err = (cmp.nu_matrix - vec2(1.0 / 3.0, 1.0 / 3.0)).cwiseAbs().maxCoeff();
    std::ostringstream os;
    os << "printed-component comparison flag " << cmp.max_discrepancy
       << " (nonzero), matrix route matches the decoupled limit to " << matrix_err;
    report("C8", flagged && matrix_err <= 1e-12, os.str());
}

int run_cli(const std::string& cli, const std::string& args) {
    const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
#ifdef __unix__
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -1;
#else
    return status;
#endif
}

void criterion_9(const std::string& cli, const std::filesystem::path& scratch) {
    namespace fs = std::filesystem;
    fs::remove_all(scratch);
    fs::create_directories(scratch);
    const fs::path cfg = scratch / "config.json";
    {
        std::ofstream out(cfg);
        out << R"({"model": {"appetence": [0.7, 0.2], "efficiency": [1.2, 0.9]},
                   "sim": {"n_paths": 2000, "dt": 0.01, "seed": 7},
                   "sweep": {"parameter": "rho", "lo": -0.9, "hi": 0.9, "count": 12},
                   "output": {"format": "json"}})";
    }
    bool ok = true;
    std::string detail;
    for (const std::string sub : {"lq", "sensitivity", "simulate"}) {
        // Two runs with identical config, seed, and output directory; the
        // first run's files are snapshotted before the rerun overwrites them.
        const fs::path out = scratch / (sub + "_out");
        const fs::path snapshot = scratch / (sub + "_snapshot");
        for (int run = 0; run < 2; ++run) {
            const int rc = run_cli(cli, sub + " --config " + cfg.string() + " --out " +
                                            out.string());
            if (rc != 0) {
                ok = false;
                detail = sub + " exited with " + std::to_string(rc);
                break;
            }
            if (run == 0) {
                fs::remove_all(snapshot);
                fs::copy(out, snapshot, fs::copy_options::recursive);
            }
        }
        if (!ok) break;
        for (const auto& entry : fs::directory_iterator(snapshot)) {
            const auto rel = entry.path().filename();
            std::ifstream a(entry.path(), std::ios::binary);
            std::ifstream b(out / rel, std::ios::binary);
            std::ostringstream sa, sb;
            sa << a.rdbuf();
            sb << b.rdbuf();
            if (sa.str() != sb.str() || sa.str().empty()) {
                ok = false;
                detail = sub + "/" + rel.string() + " differs between identical runs";
            }
        }
    }
    if (ok) detail = "lq, sensitivity, simulate outputs byte-identical across repeated runs";
    report("C9", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::cerr << "usage: acceptance <path-to-cli> <scratch-dir>\n";
        return 64;
    }
    const std::string cli = argv[1];
    const std::filesystem::path scratch = argv[2];

    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9(cli, scratch);

    if (g_failures == 0) {
        std::cout << "all 9 criteria passed" << std::endl;
    } else {
        std::cout << g_failures << " criteria failed" << std::endl;
    }
    return g_failures;
}
