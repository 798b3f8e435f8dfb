#include <cmath>

#include "agency/sim.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace agency;
using namespace agency::sim;

namespace {

lq::LQParams symmetric_lq() {
    lq::LQParams p;
    p.rho = 0.0;
    return p;
}

struct Setup {
    lq::LQParams lp;
    lq::LQSolution sol;
    ModelParams params;
    DriftCostSpec spec;
    std::vector<ContractTriple> contracts;
    Policy effort;
    Policy z_ref;
};

Setup equilibrium_setup(lq::LQParams lp) {
    Setup s{lp,
            lq::solve(lp),
            lp.to_model_params(),
            lp.to_spec(),
            {},
            Policy{},
            Policy{}};
    s.params.validate();
    s.contracts = lq_equilibrium_contracts(lp, s.sol);
    s.effort = lq_equilibrium_effort(s.sol);
    s.z_ref = lq_equilibrium_z(s.sol);
    return s;
}

SimConfig small_config(std::uint64_t seed = 42) {
    SimConfig c;
    c.n_paths = 10000;
    c.dt = 0.01;
    c.seed = seed;
    return c;
}

Vector vec2(double a, double b) { return Eigen::Vector2d(a, b); }

}  // namespace

TEST_CASE("config validation") {
    const Setup s = equilibrium_setup(symmetric_lq());
    SimConfig c = small_config();
    CHECK_NOTHROW(c.validate(s.params));
    SUBCASE("too few paths") {
        c.n_paths = 50;
        CHECK_THROWS_AS(c.validate(s.params), ConfigError);
    }
    SUBCASE("dt beyond the horizon") {
        c.dt = 2.0;
        CHECK_THROWS_AS(c.validate(s.params), ConfigError);
    }
    SUBCASE("non-divisible dt") {
        c.dt = 0.3;
        CHECK_THROWS_AS(c.validate(s.params), ConfigError);
    }
    SUBCASE("budget") {
        c.n_paths = 2000000;
        c.dt = 1e-3;
        c.path_step_budget = 1e8;
        CHECK_THROWS_AS(c.validate(s.params), ConfigError);
    }
}

TEST_CASE("same seed reproduces the ensemble bitwise") {
    const Setup s = equilibrium_setup(symmetric_lq());
    SimConfig c = small_config(7);
    c.n_paths = 100;
    const PathEnsemble e1 = simulate_paths(s.params, s.spec, s.effort, c);
    const PathEnsemble e2 = simulate_paths(s.params, s.spec, s.effort, c);
    Eigen::MatrixXd a, b;
    for (std::size_t p : {std::size_t{0}, std::size_t{17}, std::size_t{99}}) {
        e1.path(p, a);
        e2.path(p, b);
        REQUIRE(a.rows() == b.rows());
        CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    }
    // Different seeds decorrelate.
    SimConfig c2 = c;
    c2.seed = 8;
    const PathEnsemble e3 = simulate_paths(s.params, s.spec, s.effort, c2);
    e1.path(0, a);
    e3.path(0, b);
    CHECK((a - b).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("driftless ensemble is a martingale; constant drift integrates exactly") {
    const Setup s = equilibrium_setup(symmetric_lq());
    SimConfig c = small_config(3);

    SUBCASE("zero policy, zero drift") {
        const Policy zero = Policy::constant_effort(Vector::Zero(2));
        const PathEnsemble ens = simulate_paths(s.params, s.spec, zero, c);
        std::vector<double> x1(ens.n_paths());
        Eigen::MatrixXd X;
        for (std::size_t p = 0; p < ens.n_paths(); ++p) {
            ens.path(p, X);
            x1[p] = X(X.rows() - 1, 0);
        }
        const auto est = mean_se(x1);
        CHECK(std::abs(est.mean - 0.0) <= 3.0 * est.se);
    }

    SUBCASE("equilibrium effort: E[X_T] = x0 + T K (K M Gamma)") {
        const PathEnsemble ens = simulate_paths(s.params, s.spec, s.effort, c);
        const Vector expected =
            s.params.x0 + s.params.horizon * s.spec.k_diag().cwiseProduct(s.sol.nu_star);
        Eigen::MatrixXd X;
        for (int d = 0; d < 2; ++d) {
            std::vector<double> xs(ens.n_paths());
            for (std::size_t p = 0; p < ens.n_paths(); ++p) {
                ens.path(p, X);
                xs[p] = X(X.rows() - 1, d);
            }
            const auto est = mean_se(xs);
            CHECK(std::abs(est.mean - expected(d)) <= 3.0 * est.se);
        }
    }
}

TEST_CASE("contract accrual") {
    const Setup s = equilibrium_setup(symmetric_lq());
    SimConfig c = small_config(11);
    c.n_paths = 2000;

    SUBCASE("pure drift contract accrues exactly") {
        ContractTriple flat;
        flat.y = 0.7;
        flat.alpha = ScalarPolicy::constant_rate(0.3);
        flat.beta = Policy::constant_effort(Vector::Zero(2));
        const PathEnsemble ens = simulate_paths(s.params, s.spec, s.effort, c);
        const auto xi = accrue_contract(ens, flat);
        for (double v : xi) CHECK(v == doctest::Approx(0.7 + 0.3 * 1.0).epsilon(1e-12));
    }

    SUBCASE("doubling beta doubles the stochastic part pathwise") {
        ContractTriple base;
        base.y = 0.0;
        base.alpha = ScalarPolicy::constant_rate(0.0);
        base.beta = Policy::constant_effort(vec2(0.4, -0.2));
        ContractTriple doubled = base;
        doubled.beta = Policy::constant_effort(vec2(0.8, -0.4));
        const PathEnsemble ens = simulate_paths(s.params, s.spec, s.effort, c);
        const auto xi1 = accrue_contract(ens, base);
        const auto xi2 = accrue_contract(ens, doubled);
        for (std::size_t p = 0; p < xi1.size(); ++p) CHECK(xi2[p] == 2.0 * xi1[p]);
    }

    SUBCASE("equilibrium wage bill: mean of xi1 + xi2 near r0 + delta T") {
        const PathEnsemble ens = simulate_paths(s.params, s.spec, s.effort, c);
        const auto xi1 = accrue_contract(ens, s.contracts[0]);
        const auto xi2 = accrue_contract(ens, s.contracts[1]);
        std::vector<double> total(xi1.size());
        for (std::size_t p = 0; p < total.size(); ++p) total[p] = xi1[p] + xi2[p];
        const auto est = mean_se(total);
        const double expected = s.sol.r0 + s.sol.delta * s.params.horizon;
        CHECK(std::abs(est.mean - expected) <= 3.0 * est.se);
    }
}

TEST_CASE("agent utility") {
    SUBCASE("participation binds at the equilibrium: estimate near R0") {
        const Setup s = equilibrium_setup(symmetric_lq());
        SimConfig c = small_config(5);
        const PathEnsemble ens = simulate_paths(s.params, s.spec, s.effort, c);
        const auto est = agent_utility(ens, s.contracts);
        CHECK(std::abs(est.mean - (-1.0)) <= 3.0 * est.se);
        CHECK(est.se < 0.02);
    }

    SUBCASE("deterministic wage, zero effort: exact value") {
        const Setup s = equilibrium_setup(symmetric_lq());
        SimConfig c = small_config(9);
        c.n_paths = 200;
        ContractTriple wage;
        wage.y = 0.8;
        wage.alpha = ScalarPolicy::constant_rate(0.0);
        wage.beta = Policy::constant_effort(Vector::Zero(2));
        const Policy zero = Policy::constant_effort(Vector::Zero(2));
        const PathEnsemble ens = simulate_paths(s.params, s.spec, zero, c);
        const auto est = agent_utility(ens, {wage});
        CHECK(est.mean == doctest::Approx(-std::exp(-0.8)).epsilon(1e-12));
        CHECK(est.se <= 1e-12);
    }

    SUBCASE("risk-neutral limit: first-order expansion at small risk aversion") {
        lq::LQParams lp = symmetric_lq();
        lp.risk_aversion = 1e-3;
        const Setup s = equilibrium_setup(lp);
        SimConfig c = small_config(13);
        const PathEnsemble ens = simulate_paths(s.params, s.spec, s.effort, c);
        const auto est = agent_utility(ens, s.contracts);
        // E[wage - cost] = r0 + T (delta - |nu*|^2/2): the wage bill carries
        // r0 + delta T while the effort cost burns |nu*|^2 T / 2.
        const double mean_net = s.sol.r0 + s.params.horizon *
                                               (s.sol.delta - 0.5 * s.sol.nu_star.squaredNorm());
        const double first_order = -1.0 + lp.risk_aversion * mean_net;
        CHECK(std::abs(est.mean - first_order) <= 3.0 * est.se + 1e-5);
    }

    SUBCASE("binding participation across instances (3 SE)") {
        for (auto [k1, gamma1, ra] : {std::tuple{1.0, 0.0, 1.0}, std::tuple{1.5, 0.6, 0.7},
                                      std::tuple{0.8, 0.3, 1.8}}) {
            lq::LQParams lp = symmetric_lq();
            lp.k1 = k1;
            lp.gamma1 = gamma1;
            lp.risk_aversion = ra;
            lp.reservation_utility = -0.8;
            const Setup s = equilibrium_setup(lp);
            SimConfig c = small_config(17);
            const PathEnsemble ens = simulate_paths(s.params, s.spec, s.effort, c);
            const auto est = agent_utility(ens, s.contracts);
            CHECK(std::abs(est.mean - lp.reservation_utility) <= 3.0 * est.se);
        }
    }
}

TEST_CASE("variance tooling") {
    const Setup s = equilibrium_setup(symmetric_lq());

    SUBCASE("antithetic pairs flip the Gaussians and reduce variance") {
        SimConfig plain = small_config(21);
        SimConfig anti = plain;
        anti.antithetic = true;
        Eigen::MatrixXd a, b;
        const PathEnsemble ea = simulate_paths(s.params, s.spec, s.effort, anti);
        ea.path(0, a);
        ea.path(1, b);
        // Driftless part mirrors: X - x0 - drift t flips sign.
        const Vector drift = s.spec.k_diag().cwiseProduct(s.sol.nu_star);
        const double t_end = s.params.horizon;
        const Vector na = Vector(a.row(a.rows() - 1)) - drift * t_end;
        const Vector nb = Vector(b.row(b.rows() - 1)) - drift * t_end;
        CHECK((na + nb).norm() <= 1e-12);

        const PathEnsemble ep = simulate_paths(s.params, s.spec, s.effort, plain);
        const auto up = agent_utility(ep, s.contracts);
        const auto ua = agent_utility(ea, s.contracts);
        CHECK(ua.se <= up.se * 1.05);
        CHECK(std::abs(ua.mean - (-1.0)) <= 3.5 * ua.se);
    }

    SUBCASE("halving dt moves the estimate by less than one standard error") {
        SimConfig coarse = small_config(23);
        SimConfig fine = coarse;
        fine.dt = 0.005;
        const auto uc =
            agent_utility(simulate_paths(s.params, s.spec, s.effort, coarse), s.contracts);
        const auto uf =
            agent_utility(simulate_paths(s.params, s.spec, s.effort, fine), s.contracts);
        CHECK(std::abs(uc.mean - uf.mean) <= uc.se);
    }
}

TEST_CASE("agent best-response check") {
    SUBCASE("equilibrium contracts: the best response wins over all offsets") {
        const Setup s = equilibrium_setup(symmetric_lq());
        SimConfig c = small_config(31);
        const auto report = agent_best_response_check(s.contracts, s.spec, s.params, c);
        CHECK_FALSE(report.violation);
        CHECK(report.rows.size() == 9);  // base + 4N offsets
        CHECK_NOTHROW(require_no_violation(report));
        for (std::size_t i = 1; i < report.rows.size(); ++i)
            CHECK(report.rows[i].delta <= 2.0 * report.rows[i].delta_se);
    }

    SUBCASE("zero contracts: zero effort is optimal") {
        const Setup s = equilibrium_setup(symmetric_lq());
        SimConfig c = small_config(37);
        c.n_paths = 4000;
        std::vector<ContractTriple> zero(2);
        for (auto& ct : zero) {
            ct.y = 0.0;
            ct.alpha = ScalarPolicy::constant_rate(0.0);
            ct.beta = Policy::constant_effort(Vector::Zero(2));
        }
        const auto report = agent_best_response_check(zero, s.spec, s.params, c);
        CHECK_FALSE(report.violation);
        // The base response to Z = 0 is zero effort with utility exactly -1.
        CHECK(report.rows[0].utility.mean == doctest::Approx(-1.0).epsilon(1e-12));
    }

    SUBCASE("doubled sensitivities move the best response to K(2 M Gamma)") {
        const Setup s = equilibrium_setup(symmetric_lq());
        SimConfig c = small_config(41);
        std::vector<ContractTriple> doubled = s.contracts;
        doubled[0].beta = Policy::constant_effort(Vector(2.0 * s.sol.beta1));
        doubled[1].beta = Policy::constant_effort(Vector(2.0 * s.sol.beta2));
        // Offer the old (undoubled) response as a named alternative: it must lose.
        const auto report = agent_best_response_check(
            doubled, s.spec, s.params, c,
            {{"stale_response", Policy::constant_effort(s.sol.nu_star)}});
        CHECK_FALSE(report.violation);
        const auto& stale = report.rows.back();
        CHECK(stale.label == "stale_response");
        CHECK(stale.delta < -2.0 * stale.delta_se);
    }
}

TEST_CASE("nash deviation check") {
    const Setup s = equilibrium_setup(symmetric_lq());

    SUBCASE("the unchanged contract gives a delta of exactly zero") {
        SimConfig c = small_config(43);
        c.n_paths = 500;
        const auto table = nash_deviation_check(
            s.contracts, {Deviation::beta(0, Vector::Zero(2))}, s.spec, s.params, c);
        REQUIRE(table.rows.size() == 1);
        CHECK(table.rows[0].delta == 0.0);
        CHECK(table.rows[0].delta_se == 0.0);
        CHECK_FALSE(table.violation);
    }

    SUBCASE("offsets in both coordinates stay within two standard errors") {
        SimConfig c = small_config(47);
        const auto deviations = default_deviations(s.params, 0, {0.05, 0.2}, false);
        const auto table = nash_deviation_check(s.contracts, deviations, s.spec, s.params, c);
        CHECK_FALSE(table.violation);
        CHECK_NOTHROW(require_no_violation(table));
        for (const auto& row : table.rows) CHECK(row.delta <= 2.0 * row.delta_se);
    }

    SUBCASE("free riding is strictly worse for the deviating principal") {
        SimConfig c = small_config(53);
        const auto table = nash_deviation_check(s.contracts, {Deviation::free_rider(0)}, s.spec,
                                                s.params, c);
        REQUIRE(table.rows.size() == 1);
        // Closed-form delta is -5/9 on this instance.
        CHECK(table.rows[0].delta < -2.0 * table.rows[0].delta_se);
        CHECK(table.rows[0].delta == doctest::Approx(-5.0 / 9.0).epsilon(0.05));
    }

    SUBCASE("the delta-versus-offset profile is concave with vertex near zero") {
        SimConfig c = small_config(59);
        std::vector<double> offsets = {-0.2, -0.05, 0.0, 0.05, 0.2};
        std::vector<double> deltas;
        for (double o : offsets) {
            Vector e = Vector::Zero(2);
            e(0) = o;
            const auto table =
                nash_deviation_check(s.contracts, {Deviation::beta(0, e)}, s.spec, s.params, c);
            deltas.push_back(table.rows[0].delta);
        }
        const auto fit = oracles::fit_quadratic(offsets, deltas);
        CHECK(fit.a < 0.0);
        CHECK(std::abs(fit.vertex()) <= 0.05);
    }
}

TEST_CASE("equilibrium residuals") {
    const Setup s = equilibrium_setup(symmetric_lq());
    SimConfig c = small_config(61);
    c.n_paths = 300;
    const PathEnsemble ens = simulate_paths(s.params, s.spec, s.effort, c);

    SUBCASE("exact at the closed-form equilibrium") {
        const auto r = equilibrium_residuals(s.contracts, s.spec, s.params, ens, s.sol.r0, s.z_ref);
        CHECK(r.y_gap <= 1e-12);
        CHECK(r.alpha_gap <= 1e-12);
        CHECK(r.beta_gap <= 1e-12);
    }

    SUBCASE("a drift-rate bump shows up as exactly that residual") {
        auto bumped = s.contracts;
        const double old_rate = *bumped[0].alpha.constant;
        bumped[0].alpha = ScalarPolicy::constant_rate(old_rate + 0.1);
        const auto r = equilibrium_residuals(bumped, s.spec, s.params, ens, s.sol.r0, s.z_ref);
        CHECK(r.alpha_gap == doctest::Approx(0.1).epsilon(1e-12));
    }

    SUBCASE("grid-derived contracts sit within interpolation error") {
        ModelParams p = s.params;
        const auto spec = s.spec;
        const hjb::Grid g = hjb::Grid::make(p, -3.0, 3.0, 41);
        const auto gsol = hjb::solve_all(
            g, spec, p, {hjb::Terminal::liquidation_of(p, 0), hjb::Terminal::liquidation_of(p, 1)});
        const auto betas = hjb::construct_betas(gsol, spec, p);
        const auto gc = grid_contracts(gsol, betas, spec, p);
        SimConfig cg = c;
        cg.n_paths = 150;
        cg.dt = 0.05;
        const PathEnsemble gens = simulate_paths(p, spec, gc.effort, cg);
        const auto r =
            equilibrium_residuals(gc.contracts, spec, p, gens, p.r0(), s.z_ref);
        CHECK(r.y_gap <= 1e-12);
        CHECK(r.alpha_gap <= 1e-6);  // affine instance: constants up to rounding
        CHECK(r.beta_gap <= 1e-6);
    }
}

TEST_CASE("non-finite policies are rejected by the sampled check") {
    const Setup s = equilibrium_setup(symmetric_lq());
    SimConfig c = small_config(63);
    c.n_paths = 100;
    const Policy bad = Policy::feedback([](double, const Vector& x) -> Vector {
        return Vector(x / (x.norm() - x.norm()));  // NaN everywhere
    });
    CHECK_THROWS_AS((void)simulate_paths(s.params, s.spec, bad, c), ConfigError);

    ContractTriple ct;
    ct.y = 0.0;
    ct.alpha = ScalarPolicy::feedback(
        [](double t, const Vector&) { return t > 0.4 ? std::nan("") : 0.0; });
    ct.beta = Policy::constant_effort(Vector::Zero(2));
    CHECK_THROWS_AS(validate_contract(ct, s.params), ConfigError);
}

TEST_CASE("overflow guard") {
    const Setup s = equilibrium_setup(symmetric_lq());
    SimConfig c = small_config(67);
    c.n_paths = 100;
    const Policy runaway = Policy::constant_effort(vec2(5e9, 0.0));
    const PathEnsemble ens = simulate_paths(s.params, s.spec, runaway, c);
    Eigen::MatrixXd X;
    CHECK_THROWS_AS(ens.path(0, X), NumericOverflow);
}

TEST_CASE("fused report and serialization") {
    const Setup s = equilibrium_setup(symmetric_lq());
    SimConfig c = small_config(71);
    c.n_paths = 2000;
    const auto report =
        run_report(s.params, s.spec, s.contracts, s.effort, c, s.sol.r0, s.z_ref);
    CHECK(report.predicted_agent_utility == doctest::Approx(-1.0));
    CHECK(std::abs(report.agent_utility.mean - (-1.0)) <= 3.0 * report.agent_utility.se);
    CHECK(report.principal_payoffs.size() == 2);
    // Principal payoff = lambda_tilde T - y_i at the equilibrium.
    const double expected = s.sol.lambda_tilde * s.params.horizon - s.sol.y_split.first;
    CHECK(std::abs(report.principal_payoffs[0].mean - expected) <=
          3.0 * report.principal_payoffs[0].se);
    CHECK(report.equilibrium_residuals.beta_gap <= 1e-12);

    const auto j = to_json(report);
    CHECK(j["schema"] == "agency.sim.v1");
    CHECK(j["agent_utility"]["n"] == 2000);
    CHECK(j.contains("note"));

    std::ostringstream os;
    dump_paths_csv(os, simulate_paths(s.params, s.spec, s.effort, c), s.contracts, 2);
    const std::string text = os.str();
    CHECK(text.find("# schema: agency.paths.v1") == 0);
    CHECK(text.find("path_id,t,x1,x2,xi_1,xi_2") != std::string::npos);
}
