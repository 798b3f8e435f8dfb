#include <benchmark/benchmark.h>

#include "agency/hjb.hpp"
#include "agency/lq.hpp"
#include "agency/sim.hpp"

namespace {

using namespace agency;

lq::LQParams flagship() {
    lq::LQParams p;
    p.rho = 0.0;
    p.gamma1 = 0.4;
    p.gamma2 = 0.1;
    p.k1 = 1.2;
    p.k2 = 0.8;
    return p;
}

ModelParams model2(double horizon) {
    ModelParams p;
    p.n_principals = 2;
    p.horizon = horizon;
    p.x0 = Vector::Zero(2);
    p.sigma = Matrix::Identity(2, 2);
    p.risk_aversion = 1.0;
    p.appetence = Vector::Zero(2);
    p.validate();
    return p;
}

void BM_lq_solve(benchmark::State& state) {
    const auto params = flagship();
    for (auto _ : state) {
        benchmark::DoNotOptimize(lq::solve(params));
    }
}
BENCHMARK(BM_lq_solve);

void BM_phi_inverse_newton(benchmark::State& state) {
    const ModelParams p = model2(1.0);
    const auto spec = DriftCostSpec::named("quartic", Eigen::Vector2d(1.0, 2.0));
    const Vector z = Eigen::Vector2d(0.8, -0.5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(hjb::phi_inverse(0.0, p.x0, z, spec, p));
    }
}
BENCHMARK(BM_phi_inverse_newton);

void BM_hjb_aggregated(benchmark::State& state) {
    const ModelParams p = model2(0.1);
    const auto spec = DriftCostSpec::linear_quadratic(Eigen::Vector2d(1.0, 1.0));
    const int n_x = static_cast<int>(state.range(0));
    const hjb::Grid g = hjb::Grid::make(p, -3.0, 3.0, n_x);
    for (auto _ : state) {
        benchmark::DoNotOptimize(hjb::solve_aggregated(g, spec, p, hjb::Terminal::aggregate_of(p)));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(g.n_nodes) * g.n_t);
}
BENCHMARK(BM_hjb_aggregated)->Arg(31)->Arg(61);

void BM_sim_paths(benchmark::State& state) {
    const auto lp = flagship();
    const auto sol = lq::solve(lp);
    ModelParams p = lp.to_model_params();
    p.validate();
    const auto spec = lp.to_spec();
    sim::SimConfig config;
    config.n_paths = 1000;
    config.dt = 0.01;
    config.seed = 1;
    config.threads = 1;
    const auto ens = sim::simulate_paths(p, spec, sim::lq_equilibrium_effort(sol), config);
    Eigen::MatrixXd x;
    for (auto _ : state) {
        for (std::size_t i = 0; i < config.n_paths; ++i) ens.path(i, x);
        benchmark::DoNotOptimize(x);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(config.n_paths) * 100);
}
BENCHMARK(BM_sim_paths);

}  // namespace

BENCHMARK_MAIN();
