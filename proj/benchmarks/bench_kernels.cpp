/// @file bench_kernels.cpp
/// @brief Microbenchmarks for the hot kernels: constitutive evaluation in each
///        approximation mode, time-averaged stress, per-step residual and
///        Jacobian assembly, a full step solve, and the energy audit.

#include <benchmark/benchmark.h>

#include <map>
#include <memory>

#include "implicitflow/diagnostics.hpp"

namespace {

using namespace implicitflow;

/// Mesh/space/setup shared by the assembly benchmarks. Heap-allocated and
/// cached so repeated registrations reuse one instance; members are declared
/// in dependency order (the space points at the mesh, the setup at the space).
struct BenchState {
    Triangulation mesh;
    MixedSpace space;
    ProblemSetup setup;
    DiscreteField previous;
    Eigen::VectorXd alpha;

    explicit BenchState(int refinements)
        : mesh([&] {
              Triangulation m = unit_square_mesh(2);
              for (int r = 0; r < refinements; ++r) m = refine_uniform(m);
              return m;
          }()),
          space(build_space(mesh, VelocityElement::MINI)),
          setup(make_setup(space, make_approx(bingham_model(1.0, 1.0), ApproxMode::mollify, 32),
                           make_time_grid(0.5, 8), 10.0, manufactured_forcing(1.0),
                           taylor_vortex_initial())),
          previous(zero_field(space, FieldKind::velocity)),
          alpha(Eigen::VectorXd::Zero(Eigen::Index(step_system_size(space)))) {
        // A representative previous state: the projected initial datum.
        SimulationResult seed = run_simulation(setup, SolverConfig{});
        previous.coefficients = seed.velocity.front();
    }
};

const BenchState& bench_state(int refinements) {
    static std::map<int, std::unique_ptr<BenchState>> cache;
    auto& slot = cache[refinements];
    if (!slot) slot = std::make_unique<BenchState>(refinements);
    return *slot;
}

void BM_EvalApprox(benchmark::State& state) {
    const ApproxMode mode = static_cast<ApproxMode>(state.range(0));
    const GraphApprox approx = make_approx(bingham_model(1.0, 1.0), mode, 64);
    const SpaceTimePoint z{0.25, 0.5, 0.5};
    std::vector<Eigen::Matrix2d> strains;
    for (int i = 0; i < 64; ++i) {
        const double radius = 2.0 * double(i) / 63.0;  // spans the jump window at 0
        Eigen::Matrix2d D;
        D << radius * 0.6, radius * 0.3, radius * 0.3, -radius * 0.6;
        strains.push_back(D);
    }
    for (auto _ : state) {
        Eigen::Matrix2d sum = Eigen::Matrix2d::Zero();
        for (const auto& D : strains) sum += eval_approx(approx, D, z);
        benchmark::DoNotOptimize(sum);
    }
    state.SetItemsProcessed(state.iterations() * int64_t(strains.size()));
}
BENCHMARK(BM_EvalApprox)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

void BM_AveragedStress(benchmark::State& state) {
    // Oscillating yield stress forces the full Gauss mean over each strip.
    const BenchState& bench = bench_state(0);
    ProblemSetup setup = make_setup(bench.space,
                                    make_approx(bingham_oscillating_model(1.0, 1.0),
                                                ApproxMode::mollify, 32),
                                    bench.setup.grid, bench.setup.m);
    Eigen::Matrix2d D;
    D << 0.8, 0.1, 0.1, -0.8;
    for (auto _ : state) {
        Eigen::Matrix2d mean = averaged_stress(setup, 3, 0.4, 0.6, D);
        benchmark::DoNotOptimize(mean);
    }
}
BENCHMARK(BM_AveragedStress)->Unit(benchmark::kNanosecond);

void BM_AssembleResidual(benchmark::State& state) {
    const BenchState& bench = bench_state(int(state.range(0)));
    for (auto _ : state) {
        StepResidual residual = assemble_residual(bench.setup, bench.previous, bench.alpha, 1);
        benchmark::DoNotOptimize(residual.value);
    }
}
BENCHMARK(BM_AssembleResidual)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

void BM_AssembleJacobian(benchmark::State& state) {
    const BenchState& bench = bench_state(int(state.range(0)));
    for (auto _ : state) {
        Eigen::SparseMatrix<double> jacobian =
            assemble_step_jacobian(bench.setup, bench.previous, bench.alpha, 1);
        benchmark::DoNotOptimize(jacobian);
    }
}
BENCHMARK(BM_AssembleJacobian)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

void BM_SolveStep(benchmark::State& state) {
    const BenchState& bench = bench_state(int(state.range(0)));
    const SolverConfig config;
    for (auto _ : state) {
        StepSolution solution = solve_step(bench.setup, bench.previous, 1, config);
        benchmark::DoNotOptimize(solution.velocity);
    }
}
BENCHMARK(BM_SolveStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_EnergyAudit(benchmark::State& state) {
    const BenchState& bench = bench_state(1);
    static const SimulationResult run = run_simulation(bench.setup, SolverConfig{});
    for (auto _ : state) {
        RunReport report = energy_audit(run, bench.setup);
        benchmark::DoNotOptimize(report.apriori.max_kinetic_sq);
    }
}
BENCHMARK(BM_EnergyAudit)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
