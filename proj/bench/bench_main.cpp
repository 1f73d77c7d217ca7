// Parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include "vio_obs/harness.hpp"

namespace {

using namespace vio_obs;

const AnalysisScenario& scenario() {
  static const AnalysisScenario s = make_scenario(default_config(), "1", 2);
  return s;
}

void BM_BuildStack(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_stack(scenario(), AidingMode::kPureVio).matrix.data());
  }
}
BENCHMARK(BM_BuildStack)->Unit(benchmark::kMillisecond);

void BM_BuildStackSerial(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_stack_serial(scenario(), AidingMode::kPureVio).matrix.data());
  }
}
BENCHMARK(BM_BuildStackSerial)->Unit(benchmark::kMillisecond);

// Four short runs; enough to show the fan-out without minutes per iteration.
ExperimentConfig small_experiment() {
  ExperimentConfig c = default_config();
  c.modes = {AidingMode::kPureVio};
  c.trajectories = {"1"};
  c.cases = {1};
  c.perturbations.resize(4);
  c.duration = 10.0;
  return c;
}

void BM_Experiment(benchmark::State& state) {
  const ExperimentConfig c = small_experiment();
  const auto keys = run_matrix(c);
  for (auto _ : state) benchmark::DoNotOptimize(run_experiment(c, keys, 0).data());
}
BENCHMARK(BM_Experiment)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_ExperimentSerial(benchmark::State& state) {
  const ExperimentConfig c = small_experiment();
  const auto keys = run_matrix(c);
  for (auto _ : state) benchmark::DoNotOptimize(run_experiment_serial(c, keys).data());
}
BENCHMARK(BM_ExperimentSerial)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
