// Serial reference vs OpenMP path of the evaluation kernels on the desk scenario.
#include <benchmark/benchmark.h>

#include "rankmerge/rank_merge.hpp"
#include "rankmerge/synthetic.hpp"

using namespace rankmerge;

namespace {

const UpgradeDataset& desk() {
  static const UpgradeDataset data = generate(UpgradeScenario{});
  return data;
}

Execution exec_of(const benchmark::State& state) {
  return state.range(0) ? Execution::parallel : Execution::serial;
}

void BM_CurveKernel(benchmark::State& state) {
  const auto& d = desk();
  const CurveSetup setup{d.query.old_side(), d.query.new_side(), d.gallery.old_side(), d.gallery.new_side()};
  const auto order = make_partition(d.gallery.old_side().ids(), 0.0, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_curve_kernel(setup, order, DistanceKind::cosine, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.query.size() * kNumSlices));
}

void BM_EvaluateSystem(benchmark::State& state) {
  const auto& d = desk();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        evaluate_system(d.query.new_side(), d.gallery.new_side(), DistanceKind::cosine, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.query.size()));
}

}  // namespace

BENCHMARK(BM_CurveKernel)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateSystem)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
