// Serial reference vs OpenMP batch evaluation of exact recourse values.

#include <benchmark/benchmark.h>

#include <thread>

#include "l2occg/bench.hpp"
#include "l2occg/kernels.hpp"

using namespace l2occg;

namespace {

std::vector<EvalRequest> requests(const HvacInstance& inst, int n) {
  const UncertaintySet box = nominal_sets(inst.dims.n_xi, NominalSetSpec{}, 0).at("box");
  Rng rng(1);
  std::vector<EvalRequest> out;
  const Vec u0 = 0.5 * (inst.u_lo + inst.u_hi);
  for (int i = 0; i < n; ++i) out.push_back({u0, sample(box, rng)});
  return out;
}

void run(benchmark::State& state, Exec exec) {
  const HvacInstance inst = generate_instance(0);
  const auto reqs = requests(inst, static_cast<int>(state.range(0)));
  set_jobs(static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_batch(inst, reqs, exec));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_evaluate_serial(benchmark::State& state) { run(state, Exec::serial); }
void BM_evaluate_parallel(benchmark::State& state) { run(state, Exec::parallel); }

}  // namespace

BENCHMARK(BM_evaluate_serial)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_evaluate_parallel)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
