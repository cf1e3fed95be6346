#include <benchmark/benchmark.h>

#include <random>

#include "mqvr/evaluation.hpp"
#include "mqvr/similarity.hpp"
#include "mqvr/synthetic.hpp"

using namespace mqvr;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(rows, cols);
  for (double& x : m.data()) x = g(rng);
  return m;
}

const Corpus& bench_corpus() {
  static const Corpus c = [] {
    SyntheticConfig cfg;
    cfg.params.n_videos = 1000;
    return generate(cfg);
  }();
  return c;
}

void BM_SimMatrixParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix q = random_matrix(n, 256, 1), v = random_matrix(n, 256, 2);
  for (auto _ : state) benchmark::DoNotOptimize(sim_matrix(q, v));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

void BM_SimMatrixSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix q = random_matrix(n, 256, 1), v = random_matrix(n, 256, 2);
  for (auto _ : state) benchmark::DoNotOptimize(serial::sim_matrix(q, v));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

EvalConfig bench_eval(std::int64_t method) {
  EvalConfig cfg;
  cfg.method = static_cast<Method>(method);
  cfg.n_queries = 5;
  cfg.repeats = 20;
  return cfg;
}

void BM_EvaluateParallel(benchmark::State& state) {
  const EvalConfig cfg = bench_eval(state.range(0));
  state.SetLabel(std::string(to_string(cfg.method)));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(bench_corpus(), cfg));
}

void BM_EvaluateSerial(benchmark::State& state) {
  const EvalConfig cfg = bench_eval(state.range(0));
  state.SetLabel(std::string(to_string(cfg.method)));
  for (auto _ : state) benchmark::DoNotOptimize(serial::evaluate(bench_corpus(), cfg));
}

}  // namespace

BENCHMARK(BM_SimMatrixParallel)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SimMatrixSerial)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateParallel)
    ->Arg(static_cast<int>(Method::SA))
    ->Arg(static_cast<int>(Method::TSWF))
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateSerial)
    ->Arg(static_cast<int>(Method::SA))
    ->Arg(static_cast<int>(Method::TSWF))
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
