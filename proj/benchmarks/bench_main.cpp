#include <benchmark/benchmark.h>

#include <random>

#include "biomorph/analysis.hpp"
#include "biomorph/autodiff.hpp"
#include "biomorph/graph.hpp"
#include "biomorph/metrics.hpp"
#include "biomorph/synth.hpp"
#include "biomorph/training.hpp"

namespace {

using namespace biomorph;

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = n01(rng);
  return Tensor::matrix(rows, cols, std::move(v));
}

// Batch 32 through one 512-wide layer, forward and backward.
void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_matrix(32, n, 1);
  Param w("w", random_matrix(n, n, 2));
  for (auto _ : state) {
    Tape tape;
    const Var y = ad::layer_norm(ad::relu(ad::matmul(tape.constant(x), tape.param(w))));
    tape.backward(ad::sum(y));
    benchmark::DoNotOptimize(w.grad.ptr());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(128)->Arg(512);

void BM_BinaryAuroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::vector<bool> pos(n);
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = rng() % 2 == 0;
    score[i] = static_cast<double>(rng() % 1000);
  }
  for (auto _ : state) benchmark::DoNotOptimize(binary_auroc(pos, score));
}
BENCHMARK(BM_BinaryAuroc)->Arg(1000)->Arg(100000);

void BM_WilcoxonExact(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::vector<double> a(10), b(10);
  for (auto& v : a) v = static_cast<double>(rng() % 7);
  for (auto& v : b) v = static_cast<double>(rng() % 7);
  for (auto _ : state) benchmark::DoNotOptimize(wilcoxon_rank_sum(a, b, WilcoxonMethod::exact));
}
BENCHMARK(BM_WilcoxonExact);

void BM_WilcoxonNormal(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> a(1000), b(1000);
  for (auto& v : a) v = n01(rng);
  for (auto& v : b) v = n01(rng);
  for (auto _ : state) benchmark::DoNotOptimize(wilcoxon_rank_sum(a, b, WilcoxonMethod::normal));
}
BENCHMARK(BM_WilcoxonNormal);

const SynthData& bench_data() {
  static const SynthData data = [] {
    SynthConfig cfg;
    cfg.spots = 600;
    cfg.genes = 200;
    cfg.pathways = 8;
    return synth_generate(cfg);
  }();
  return data;
}

void BM_BuildGraphs(benchmark::State& state) {
  const Dataset ds = preprocess_expression(bench_data().dataset);
  for (auto _ : state) benchmark::DoNotOptimize(build_graphs(ds));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.spots.size()));
}
BENCHMARK(BM_BuildGraphs)->Unit(benchmark::kMillisecond);

// One training epoch of the full model at reduced width.
void BM_TrainEpoch(benchmark::State& state) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.dims.width = 64;
  cfg.dims.mlp_hidden = 256;
  cfg.dims.gate_hidden = 32;
  cfg.dims.learnable_pathways = 16;
  const auto prepared = prepare_data(bench_data().dataset, bench_data().pathways, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(train(prepared, cfg).best_epoch);
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
