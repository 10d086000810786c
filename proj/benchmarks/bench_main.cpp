#include <benchmark/benchmark.h>

#include "infocons/baselines.hpp"
#include "infocons/diffcore.hpp"
#include "infocons/explainer.hpp"
#include "infocons/pcmodel.hpp"
#include "infocons/shapes.hpp"

namespace {

using namespace infocons;

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(Shape{rows, cols});
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

PointCloud bench_cloud(std::size_t n) {
  Rng rng(3);
  return generate_shape(ShapeKind::chair_like, n, rng, 0.01, 1.0);
}

void BM_MatmulForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, 128, 1), b = random_matrix(128, 256, 2);
  for (auto _ : state) {
    ad::Graph g;
    benchmark::DoNotOptimize(ad::matmul(g.constant(a), g.constant(b)).data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 128 * 256));
}
BENCHMARK(BM_MatmulForward)->Arg(64)->Arg(256)->Arg(1024);

void BM_MatmulBackward(benchmark::State& state) {
  const Tensor a = random_matrix(256, 128, 1), b = random_matrix(128, 256, 2);
  for (auto _ : state) {
    ad::Graph g;
    ad::Var x = g.leaf(a), w = g.leaf(b);
    g.backward(ad::sum_all(ad::matmul(x, w)));
    benchmark::DoNotOptimize(w.grad_data().data());
  }
}
BENCHMARK(BM_MatmulBackward);

void BM_EncoderForward(benchmark::State& state) {
  const PointModel model(init_model(static_cast<ArchKind>(state.range(1)), 6, 1));
  const PointCloud pc = bench_cloud(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(model.classify(pc));
}
BENCHMARK(BM_EncoderForward)->Args({256, 0})->Args({1024, 0})->Args({256, 1});

void BM_BottleneckForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ExplainerConfig cfg;
  cfg.tap_layer = 3;
  const Explainer ex(init_bottleneck(256, cfg));
  const Tensor z = random_matrix(n, 256, 4);
  for (auto _ : state) benchmark::DoNotOptimize(ex.mask(z));
}
BENCHMARK(BM_BottleneckForward)->Arg(64)->Arg(256);

void BM_ScoreMap(benchmark::State& state) {
  const PointModel model(init_model(ArchKind::flat, 6, 1));
  ExplainerConfig cfg;
  cfg.tap_layer = 3;
  const Explainer ex(init_bottleneck(256, cfg));
  const PointCloud pc = bench_cloud(256);
  for (auto _ : state) benchmark::DoNotOptimize(score_map(ex, model, pc));
}
BENCHMARK(BM_ScoreMap);

void BM_CriticalPoints(benchmark::State& state) {
  const PointModel model(init_model(ArchKind::flat, 6, 1));
  const PointCloud pc = bench_cloud(256);
  for (auto _ : state) benchmark::DoNotOptimize(cp_maxpool(model, pc));
}
BENCHMARK(BM_CriticalPoints);

}  // namespace

BENCHMARK_MAIN();
