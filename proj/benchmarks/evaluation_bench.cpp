#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "ctrlsynth/evaluation.hpp"

using namespace ctrlsynth;

namespace {

std::vector<LabeledPoint> cloud(std::size_t n, std::size_t dim) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<LabeledPoint> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 7);
    Tensor z(1, dim);
    for (std::size_t d = 0; d < dim; ++d) z[d] = 2.0 * ((label + d) % 3) + noise(rng);
    pts.push_back({i, label, z});
  }
  return pts;
}

void BM_KnnSweep(benchmark::State& state) {
  const auto pts = cloud(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(knn_disagreement(pts, 5));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KnnSweep)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

void BM_KnnExhaustive(benchmark::State& state) {
  const auto pts = cloud(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(knn_disagreement_exhaustive(pts, 5));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KnnExhaustive)->RangeMultiplier(4)->Range(64, 4096)->Complexity(benchmark::oNSquared);

void BM_Pca(benchmark::State& state) {
  std::vector<Tensor> z;
  for (const auto& p : cloud(static_cast<std::size_t>(state.range(0)), 4)) z.push_back(p.z);
  for (auto _ : state) benchmark::DoNotOptimize(pca_project(z));
}
BENCHMARK(BM_Pca)->Arg(84)->Arg(840);

}  // namespace

BENCHMARK_MAIN();
