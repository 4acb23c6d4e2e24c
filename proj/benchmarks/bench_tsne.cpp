#include <benchmark/benchmark.h>

#include <random>

#include "irview/tsne.hpp"

namespace {

irview::PointSet blobs(int n, int dim) {
  irview::PointSet set;
  set.dim = dim;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) set.values.push_back(noise(rng) + (d == i % 4 ? 20.0 : 0.0));
  return set;
}

void BM_JointProbabilities(benchmark::State& state) {
  const auto data = blobs(state.range(0), 1024);
  for (auto _ : state) benchmark::DoNotOptimize(irview::joint_probabilities(data, 30.0));
}
BENCHMARK(BM_JointProbabilities)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

void BM_TsneProject(benchmark::State& state) {
  const auto data = blobs(state.range(0), 1024);
  irview::TsneConfig config;
  config.iterations = 300;
  for (auto _ : state) benchmark::DoNotOptimize(irview::tsne_project(data, config));
}
BENCHMARK(BM_TsneProject)->Arg(200)->Arg(400)->Unit(benchmark::kMillisecond);

}  // namespace
