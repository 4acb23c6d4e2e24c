#include <benchmark/benchmark.h>

#include <random>

#include "irview/model.hpp"

namespace {

using irview::Tensor;

Tensor<float> random_tensor(irview::Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (float& v : t.values()) v = u(rng);
  return t;
}

void BM_PredictorForward(benchmark::State& state) {
  const int b = state.range(0);
  const irview::Predictor<float> model(irview::ModelConfig{}, 1);
  const auto x = random_tensor({b, 1, 64, 64}, 2);
  const auto p = random_tensor({b, 5}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, p));
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_PredictorForward)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_PredictorTrainStep(benchmark::State& state) {
  const int b = state.range(0);
  irview::Predictor<float> model(irview::ModelConfig{}, 1);
  const auto params = model.parameters();
  const auto x = random_tensor({b, 1, 64, 64}, 2);
  const auto p = random_tensor({b, 5}, 3);
  for (auto _ : state) {
    irview::Predictor<float>::Cache cache;
    const auto out = model.forward(x, p, &cache);
    irview::zero_grads(params);
    model.backward(cache, out.post_fusion, out.prediction);
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_PredictorTrainStep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_VanillaTrainStep(benchmark::State& state) {
  const int b = state.range(0);
  irview::VanillaAutoencoder<float> model(irview::ModelConfig{}, 1);
  const auto params = model.parameters();
  const auto x = random_tensor({b, 1, 64, 64}, 2);
  for (auto _ : state) {
    irview::VanillaAutoencoder<float>::Cache cache;
    const auto out = model.forward(x, &cache);
    irview::zero_grads(params);
    model.backward(cache, out.reconstruction);
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_VanillaTrainStep)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
