#include <benchmark/benchmark.h>

#include <random>

#include "irview/layers.hpp"

namespace {

using irview::Tensor;

Tensor<float> random_tensor(irview::Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (float& v : t.values()) v = u(rng);
  return t;
}

// args: batch, in channels, out channels, kernel, input side
void BM_Conv2dForward(benchmark::State& state) {
  const int b = state.range(0), ci = state.range(1), co = state.range(2), k = state.range(3), s = state.range(4);
  irview::Conv2d<float> conv("c", ci, co, k, 2);
  std::mt19937_64 rng(1);
  irview::init_uniform(conv.weight().value, 0.1, rng);
  const auto x = random_tensor({b, ci, s, s}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
}
BENCHMARK(BM_Conv2dForward)->Args({64, 1, 32, 5, 64})->Args({64, 32, 32, 3, 32})->Args({64, 64, 64, 3, 8});

void BM_Conv2dBackward(benchmark::State& state) {
  const int b = state.range(0), ci = state.range(1), co = state.range(2), k = state.range(3), s = state.range(4);
  irview::Conv2d<float> conv("c", ci, co, k, 2);
  const auto x = random_tensor({b, ci, s, s}, 2);
  const auto dy = random_tensor(conv.forward(x).shape(), 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(x, dy, true));
}
BENCHMARK(BM_Conv2dBackward)->Args({64, 1, 32, 5, 64})->Args({64, 32, 32, 3, 32})->Args({64, 64, 64, 3, 8});

void BM_ConvTranspose2dForward(benchmark::State& state) {
  const int b = state.range(0), ci = state.range(1), co = state.range(2), k = state.range(3), s = state.range(4);
  irview::ConvTranspose2d<float> deconv("d", ci, co, k, 2);
  const auto x = random_tensor({b, ci, s, s}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(deconv.forward(x));
}
BENCHMARK(BM_ConvTranspose2dForward)->Args({64, 64, 64, 3, 4})->Args({64, 32, 32, 5, 32});

void BM_DenseForward(benchmark::State& state) {
  const int b = state.range(0), in = state.range(1), out = state.range(2);
  irview::Dense<float> fc("f", in, out);
  const auto x = random_tensor({b, in}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fc.forward(x));
}
BENCHMARK(BM_DenseForward)->Args({64, 1088, 1024})->Args({64, 1024, 1024});

}  // namespace
