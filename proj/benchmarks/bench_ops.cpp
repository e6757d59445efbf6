#include <benchmark/benchmark.h>

#include "rnas/ops.hpp"
#include "rnas/rng.hpp"

namespace {

rnas::Tensor<float> random_tensor(rnas::Shape shape, rnas::Rng& rng) {
  auto t = rnas::Tensor<float>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  rnas::Rng rng(1);
  const int c = static_cast<int>(state.range(0));
  auto x = random_tensor({16, c, 8, 8}, rng);
  auto w = random_tensor({c, c, 3, 3}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rnas::conv2d(x, w, 1, 1));
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  rnas::Rng rng(2);
  const int c = static_cast<int>(state.range(0));
  auto x = random_tensor({16, c, 8, 8}, rng);
  auto w = random_tensor({c, c, 3, 3}, rng);
  w.set_requires_grad(true);
  x.set_requires_grad(true);
  for (auto _ : state) {
    rnas::Graph<float> g;
    rnas::Graph<float>::Scope scope(g);
    auto y = rnas::conv2d(x, w, 1, 1);
    g.backward(rnas::sum_all(y));
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(16);

void BM_BatchNorm(benchmark::State& state) {
  rnas::Rng rng(3);
  auto x = random_tensor({16, 16, 8, 8}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rnas::batch_norm(x));
  }
}
BENCHMARK(BM_BatchNorm);

}  // namespace
