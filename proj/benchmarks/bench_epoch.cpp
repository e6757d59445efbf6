// Epoch cost of the two search strategies on an identical configuration; the
// uniform strategy's advantage is the whole point of sampling noise instead
// of running a K-step inner attack.

#include <benchmark/benchmark.h>

#include "rnas/search.hpp"

namespace {

rnas::SearchConfig bench_config(rnas::SearchStrategy strategy) {
  rnas::SearchConfig cfg;
  cfg.strategy = strategy;
  cfg.epochs = 2;
  cfg.warmup = 0;
  cfg.batch = 16;
  cfg.lambda = 1.0;
  cfg.perturb = rnas::PerturbSpec::search_default();
  cfg.net = rnas::NetworkShape{2, 2, 8, 1, 2, 3};
  cfg.seed = 5;
  return cfg;
}

rnas::Dataset bench_data(std::uint64_t seed) {
  rnas::SyntheticSpec spec;
  spec.kind = rnas::SyntheticKind::StripedImages;
  spec.n = 64;
  spec.classes = 2;
  spec.channels = 1;
  spec.height = 8;
  spec.width = 8;
  return rnas::gen_synthetic(spec, seed);
}

void BM_SearchEpoch(benchmark::State& state) {
  const auto strategy = state.range(0) == 0 ? rnas::SearchStrategy::Uniform : rnas::SearchStrategy::Max;
  auto train = bench_data(1);
  auto valid = bench_data(2);
  rnas::SearchDriver driver(bench_config(strategy), train, valid);
  for (auto _ : state) {
    driver.run_epoch();
  }
}
BENCHMARK(BM_SearchEpoch)->Arg(0)->Name("BM_SearchEpoch/uniform")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SearchEpoch)->Arg(1)->Name("BM_SearchEpoch/max")->Unit(benchmark::kMillisecond);

}  // namespace
