#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <fstream>

#include "rnas/search.hpp"

using rnas::Dataset;
using rnas::NetworkShape;
using rnas::SearchConfig;
using rnas::SearchDriver;
using rnas::SearchStrategy;
using rnas::Supernet;
using rnas::SyntheticKind;
using rnas::SyntheticSpec;
using rnas::Tensor;

namespace {

Dataset tiny_data(int n, std::uint64_t seed, int classes = 2) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::StripedImages;
  spec.n = n;
  spec.classes = classes;
  spec.channels = 1;
  spec.height = 8;
  spec.width = 8;
  return rnas::gen_synthetic(spec, seed);
}

SearchConfig tiny_config(SearchStrategy strategy, int epochs, int warmup, std::uint64_t seed) {
  SearchConfig cfg;
  cfg.strategy = strategy;
  cfg.epochs = epochs;
  cfg.warmup = warmup;
  cfg.batch = 16;
  cfg.lambda = 1.0;
  cfg.perturb = rnas::PerturbSpec{rnas::PerturbKind::Pgd, 0.06, 0.02, 3, true, 0.0, 1.0};
  cfg.net = NetworkShape{1, 2, 4, 1, 2, 3};
  cfg.seed = seed;
  return cfg;
}

std::uint64_t fnv(std::uint64_t h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t checksum(std::span<const Tensor<float>> tensors) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : tensors) {
    h = fnv(h, t.values().data(), t.values().size() * sizeof(float));
  }
  return h;
}

std::uint64_t alpha_checksum(Supernet<float>& net) {
  auto params = net.arch_params();
  return checksum(std::span<const Tensor<float>>(params));
}

std::uint64_t full_checksum(Supernet<float>& net) {
  auto w = net.weight_params();
  auto a = net.arch_params();
  w.insert(w.end(), a.begin(), a.end());
  return checksum(std::span<const Tensor<float>>(w));
}

}  // namespace

TEST_CASE("config validation") {
  SearchConfig cfg = tiny_config(SearchStrategy::Uniform, 4, 1, 0);
  CHECK_NOTHROW(cfg.validate());
  cfg.warmup = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.warmup = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config(SearchStrategy::Max, 4, 1, 0);
  cfg.perturb.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("dataset too small for one batch is rejected") {
  SearchConfig cfg = tiny_config(SearchStrategy::Uniform, 2, 0, 0);
  cfg.batch = 64;
  auto train = tiny_data(32, 1);
  auto valid = tiny_data(32, 2);
  CHECK_THROWS_AS(SearchDriver(cfg, train, valid), rnas::DataError);
}

TEST_CASE("alpha is bit-unchanged through warm-up, then alternates with w") {
  SearchConfig cfg = tiny_config(SearchStrategy::Uniform, 5, 2, 3);
  auto train = tiny_data(64, 1);
  auto valid = tiny_data(64, 2);
  SearchDriver driver(cfg, train, valid);
  const int batches = driver.batches_per_epoch();
  REQUIRE(batches == 4);

  const std::uint64_t alpha0 = alpha_checksum(driver.net());
  for (int e = 0; e < cfg.warmup; ++e) {
    const auto& rec = driver.run_epoch();
    CHECK(alpha_checksum(driver.net()) == alpha0);
    CHECK(rec.alpha_steps == 0);
    CHECK(rec.w_steps == batches);
  }
  for (int e = cfg.warmup; e < cfg.epochs; ++e) {
    const std::uint64_t before = alpha_checksum(driver.net());
    const auto& rec = driver.run_epoch();
    CHECK(alpha_checksum(driver.net()) != before);
    CHECK(rec.alpha_steps == batches);
    CHECK(rec.w_steps == batches);
  }
}

TEST_CASE("W = 0 runs no warm-up epochs; W = T-1 leaves one alpha epoch") {
  auto train = tiny_data(64, 1);
  auto valid = tiny_data(64, 2);
  {
    SearchConfig cfg = tiny_config(SearchStrategy::Uniform, 2, 0, 4);
    SearchDriver driver(cfg, train, valid);
    const auto& rec = driver.run_epoch();
    CHECK(rec.alpha_steps > 0);
  }
  {
    SearchConfig cfg = tiny_config(SearchStrategy::Uniform, 3, 2, 4);
    SearchDriver driver(cfg, train, valid);
    int alpha_epochs = 0;
    for (int e = 0; e < cfg.epochs; ++e) {
      alpha_epochs += driver.run_epoch().alpha_steps > 0 ? 1 : 0;
    }
    CHECK(alpha_epochs == 1);
  }
}

TEST_CASE("lambda=0 epsilon=0 max run is checksum-identical to baseline") {
  auto train = tiny_data(64, 5);
  auto valid = tiny_data(64, 6);

  auto trajectory = [&](SearchStrategy strategy) {
    SearchConfig cfg = tiny_config(strategy, 4, 1, 7);
    cfg.lambda = 0.0;
    cfg.perturb.epsilon = 0.0;
    SearchDriver driver(cfg, train, valid);
    std::vector<std::uint64_t> sums;
    for (int e = 0; e < cfg.epochs; ++e) {
      driver.run_epoch();
      sums.push_back(full_checksum(driver.net()));
    }
    return sums;
  };
  CHECK(trajectory(SearchStrategy::Max) == trajectory(SearchStrategy::Baseline));
}

TEST_CASE("uniform strategy with epsilon=0 has exactly zero regularizer") {
  SearchConfig cfg = tiny_config(SearchStrategy::Uniform, 3, 1, 8);
  cfg.perturb.epsilon = 0.0;
  auto train = tiny_data(64, 9);
  auto valid = tiny_data(64, 10);
  SearchDriver driver(cfg, train, valid);
  for (int e = 0; e < cfg.epochs; ++e) {
    CHECK(driver.run_epoch().regularizer == 0.0);
  }
}

TEST_CASE("same seed gives identical genotypes and losses") {
  auto train = tiny_data(64, 11);
  auto valid = tiny_data(64, 12);
  SearchConfig cfg = tiny_config(SearchStrategy::Uniform, 3, 1, 13);
  auto a = rnas::run_search(cfg, train, valid);
  auto b = rnas::run_search(cfg, train, valid);
  CHECK(a.genotype == b.genotype);
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].train_loss == b.epochs[e].train_loss);
    CHECK(a.epochs[e].valid_loss == b.epochs[e].valid_loss);
  }
}

TEST_CASE("uniform strategy runs zero attack backwards; max runs K per batch") {
  auto train = tiny_data(64, 14);
  auto valid = tiny_data(64, 15);

  auto backwards_per_epoch = [&](SearchStrategy strategy, int k) {
    SearchConfig cfg = tiny_config(strategy, 2, 0, 16);
    cfg.perturb.steps = k;
    SearchDriver driver(cfg, train, valid);
    rnas::Graph<float>::reset_backward_count();
    driver.run_epoch();
    return static_cast<std::int64_t>(rnas::Graph<float>::backward_count());
  };

  const int batches = 4;
  // Updates cost one backward each: 2 * batches. The max strategy adds K per
  // generation and generates twice per batch pair.
  CHECK(backwards_per_epoch(SearchStrategy::Uniform, 3) == 2 * batches);
  CHECK(backwards_per_epoch(SearchStrategy::Max, 3) == 2 * batches + 2 * 3 * batches);
}

TEST_CASE("uniform strategy costs one extra forward per update over baseline") {
  auto train = tiny_data(64, 17);
  auto valid = tiny_data(64, 18);

  auto forwards_per_epoch = [&](SearchStrategy strategy) {
    SearchConfig cfg = tiny_config(strategy, 2, 0, 19);
    SearchDriver driver(cfg, train, valid);
    driver.net().reset_forward_count();
    driver.run_epoch();
    return static_cast<std::int64_t>(driver.net().forward_count());
  };

  const int batches = 4;
  const std::int64_t baseline = forwards_per_epoch(SearchStrategy::Baseline);
  const std::int64_t uniform = forwards_per_epoch(SearchStrategy::Uniform);
  CHECK(baseline == 2 * batches);               // one per update
  CHECK(uniform == 2 * batches + 2 * batches);  // plus one per update
}

TEST_CASE("ten max-strategy epochs reduce the valid robust loss (median of 5 seeds)") {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SearchConfig cfg = tiny_config(SearchStrategy::Max, 10, 2, 100 + seed);
    auto train = tiny_data(96, 20 + seed);
    auto valid = tiny_data(96, 40 + seed);
    SearchDriver driver(cfg, train, valid);
    std::vector<double> robust;
    for (int e = 0; e < cfg.epochs; ++e) {
      const auto& rec = driver.run_epoch();
      robust.push_back(rec.valid_loss + cfg.lambda * rec.regularizer);
    }
    if (robust.back() < robust.front()) ++improved;
  }
  CHECK(improved >= 3);  // median improves
}

TEST_CASE("report csv has one row per epoch") {
  SearchConfig cfg = tiny_config(SearchStrategy::Uniform, 3, 1, 21);
  auto train = tiny_data(64, 22);
  auto valid = tiny_data(64, 23);
  auto report = rnas::run_search(cfg, train, valid);
  REQUIRE(report.epochs.size() == 3);
  CHECK(report.epochs[0].entropy_normal.size() == 5);  // edges for 2 nodes
  for (const auto& rec : report.epochs) {
    CHECK(rec.regularizer >= 0.0);
  }
  const auto path = std::string("/tmp/rnas_report_test.csv");
  rnas::write_report_csv(report, path);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 4);  // header + 3 epochs
  std::remove(path.c_str());
}
