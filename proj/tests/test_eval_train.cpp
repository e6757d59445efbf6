#include <doctest.h>

#include <cmath>

#include "rnas/eval_train.hpp"

using rnas::Dataset;
using rnas::DiscreteNet;
using rnas::Genotype;
using rnas::NetworkShape;
using rnas::OpKind;
using rnas::PerturbKind;
using rnas::PerturbSpec;
using rnas::Rng;
using rnas::RobustnessRow;
using rnas::Tensor;
using rnas::TrainMode;
using rnas::TrainProtocol;

namespace {

Genotype conv_genotype(int nodes) {
  Genotype g;
  g.nodes = nodes;
  for (int i = 0; i < nodes; ++i) {
    for (int j : {0, 1}) {
      g.normal.push_back({i + 2, j, OpKind::Conv3});
      g.reduce.push_back({i + 2, j, OpKind::Conv3});
    }
  }
  return g;
}

Dataset blobs(int n, std::uint64_t seed) {
  rnas::SyntheticSpec spec;
  spec.kind = rnas::SyntheticKind::GaussianBlobs;
  spec.n = n;
  spec.classes = 2;
  spec.channels = 1;
  spec.height = 8;
  spec.width = 8;
  spec.amplitude = 0.08;
  spec.noise = 0.04;
  return rnas::gen_synthetic(spec, seed);
}

std::vector<float> param_snapshot(const DiscreteNet<float>& net) {
  std::vector<float> out;
  for (const auto& p : net.named_params()) {
    out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  }
  return out;
}

TrainProtocol quick_protocol(TrainMode mode, int epochs, std::uint64_t seed) {
  TrainProtocol proto;
  proto.mode = mode;
  proto.epochs = epochs;
  proto.batch = 32;
  proto.opt = rnas::SgdConfig{0.05, 0.9, 3e-4};
  proto.adversarial = PerturbSpec{PerturbKind::Pgd, 0.05, 0.02, 3, true, 0.0, 1.0};
  proto.seed = seed;
  return proto;
}

}  // namespace

TEST_CASE("zero epochs leave the network unchanged") {
  Rng rng(1);
  DiscreteNet<float> net(conv_genotype(2), NetworkShape{2, 2, 4, 1, 2, 3}, rng);
  auto before = param_snapshot(net);
  auto history = rnas::train_discrete(net, blobs(64, 2), quick_protocol(TrainMode::Standard, 0, 3));
  CHECK(history.empty());
  CHECK(param_snapshot(net) == before);
}

TEST_CASE("standard training fits separable blobs") {
  Rng rng(4);
  DiscreteNet<float> net(conv_genotype(2), NetworkShape{2, 2, 4, 1, 2, 3}, rng);
  auto train = blobs(128, 5);
  auto history = rnas::train_discrete(net, train, quick_protocol(TrainMode::Standard, 12, 6));
  REQUIRE(!history.empty());
  CHECK(history.back().accuracy == doctest::Approx(1.0).epsilon(0.02));
  CHECK(rnas::evaluate_accuracy(net, train, 32) > 0.98);
}

TEST_CASE("evaluation never mutates parameters") {
  Rng rng(7);
  DiscreteNet<float> net(conv_genotype(2), NetworkShape{2, 2, 4, 1, 2, 3}, rng);
  auto ds = blobs(64, 8);
  auto before = param_snapshot(net);
  rnas::evaluate_accuracy(net, ds, 32);
  rnas::evaluate_under_attack(net, ds, PerturbSpec{PerturbKind::Pgd, 0.05, 0.02, 3, true, 0.0, 1.0}, 32, 9);
  rnas::evaluate_under_attack(net, ds, PerturbSpec{PerturbKind::Fgsm, 0.05, 0, 0, false, 0.0, 1.0}, 32, 9);
  CHECK(param_snapshot(net) == before);
}

TEST_CASE("epsilon = 0 attack accuracy equals clean accuracy exactly") {
  Rng rng(10);
  DiscreteNet<float> net(conv_genotype(2), NetworkShape{2, 2, 4, 1, 2, 3}, rng);
  auto ds = blobs(64, 11);
  const double clean = rnas::evaluate_accuracy(net, ds, 32);
  const double fgsm0 = rnas::evaluate_under_attack(net, ds, PerturbSpec{PerturbKind::Fgsm, 0.0, 0, 0, false, 0.0, 1.0}, 32, 12);
  const double pgd0 = rnas::evaluate_under_attack(net, ds, PerturbSpec{PerturbKind::Pgd, 0.0, 0.01, 2, true, 0.0, 1.0}, 32, 12);
  CHECK(fgsm0 == clean);
  CHECK(pgd0 == clean);
}

TEST_CASE("untrained network sits near chance level") {
  Rng rng(13);
  DiscreteNet<float> net(conv_genotype(2), NetworkShape{2, 2, 4, 1, 2, 3}, rng);
  rnas::SyntheticSpec spec;
  spec.kind = rnas::SyntheticKind::GaussianBlobs;
  spec.n = 400;
  spec.classes = 2;
  spec.channels = 1;
  spec.height = 8;
  spec.width = 8;
  auto ds = rnas::gen_synthetic(spec, 14);
  const double acc = rnas::evaluate_accuracy(net, ds, 50);
  CHECK(acc > 0.25);
  CHECK(acc < 0.75);
}

TEST_CASE("cutout zeroes an exact clipped square") {
  Rng rng(15);
  Tensor<float> batch = Tensor<float>::full({3, 2, 8, 8}, 1.0f);
  rnas::apply_cutout(batch, 8, 8, 4, rng);
  auto v = batch.values();
  for (int b = 0; b < 3; ++b) {
    // Zeroed cells must form an axis-aligned rectangle, identical across
    // channels, with side lengths <= 4 and at least 2 (half the square
    // remains inside even at a corner center).
    int y0 = 8, y1 = -1, x0 = 8, x1 = -1;
    int zeros = 0;
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        const float a = v[((static_cast<std::size_t>(b) * 2 + 0) * 8 + y) * 8 + x];
        const float c = v[((static_cast<std::size_t>(b) * 2 + 1) * 8 + y) * 8 + x];
        CHECK(a == c);
        if (a == 0.0f) {
          ++zeros;
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
      }
    }
    REQUIRE(zeros > 0);
    CHECK((y1 - y0 + 1) * (x1 - x0 + 1) == zeros);  // solid rectangle
    CHECK(y1 - y0 + 1 <= 4);
    CHECK(x1 - x0 + 1 <= 4);
    CHECK(y1 - y0 + 1 >= 2);
    CHECK(x1 - x0 + 1 >= 2);
  }
}

TEST_CASE("drop-path at probability zero is an exact identity") {
  Rng rng(16);
  DiscreteNet<float> net(conv_genotype(2), NetworkShape{2, 2, 4, 1, 2, 3}, rng);
  Rng drop_rng(17);
  auto x = Tensor<float>::zeros({2, 1, 8, 8});
  Rng xr(18);
  for (auto& v : x.values()) v = static_cast<float>(xr.uniform(0.0, 1.0));
  auto a = net.forward(x);
  auto b = net.forward_train(x, 0.0, &drop_rng).logits;
  CHECK(std::vector<float>(a.values().begin(), a.values().end()) ==
        std::vector<float>(b.values().begin(), b.values().end()));
}

TEST_CASE("adversarial training beats standard training under attack (median of 5 seeds)") {
  // Attack strong relative to the class margin so standard training caves.
  const PerturbSpec eval_attack{PerturbKind::Pgd, 0.08, 0.02, 10, true, 0.0, 1.0};
  int adv_wins = 0, clean_wins = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto train = blobs(128, 30 + seed);
    auto test = blobs(128, 60 + seed);

    Rng r1(100 + seed);
    DiscreteNet<float> standard(conv_genotype(2), NetworkShape{2, 2, 4, 1, 2, 3}, r1);
    auto ps = quick_protocol(TrainMode::Standard, 10, 200 + seed);
    rnas::train_discrete(standard, train, ps);

    Rng r2(100 + seed);
    DiscreteNet<float> adversarial(conv_genotype(2), NetworkShape{2, 2, 4, 1, 2, 3}, r2);
    auto pa = quick_protocol(TrainMode::Adversarial, 10, 200 + seed);
    pa.adversarial = PerturbSpec{PerturbKind::Pgd, 0.08, 0.02, 5, true, 0.0, 1.0};
    rnas::train_discrete(adversarial, train, pa);

    const double robust_std = rnas::evaluate_under_attack(standard, test, eval_attack, 32, 300 + seed);
    const double robust_adv = rnas::evaluate_under_attack(adversarial, test, eval_attack, 32, 300 + seed);
    if (robust_adv > robust_std) ++adv_wins;
    if (rnas::evaluate_accuracy(standard, test, 32) >= rnas::evaluate_accuracy(adversarial, test, 32)) {
      ++clean_wins;
    }
  }
  CHECK(adv_wins >= 3);
  CHECK(clean_wins >= 3);
}

TEST_CASE("stronger pgd never helps the defender (statistical)") {
  int holds = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(400 + seed);
    DiscreteNet<float> net(conv_genotype(2), NetworkShape{2, 2, 4, 1, 2, 3}, rng);
    auto train = blobs(128, 500 + seed);
    rnas::train_discrete(net, train, quick_protocol(TrainMode::Standard, 6, 600 + seed));
    auto test = blobs(96, 700 + seed);
    const double weak = rnas::evaluate_under_attack(
        net, test, PerturbSpec{PerturbKind::Pgd, 0.06, 0.06, 1, false, 0.0, 1.0}, 32, 800 + seed);
    const double strong = rnas::evaluate_under_attack(
        net, test, PerturbSpec{PerturbKind::Pgd, 0.06, 0.015, 20, false, 0.0, 1.0}, 32, 800 + seed);
    if (strong <= weak) ++holds;
  }
  CHECK(holds >= 9);
}

TEST_CASE("robustness table round trips and formats percentages") {
  std::vector<RobustnessRow> rows = {
      {"rnas-max", 123456, "adversarial", 0.8630, 0.5959, 0.5265},
      {"rnas-max", 123456, "standard", 0.9123, 0.5367, 0.1201},
  };
  const std::string csv = rnas::table_to_csv(rows);
  auto parsed = rnas::table_from_csv(csv);
  REQUIRE(parsed.size() == 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(parsed[i].model == rows[i].model);
    CHECK(parsed[i].params == rows[i].params);
    CHECK(parsed[i].mode == rows[i].mode);
    CHECK(parsed[i].clean == rows[i].clean);
    CHECK(parsed[i].fgsm == rows[i].fgsm);
    CHECK(parsed[i].pgd20 == rows[i].pgd20);
  }
  const std::string md = rnas::table_to_markdown(rows);
  CHECK(md.find("86.30%") != std::string::npos);
  CHECK(md.find("52.65%") != std::string::npos);
  CHECK(md.find("| Model") != std::string::npos);
  CHECK(md.find("Clean") != std::string::npos);
  CHECK(md.find("FGSM") != std::string::npos);
  CHECK(md.find("PGD20") != std::string::npos);

  // Minimal table: header plus one line.
  const std::string one = rnas::table_to_csv({rows[0]});
  int lines = 0;
  for (char c : one) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 2);
}
