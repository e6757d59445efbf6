#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "rnas/discrete_net.hpp"
#include "rnas/supernet.hpp"

using rnas::DiscreteNet;
using rnas::Genotype;
using rnas::GenotypeEdge;
using rnas::NetworkShape;
using rnas::OpKind;
using rnas::OpSet;
using rnas::Rng;
using rnas::Shape;
using rnas::Supernet;
using rnas::Tensor;

namespace {

Tensor<float> random_image(int n, int c, int h, int w, Rng& rng) {
  auto t = Tensor<float>::zeros({n, c, h, w});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

// The relaxed edge: softmax(alpha) mixing all candidates.
template <class T>
Tensor<T> mixed_edge(const Tensor<T>& x, const Tensor<T>& alpha_row, const OpSet& ops,
                     const std::vector<Tensor<T>>& weights, int stride) {
  Tensor<T> mix = rnas::softmax(alpha_row);
  std::vector<Tensor<T>> outs;
  for (std::size_t o = 0; o < ops.size(); ++o) {
    outs.push_back(rnas::apply_candidate(ops[o], x, weights[o], stride));
  }
  return rnas::weighted_sum(std::span<const Tensor<T>>(outs), mix);
}

}  // namespace

TEST_CASE("mixed edge with equal alpha over {zero, skip} halves the input") {
  Rng rng(1);
  auto x = random_image(2, 3, 4, 4, rng);
  OpSet ops = {OpKind::Zero, OpKind::Skip};
  std::vector<Tensor<float>> weights(2);
  auto out = mixed_edge(x, Tensor<float>::zeros({2}), ops, weights, 1);
  for (std::size_t i = 0; i < out.values().size(); ++i) {
    CHECK(out.values()[i] == doctest::Approx(x.values()[i] / 2).epsilon(1e-6));
  }
}

TEST_CASE("mixed edge with saturated alpha matches the single op") {
  Rng rng(2);
  auto x = random_image(1, 2, 4, 4, rng);
  OpSet ops = {OpKind::Zero, OpKind::Skip};
  std::vector<Tensor<float>> weights(2);
  auto out = mixed_edge(x, Tensor<float>::from_values({2}, {0.0f, 50.0f}), ops, weights, 1);
  for (std::size_t i = 0; i < out.values().size(); ++i) {
    CHECK(std::abs(out.values()[i] - x.values()[i]) < 1e-9);
  }
}

TEST_CASE("mixed edge rejects NaN alpha") {
  Rng rng(3);
  auto x = random_image(1, 2, 4, 4, rng);
  OpSet ops = {OpKind::Zero, OpKind::Skip};
  std::vector<Tensor<float>> weights(2);
  auto bad = Tensor<float>::from_values({2}, {std::nanf(""), 0.0f});
  CHECK_THROWS_AS(mixed_edge(x, bad, ops, weights, 1), std::invalid_argument);
}

TEST_CASE("mixed edge gradient w.r.t. alpha matches finite differences") {
  Rng rng(4);
  OpSet ops = {OpKind::Zero, OpKind::Skip, OpKind::Conv3, OpKind::AvgPool3};
  auto x = gradcheck::random_tensor({2, 3, 4, 4}, rng, 0.0, 1.0);
  auto alpha = gradcheck::random_tensor({4}, rng, -0.5, 0.5);
  std::vector<Tensor<double>> weights(4);
  Rng wrng(5);
  weights[2] = rnas::conv_weight<double>(3, 3, 3, wrng);
  weights[2].set_requires_grad(false);
  auto result = gradcheck::check(
      [&] { return rnas::sum_all(mixed_edge(x, alpha, ops, weights, 1)); }, {alpha, x});
  CHECK_MESSAGE(result.ok, result.detail);
}

TEST_CASE("supernet forward shape and finiteness at zero alpha") {
  Rng rng(6);
  Supernet<float> net(NetworkShape{4, 3, 8, 3, 10, 3}, rnas::default_op_set(), rng, 0.0);
  auto x = random_image(2, 3, 8, 8, rng);
  auto logits = net.forward(x);
  REQUIRE(logits.shape() == Shape{2, 10});
  for (float v : logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("supernet rejects wrong input channels") {
  Rng rng(7);
  Supernet<float> net(NetworkShape{2, 2, 4, 3, 4, 3}, rnas::default_op_set(), rng);
  auto x = random_image(2, 1, 8, 8, rng);
  CHECK_THROWS_AS(net.forward(x), std::invalid_argument);
}

TEST_CASE("supernet forward is batch permutation equivariant") {
  Rng rng(8);
  Supernet<float> net(NetworkShape{3, 2, 4, 1, 3, 3}, rnas::default_op_set(), rng);
  auto x = random_image(4, 1, 8, 8, rng);
  auto y = net.forward(x);
  // Reverse the batch.
  auto xr = Tensor<float>::zeros(x.shape());
  const std::size_t stride = x.values().size() / 4;
  for (int b = 0; b < 4; ++b) {
    std::copy(x.values().begin() + b * static_cast<std::ptrdiff_t>(stride),
              x.values().begin() + (b + 1) * static_cast<std::ptrdiff_t>(stride),
              xr.values().begin() + (3 - b) * static_cast<std::ptrdiff_t>(stride));
  }
  auto yr = net.forward(xr);
  for (int b = 0; b < 4; ++b) {
    for (int c = 0; c < 3; ++c) {
      CHECK(yr.values()[static_cast<std::size_t>(3 - b) * 3 + c] ==
            doctest::Approx(y.values()[static_cast<std::size_t>(b) * 3 + c]).epsilon(1e-4));
    }
  }
}

TEST_CASE("tiny supernet forward equals a hand-assembled graph") {
  Rng rng(9);
  NetworkShape shape{1, 1, 4, 2, 3, 2};
  OpSet ops = {OpKind::Zero, OpKind::Skip, OpKind::Conv3};
  Supernet<float> net(shape, ops, rng, 1e-3);
  auto x = random_image(2, 2, 6, 6, rng);
  auto expect = net.forward(x);

  // Hand-assemble: stem, both preprocessors, one node fed by two mixed
  // edges, concat of the single node, pooled classifier.
  std::map<std::string, Tensor<float>> p;
  for (auto& np : net.named_weights()) p.emplace(np.name, np.tensor);
  auto stem = rnas::batch_norm(rnas::conv2d(x, p.at("stem.w"), 1, 1));
  auto s0 = rnas::batch_norm(rnas::conv2d(rnas::relu(stem), p.at("cell0.pre0.w"), 1, 0));
  auto s1 = rnas::batch_norm(rnas::conv2d(rnas::relu(stem), p.at("cell0.pre1.w"), 1, 0));
  auto edge = [&](const Tensor<float>& s, int e) {
    auto row = rnas::softmax(rnas::select_row(net.alpha_normal(), e));
    std::vector<Tensor<float>> outs;
    outs.push_back(Tensor<float>::zeros(s.shape()));
    outs.push_back(s);
    outs.push_back(rnas::batch_norm(
        rnas::conv2d(rnas::relu(s), p.at("cell0.edge" + std::to_string(e) + ".conv3.w"), 1, 1)));
    return rnas::weighted_sum(std::span<const Tensor<float>>(outs), row);
  };
  auto node = rnas::add(edge(s0, 0), edge(s1, 1));
  auto logits = rnas::add_rowvec(rnas::matmul(rnas::global_avg_pool(node), p.at("classifier.w")),
                                 p.at("classifier.b"));
  REQUIRE(logits.shape() == expect.shape());
  for (std::size_t i = 0; i < logits.values().size(); ++i) {
    CHECK(logits.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-5));
  }
}

// --------------------------------------------------------------------------
// genotype derivation

namespace {

// Independent restatement of the selection rule for the oracle.
std::vector<GenotypeEdge> brute_force_cell(const std::vector<std::vector<double>>& alpha,
                                           const OpSet& ops, int nodes) {
  std::vector<GenotypeEdge> out;
  for (int i = 0; i < nodes; ++i) {
    struct Scored {
      int input;
      double weight;
      OpKind op;
    };
    std::vector<Scored> scored;
    for (int j = 0; j < i + 2; ++j) {
      const auto& row = alpha[static_cast<std::size_t>(rnas::edge_offset(i) + j)];
      double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      double best = -1.0;
      OpKind op = OpKind::Skip;
      for (std::size_t o = 0; o < ops.size(); ++o) {
        if (ops[o] == OpKind::Zero) continue;
        const double w = std::exp(row[o] - mx) / z;
        if (w > best) {
          best = w;
          op = ops[o];
        }
      }
      scored.push_back({j, best, op});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const Scored& a, const Scored& b) { return a.weight > b.weight; });
    GenotypeEdge a{i + 2, scored[0].input, scored[0].op};
    GenotypeEdge b{i + 2, scored[1].input, scored[1].op};
    if (a.input > b.input) std::swap(a, b);
    out.push_back(a);
    out.push_back(b);
  }
  return out;
}

std::vector<std::vector<double>> random_alpha(int nodes, int nops, Rng& rng) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(rnas::edge_count(nodes)));
  for (auto& row : rows) {
    row.resize(static_cast<std::size_t>(nops));
    for (auto& v : row) v = rng.uniform(-2.0, 2.0);
  }
  return rows;
}

}  // namespace

TEST_CASE("two-op set {zero, skip}: every retained op is skip") {
  Rng rng(10);
  OpSet ops = {OpKind::Zero, OpKind::Skip};
  for (int rep = 0; rep < 10; ++rep) {
    auto an = random_alpha(3, 2, rng);
    auto ar = random_alpha(3, 2, rng);
    Genotype g = rnas::derive_genotype(an, ar, ops, 3);
    for (const auto& e : g.normal) CHECK(e.op == OpKind::Skip);
    for (const auto& e : g.reduce) CHECK(e.op == OpKind::Skip);
  }
}

TEST_CASE("crafted alpha: stronger conv edge is retained") {
  OpSet ops = {OpKind::Zero, OpKind::Skip, OpKind::Conv3};
  // Node 0 has edges 0 and 1 only (both kept); node 1 has edges 2,3,4.
  std::vector<std::vector<double>> alpha(5, std::vector<double>(3, 0.0));
  alpha[2] = {0.0, 0.0, 3.0};   // edge from input 0: conv weight ~0.9
  alpha[3] = {0.0, -2.0, -2.0}; // weak
  alpha[4] = {0.0, 1.0, 0.0};   // moderate skip
  Genotype g = rnas::derive_genotype(alpha, alpha, ops, 2);
  // Node 3 keeps inputs 0 (conv) and 2 (skip); the weak edge 1 is dropped.
  CHECK(g.normal[2] == GenotypeEdge{3, 0, OpKind::Conv3});
  CHECK(g.normal[3] == GenotypeEdge{3, 2, OpKind::Skip});
}

TEST_CASE("derivation matches the brute-force selection oracle") {
  Rng rng(11);
  OpSet ops = rnas::default_op_set();
  for (int rep = 0; rep < 50; ++rep) {
    auto an = random_alpha(3, 6, rng);
    auto ar = random_alpha(3, 6, rng);
    Genotype g = rnas::derive_genotype(an, ar, ops, 3);
    CHECK(g.normal == brute_force_cell(an, ops, 3));
    CHECK(g.reduce == brute_force_cell(ar, ops, 3));
    CHECK_NOTHROW(rnas::validate_genotype(g));
  }
}

TEST_CASE("derivation is invariant to per-row constant shifts") {
  Rng rng(12);
  OpSet ops = rnas::default_op_set();
  auto an = random_alpha(3, 6, rng);
  auto ar = random_alpha(3, 6, rng);
  Genotype base = rnas::derive_genotype(an, ar, ops, 3);
  for (int rep = 0; rep < 10; ++rep) {
    auto an2 = an;
    auto ar2 = ar;
    for (auto& row : an2) {
      const double c = rng.uniform(-5.0, 5.0);
      for (auto& v : row) v += c;
    }
    for (auto& row : ar2) {
      const double c = rng.uniform(-5.0, 5.0);
      for (auto& v : row) v += c;
    }
    CHECK(rnas::derive_genotype(an2, ar2, ops, 3) == base);
  }
}

TEST_CASE("derivation rejects non-finite alpha") {
  OpSet ops = rnas::default_op_set();
  std::vector<std::vector<double>> alpha(2, std::vector<double>(6, 0.0));
  alpha[0][1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(rnas::derive_genotype(alpha, alpha, ops, 1), std::invalid_argument);
}

TEST_CASE("genotype text round trip") {
  Rng rng(13);
  auto an = random_alpha(3, 6, rng);
  auto ar = random_alpha(3, 6, rng);
  Genotype g = rnas::derive_genotype(an, ar, rnas::default_op_set(), 3);
  Genotype back = rnas::genotype_from_text(rnas::genotype_to_text(g));
  CHECK(back == g);
}

// --------------------------------------------------------------------------
// discrete networks

namespace {

Genotype all_skip_genotype(int nodes) {
  Genotype g;
  g.nodes = nodes;
  for (int i = 0; i < nodes; ++i) {
    g.normal.push_back({i + 2, 0, OpKind::Skip});
    g.normal.push_back({i + 2, 1, OpKind::Skip});
    g.reduce.push_back({i + 2, 0, OpKind::Skip});
    g.reduce.push_back({i + 2, 1, OpKind::Skip});
  }
  return g;
}

Genotype conv_genotype(int nodes) {
  Genotype g;
  g.nodes = nodes;
  for (int i = 0; i < nodes; ++i) {
    g.normal.push_back({i + 2, 0, OpKind::Conv3});
    g.normal.push_back({i + 2, 1, OpKind::Conv3});
    g.reduce.push_back({i + 2, 0, OpKind::Conv3});
    g.reduce.push_back({i + 2, 1, OpKind::Conv3});
  }
  return g;
}

}  // namespace

TEST_CASE("all-skip genotype has no edge parameters") {
  Rng rng(14);
  DiscreteNet<float> net(all_skip_genotype(2), NetworkShape{4, 2, 8, 1, 4, 3}, rng);
  for (const auto& p : net.named_params()) {
    CHECK(p.name.find(".edge") == std::string::npos);
  }
  auto x = random_image(2, 1, 8, 8, rng);
  CHECK(net.forward(x).shape() == Shape{2, 4});
}

TEST_CASE("doubling channels multiplies cell parameters by exactly four") {
  Rng rng(15);
  Genotype g = conv_genotype(2);
  DiscreteNet<float> small(g, NetworkShape{4, 2, 8, 3, 10, 3}, rng);
  DiscreteNet<float> large(g, NetworkShape{4, 2, 16, 3, 10, 3}, rng);
  CHECK(large.cell_parameter_count() == 4 * small.cell_parameter_count());
  const double ratio = static_cast<double>(large.parameter_count()) / small.parameter_count();
  CHECK(ratio > 3.0);
  CHECK(ratio < 4.0);
}

TEST_CASE("parameter count is stable across seeds for a fixed genotype") {
  Rng r1(16), r2(17);
  Genotype g = conv_genotype(3);
  DiscreteNet<float> a(g, NetworkShape{4, 3, 8, 3, 10, 3}, r1);
  DiscreteNet<float> b(g, NetworkShape{4, 3, 8, 3, 10, 3}, r2);
  CHECK(a.parameter_count() == b.parameter_count());
}

TEST_CASE("discrete net rejects genotype with wrong node count") {
  Rng rng(18);
  CHECK_THROWS_AS(DiscreteNet<float>(conv_genotype(2), NetworkShape{2, 3, 8, 1, 2, 3}, rng),
                  std::invalid_argument);
}

TEST_CASE("saturated one-hot alpha makes supernet match the derived net") {
  Rng rng(19);
  NetworkShape shape{3, 2, 6, 1, 3, 3};
  OpSet ops = rnas::default_op_set();
  Supernet<float> net(shape, ops, rng, 0.0);

  Genotype g;
  g.nodes = 2;
  g.normal = {{2, 0, OpKind::Conv3}, {2, 1, OpKind::Skip},
              {3, 1, OpKind::Conv3}, {3, 2, OpKind::AvgPool3}};
  g.reduce = {{2, 0, OpKind::MaxPool3}, {2, 1, OpKind::Conv3},
              {3, 0, OpKind::Skip}, {3, 2, OpKind::Conv3}};

  // Saturate: +50 on the chosen op of retained edges, +50 on zero elsewhere.
  auto saturate = [&](Tensor<float> alpha, const std::vector<GenotypeEdge>& edges) {
    auto v = alpha.values();
    const int nops = alpha.shape()[1];
    for (int e = 0; e < alpha.shape()[0]; ++e) v[static_cast<std::size_t>(e) * nops + 0] = 50.0f;
    for (const auto& ge : edges) {
      const int e = rnas::edge_offset(ge.node - 2) + ge.input;
      const int o = static_cast<int>(std::find(ops.begin(), ops.end(), ge.op) - ops.begin());
      v[static_cast<std::size_t>(e) * nops + 0] = 0.0f;
      v[static_cast<std::size_t>(e) * nops + o] = 50.0f;
    }
  };
  saturate(net.alpha_normal(), g.normal);
  saturate(net.alpha_reduce(), g.reduce);

  Rng rng2(20);
  DiscreteNet<float> discrete(g, shape, rng2);
  discrete.load_matching(net.named_weights());

  auto x = random_image(2, 1, 8, 8, rng);
  auto from_supernet = net.forward(x);
  auto from_discrete = discrete.forward(x);
  REQUIRE(from_supernet.shape() == from_discrete.shape());
  for (std::size_t i = 0; i < from_discrete.values().size(); ++i) {
    CHECK(from_supernet.values()[i] == doctest::Approx(from_discrete.values()[i]).epsilon(1e-3));
  }
}

TEST_CASE("supernet derive() round trips through its own alpha") {
  Rng rng(21);
  Supernet<float> net(NetworkShape{2, 3, 4, 1, 2, 3}, rnas::default_op_set(), rng);
  Genotype g = net.derive();
  CHECK_NOTHROW(rnas::validate_genotype(g));
  CHECK(g.nodes == 3);
  CHECK(g.normal.size() == 6);
}
