#include <doctest.h>

#include <cmath>

#include "rnas/optim.hpp"
#include "rnas/ops.hpp"

using rnas::Adam;
using rnas::AdamConfig;
using rnas::Graph;
using rnas::SgdConfig;
using rnas::SgdMomentum;
using rnas::Tensor;

TEST_CASE("plain sgd step: lr 0.1, grad 1 moves param to -0.1") {
  Tensor<float> p = Tensor<float>::from_values({1}, {0.0f}, true);
  p.zero_grad();
  p.grad()[0] = 1.0f;
  SgdMomentum<float> opt(SgdConfig{0.1, 0.0, 0.0}, {p});
  opt.step();
  CHECK(p.values()[0] == doctest::Approx(-0.1f));
}

TEST_CASE("sgd momentum accumulates velocity") {
  Tensor<float> p = Tensor<float>::from_values({1}, {0.0f}, true);
  SgdMomentum<float> opt(SgdConfig{1.0, 0.5, 0.0}, {p});
  p.zero_grad();
  p.grad()[0] = 1.0f;
  opt.step();  // v=1, p=-1
  p.zero_grad();
  p.grad()[0] = 1.0f;
  opt.step();  // v=1.5, p=-2.5
  CHECK(p.values()[0] == doctest::Approx(-2.5f));
}

TEST_CASE("sgd weight decay enters as additive gradient") {
  Tensor<float> p = Tensor<float>::from_values({1}, {2.0f}, true);
  p.zero_grad();
  SgdMomentum<float> opt(SgdConfig{0.1, 0.0, 0.5}, {p});
  opt.step();  // g = 0 + 0.5*2 = 1 -> p -= 0.1
  CHECK(p.values()[0] == doctest::Approx(1.9f));
}

TEST_CASE("adam first step magnitude is about lr") {
  for (float g : {0.001f, 0.1f, 10.0f}) {
    Tensor<float> p = Tensor<float>::from_values({1}, {1.0f}, true);
    p.zero_grad();
    p.grad()[0] = g;
    Adam<float> opt(AdamConfig{3e-4, 0.5, 0.999, 0.0, 1e-8}, {p});
    opt.step();
    CHECK(std::abs(1.0f - p.values()[0]) == doctest::Approx(3e-4).epsilon(0.01));
  }
}

TEST_CASE("adam step counter increases") {
  Tensor<float> p = Tensor<float>::from_values({1}, {1.0f}, true);
  Adam<float> opt(AdamConfig{}, {p});
  p.zero_grad();
  opt.step();
  opt.step();
  CHECK(opt.step_count() == 2);
}

TEST_CASE("missing gradient is rejected") {
  Tensor<float> p = Tensor<float>::from_values({1}, {1.0f}, true);
  SgdMomentum<float> sgd(SgdConfig{}, {p});
  CHECK_THROWS_AS(sgd.step(), std::logic_error);
  Adam<float> adam(AdamConfig{}, {p});
  CHECK_THROWS_AS(adam.step(), std::logic_error);
}

TEST_CASE("20 sgd steps on x^2 strictly shrink |x|") {
  Tensor<float> x = Tensor<float>::from_values({1}, {1.0f}, true);
  SgdMomentum<float> opt(SgdConfig{0.1, 0.0, 0.0}, {x});
  float prev = 1.0f;
  for (int i = 0; i < 20; ++i) {
    x.zero_grad();
    {
      Graph<float> g;
      Graph<float>::Scope scope(g);
      g.backward(rnas::mul(x, x));
    }
    opt.step();
    CHECK(std::abs(x.values()[0]) < std::abs(prev));
    prev = x.values()[0];
  }
}
