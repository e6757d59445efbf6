#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include "rnas/ops.hpp"
#include "rnas/rng.hpp"
#include "rnas/tensor.hpp"

namespace rnas {

enum class PerturbKind { Fgsm, Pgd, Uniform };

inline const char* perturb_kind_name(PerturbKind k) {
  switch (k) {
    case PerturbKind::Fgsm: return "fgsm";
    case PerturbKind::Pgd: return "pgd";
    case PerturbKind::Uniform: return "uniform";
  }
  return "?";
}

// Attack / noise configuration. Epsilon and the clamp box live on the raw
// [0,1] pixel scale.
struct PerturbSpec {
  PerturbKind kind = PerturbKind::Pgd;
  double epsilon = 0.031;
  double step = 0.003;
  int steps = 10;
  bool random_start = true;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;

  void validate() const {
    if (epsilon < 0) throw std::invalid_argument("perturb: epsilon must be >= 0");
    if (clamp_lo > clamp_hi) throw std::invalid_argument("perturb: empty clamp box");
    if (kind == PerturbKind::Pgd) {
      if (step <= 0) throw std::invalid_argument("perturb: pgd step size must be > 0");
      if (steps < 1) throw std::invalid_argument("perturb: pgd needs at least one step");
    }
  }

  PerturbSpec with_kind(PerturbKind k) const {
    PerturbSpec s = *this;
    s.kind = k;
    return s;
  }

  static PerturbSpec search_default() { return {PerturbKind::Pgd, 0.031, 0.003, 10, true, 0.0, 1.0}; }
  static PerturbSpec adversarial_train_default() { return {PerturbKind::Pgd, 0.031, 0.01, 7, true, 0.0, 1.0}; }
};

// A differentiable objective of the perturbed input. The callable is invoked
// under an active graph and must return a scalar that depends on its input
// through recorded ops (otherwise the attack rejects it).
template <class T>
using Objective = std::function<Tensor<T>(const Tensor<T>&)>;

namespace detail {

template <class T>
std::vector<T> objective_input_grad(const Objective<T>& objective, const Tensor<T>& x) {
  Graph<T> graph;
  typename Graph<T>::Scope scope(graph);
  Tensor<T> loss = objective(x);
  return graph.gradients(loss, std::span<const Tensor<T>>(&x, 1))[0];
}

}  // namespace detail

// Fresh uniform sample from the epsilon ball around x, clamped to the box.
template <class T>
Tensor<T> uniform_noise(const Tensor<T>& x, const PerturbSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.kind != PerturbKind::Uniform) {
    throw std::invalid_argument(std::string("uniform_noise: spec kind is ") + perturb_kind_name(spec.kind));
  }
  const T lo = static_cast<T>(spec.clamp_lo), hi = static_cast<T>(spec.clamp_hi);
  Tensor<T> out = x.detach();
  for (auto& v : out.values()) {
    v = std::min(std::max(static_cast<T>(v + rng.uniform(-spec.epsilon, spec.epsilon)), lo), hi);
  }
  return out;
}

// Single signed-gradient step of size epsilon.
template <class T>
Tensor<T> fgsm_attack(const Objective<T>& objective, const Tensor<T>& x, const PerturbSpec& spec) {
  spec.validate();
  if (spec.kind != PerturbKind::Fgsm) {
    throw std::invalid_argument(std::string("fgsm_attack: spec kind is ") + perturb_kind_name(spec.kind));
  }
  Tensor<T> leaf = x.detach();
  leaf.set_requires_grad(true);
  const std::vector<T> g = detail::objective_input_grad(objective, leaf);
  const T eps = static_cast<T>(spec.epsilon);
  const T lo = static_cast<T>(spec.clamp_lo), hi = static_cast<T>(spec.clamp_hi);
  Tensor<T> out = x.detach();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const T s = g[i] > T(0) ? T(1) : (g[i] < T(0) ? T(-1) : T(0));
    ov[i] = std::min(std::max(static_cast<T>(ov[i] + eps * s), lo), hi);
  }
  return out;
}

// K iterations of projected signed gradient ascent on the objective. Each
// step clips to [x - eps, x + eps] first, then to the clamp box.
template <class T>
Tensor<T> pgd_attack(const Objective<T>& objective, const Tensor<T>& x, const PerturbSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.kind != PerturbKind::Pgd) {
    throw std::invalid_argument(std::string("pgd_attack: spec kind is ") + perturb_kind_name(spec.kind));
  }
  const T eps = static_cast<T>(spec.epsilon);
  const T eta = static_cast<T>(spec.step);
  const T lo = static_cast<T>(spec.clamp_lo), hi = static_cast<T>(spec.clamp_hi);
  auto xv = x.values();

  Tensor<T> cur = x.detach();
  if (spec.random_start) {
    auto cv = cur.values();
    for (std::size_t i = 0; i < cv.size(); ++i) {
      cv[i] = std::min(std::max(static_cast<T>(cv[i] + rng.uniform(-spec.epsilon, spec.epsilon)), lo), hi);
    }
  }
  for (int k = 0; k < spec.steps; ++k) {
    cur.set_requires_grad(true);
    const std::vector<T> g = detail::objective_input_grad(objective, cur);
    Tensor<T> next = Tensor<T>::zeros(x.shape());
    auto nv = next.values();
    auto cv = cur.values();
    for (std::size_t i = 0; i < nv.size(); ++i) {
      const T s = g[i] > T(0) ? T(1) : (g[i] < T(0) ? T(-1) : T(0));
      T v = cv[i] + eta * s;
      v = std::min(std::max(v, static_cast<T>(xv[i] - eps)), static_cast<T>(xv[i] + eps));
      nv[i] = std::min(std::max(v, lo), hi);
    }
    cur = next;
  }
  cur.set_requires_grad(false);
  return cur;
}

// Dispatch on spec.kind; `objective` may be empty for uniform noise.
template <class T>
Tensor<T> perturb_example(const Objective<T>& objective, const Tensor<T>& x, const PerturbSpec& spec,
                          Rng& rng) {
  switch (spec.kind) {
    case PerturbKind::Fgsm: return fgsm_attack(objective, x, spec);
    case PerturbKind::Pgd: return pgd_attack(objective, x, spec, rng);
    case PerturbKind::Uniform: return uniform_noise(x, spec, rng);
  }
  throw std::logic_error("perturb_example: unknown kind");
}

}  // namespace rnas
