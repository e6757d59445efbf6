#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rnas/tensor.hpp"

namespace rnas {

struct SgdConfig {
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 1e-3;
  double eps = 1e-8;
};

// Momentum SGD. Weight decay enters as an additive gradient term.
template <class T>
class SgdMomentum {
 public:
  SgdMomentum(SgdConfig cfg, std::vector<Tensor<T>> params)
      : cfg_(cfg), params_(std::move(params)) {
    velocity_.reserve(params_.size());
    for (const auto& p : params_) {
      velocity_.emplace_back(static_cast<std::size_t>(p.size()), T(0));
    }
  }

  void step() {
    const T lr = static_cast<T>(cfg_.lr);
    const T mu = static_cast<T>(cfg_.momentum);
    const T wd = static_cast<T>(cfg_.weight_decay);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T>& p = params_[k];
      if (!p.has_grad()) {
        throw std::logic_error("sgd: parameter " + std::to_string(k) + " has no gradient");
      }
      auto pv = p.values();
      auto gv = p.grad();
      auto& v = velocity_[k];
      for (std::size_t i = 0; i < v.size(); ++i) {
        const T g = gv[i] + wd * pv[i];
        v[i] = mu * v[i] + g;
        pv[i] -= lr * v[i];
      }
    }
  }

  const SgdConfig& config() const { return cfg_; }
  std::vector<Tensor<T>>& params() { return params_; }

 private:
  SgdConfig cfg_;
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
};

// Adam with bias correction; weight decay as an additive gradient term.
template <class T>
class Adam {
 public:
  Adam(AdamConfig cfg, std::vector<Tensor<T>> params) : cfg_(cfg), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(static_cast<std::size_t>(p.size()), T(0));
      v_.emplace_back(static_cast<std::size_t>(p.size()), T(0));
    }
  }

  void step() {
    ++step_count_;
    const T lr = static_cast<T>(cfg_.lr);
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T wd = static_cast<T>(cfg_.weight_decay);
    const T eps = static_cast<T>(cfg_.eps);
    const T bc1 = T(1) - std::pow(b1, static_cast<T>(step_count_));
    const T bc2 = T(1) - std::pow(b2, static_cast<T>(step_count_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T>& p = params_[k];
      if (!p.has_grad()) {
        throw std::logic_error("adam: parameter " + std::to_string(k) + " has no gradient");
      }
      auto pv = p.values();
      auto gv = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < m.size(); ++i) {
        const T g = gv[i] + wd * pv[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        pv[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }
  std::vector<Tensor<T>>& params() { return params_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t step_count_ = 0;
};

template <class T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace rnas
