#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "rnas/ops.hpp"
#include "rnas/tensor.hpp"

namespace rnas {

enum class FKind { KlDivergence, L2Logits, CosineDistance };

inline const char* f_kind_name(FKind k) {
  switch (k) {
    case FKind::KlDivergence: return "kl";
    case FKind::L2Logits: return "l2";
    case FKind::CosineDistance: return "cosine";
  }
  return "?";
}

inline std::optional<FKind> f_kind_from_name(std::string_view name) {
  if (name == "kl") return FKind::KlDivergence;
  if (name == "l2") return FKind::L2Logits;
  if (name == "cosine") return FKind::CosineDistance;
  return std::nullopt;
}

struct RegularizerConfig {
  FKind f_kind = FKind::KlDivergence;
  double lambda = 1.0;
};

// Output-discrepancy regularizer between logits on natural and perturbed
// inputs. Nonnegative; zero when both arguments induce the same distribution
// (kl), the same logits (l2) or parallel logits (cosine). Differentiable in
// both arguments.
template <class T>
Tensor<T> discrepancy(const Tensor<T>& clean_logits, const Tensor<T>& pert_logits, FKind kind) {
  detail::require_rank("discrepancy", clean_logits, 2);
  detail::require_same_shape("discrepancy", clean_logits, pert_logits);
  const int batch = clean_logits.shape()[0];
  switch (kind) {
    case FKind::KlDivergence: {
      // KL(softmax(clean) || softmax(pert)), averaged over the batch.
      Tensor<T> p = softmax(clean_logits);
      Tensor<T> lp = log_softmax(clean_logits);
      Tensor<T> lq = log_softmax(pert_logits);
      return mean_all(sum_rows(mul(p, sub(lp, lq))));
    }
    case FKind::L2Logits: {
      Tensor<T> d = sub(clean_logits, pert_logits);
      return scale(sum_all(mul(d, d)), T(1) / static_cast<T>(batch));
    }
    case FKind::CosineDistance: {
      const T eps = static_cast<T>(1e-12);
      Tensor<T> dot = sum_rows(mul(clean_logits, pert_logits));
      Tensor<T> na = sqrt(add_scalar(sum_rows(mul(clean_logits, clean_logits)), eps));
      Tensor<T> nb = sqrt(add_scalar(sum_rows(mul(pert_logits, pert_logits)), eps));
      Tensor<T> cosine = div(dot, mul(na, nb));
      return mean_all(sub(Tensor<T>::full({batch}, T(1)), cosine));
    }
  }
  throw std::logic_error("discrepancy: unknown kind");
}

// total = task + lambda * disc. lambda = 0 returns the task loss unchanged,
// so degenerate configurations reduce bit-exactly to the plain loop.
template <class T>
Tensor<T> robust_loss(const Tensor<T>& task_loss, const Tensor<T>& disc, double lambda) {
  if (task_loss.size() != 1 || disc.size() != 1) {
    throw std::invalid_argument("robust_loss: inputs must be scalars");
  }
  if (lambda < 0) throw std::invalid_argument("robust_loss: lambda must be >= 0");
  if (lambda == 0.0) return task_loss;
  return add(task_loss, scale(disc, static_cast<T>(lambda)));
}

}  // namespace rnas
