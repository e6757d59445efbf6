#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rnas/genotype.hpp"
#include "rnas/ops.hpp"
#include "rnas/rng.hpp"
#include "rnas/tensor.hpp"

namespace rnas {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
Tensor<T> conv_weight(int cout, int cin, int k, Rng& rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  Tensor<T> w = Tensor<T>::zeros({cout, cin, k, k}, true);
  for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return w;
}

template <class T>
Tensor<T> linear_weight(int in, int out, Rng& rng) {
  const double stddev = std::sqrt(1.0 / static_cast<double>(in));
  Tensor<T> w = Tensor<T>::zeros({in, out}, true);
  for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return w;
}

inline int candidate_kernel(OpKind kind) { return kind == OpKind::Conv5 ? 5 : 3; }

// Output spatial size shared by every candidate at the given stride.
inline int candidate_out_size(int in, int stride) { return (in - 1) / stride + 1; }

// Applies one candidate operation. `weight` is only consulted for conv kinds.
template <class T>
Tensor<T> apply_candidate(OpKind kind, const Tensor<T>& x, const Tensor<T>& weight, int stride) {
  switch (kind) {
    case OpKind::Zero: {
      const auto& s = x.shape();
      return Tensor<T>::zeros({s[0], s[1], candidate_out_size(s[2], stride), candidate_out_size(s[3], stride)});
    }
    case OpKind::Skip:
      return stride == 1 ? x : avg_pool(x, 1, stride, 0);
    case OpKind::Conv3:
      return batch_norm(conv2d(relu(x), weight, stride, 1));
    case OpKind::Conv5:
      return batch_norm(conv2d(relu(x), weight, stride, 2));
    case OpKind::AvgPool3:
      return batch_norm(avg_pool(x, 3, stride, 1));
    case OpKind::MaxPool3:
      return batch_norm(max_pool(x, 3, stride, 1));
  }
  throw std::logic_error("apply_candidate: unknown op");
}

// 1x1 relu-conv-norm used to align cell inputs to the cell's channel count.
template <class T>
Tensor<T> preprocess(const Tensor<T>& x, const Tensor<T>& weight, int stride) {
  return batch_norm(conv2d(relu(x), weight, stride, 0));
}

// Reduction cells sit at 1/3 and 2/3 of the stack when depth allows.
inline bool is_reduction_cell(int index, int cells) {
  if (cells < 3) return false;
  return index == cells / 3 || index == 2 * cells / 3;
}

struct NetworkShape {
  int cells = 4;
  int nodes = 3;
  int channels = 8;
  int in_channels = 3;
  int classes = 10;
  int stem_multiplier = 3;
};

}  // namespace rnas
