#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rnas/tensor.hpp"

// Differentiable primitives. Every op computes its value eagerly and, when a
// graph is active and an operand is tracked, records a backward closure that
// scatters the output adjoint into the operand adjoints.

namespace rnas {

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <class T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <class T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank) {
  require(t.shape().size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                        " tensor, got " + shape_str(t.shape()));
}

// Valid output range [lo, hi) such that 0 <= o*stride - pad + k < in_size.
inline void conv_span(int k, int stride, int pad, int in_size, int out_size, int& lo, int& hi) {
  int off = k - pad;
  lo = off < 0 ? (-off + stride - 1) / stride : 0;
  hi = off < in_size ? std::min(out_size, (in_size - 1 - off) / stride + 1) : 0;
  if (hi < lo) hi = lo;
}

inline int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto ov = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (auto* g = Graph<T>::current()) {
    int an = g->track(a), bn = g->track(b);
    if (an >= 0 || bn >= 0) {
      g->record(out, [an, bn](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        if (an >= 0) {
          auto& aa = g.adjoint(an);
          for (std::size_t i = 0; i < ao.size(); ++i) aa[i] += ao[i];
        }
        if (bn >= 0) {
          auto& ba = g.adjoint(bn);
          for (std::size_t i = 0; i < ao.size(); ++i) ba[i] += ao[i];
        }
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto ov = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (auto* g = Graph<T>::current()) {
    int an = g->track(a), bn = g->track(b);
    if (an >= 0 || bn >= 0) {
      g->record(out, [an, bn](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        if (an >= 0) {
          auto& aa = g.adjoint(an);
          for (std::size_t i = 0; i < ao.size(); ++i) aa[i] += ao[i];
        }
        if (bn >= 0) {
          auto& ba = g.adjoint(bn);
          for (std::size_t i = 0; i < ao.size(); ++i) ba[i] -= ao[i];
        }
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto ov = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (auto* g = Graph<T>::current()) {
    int an = g->track(a), bn = g->track(b);
    if (an >= 0 || bn >= 0) {
      g->record(out, [a, b, an, bn](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        if (an >= 0) {
          auto& aa = g.adjoint(an);
          auto bv = b.values();
          for (std::size_t i = 0; i < ao.size(); ++i) aa[i] += bv[i] * ao[i];
        }
        if (bn >= 0) {
          auto& ba = g.adjoint(bn);
          auto av = a.values();
          for (std::size_t i = 0; i < ao.size(); ++i) ba[i] += av[i] * ao[i];
        }
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("div", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto ov = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
  if (auto* g = Graph<T>::current()) {
    int an = g->track(a), bn = g->track(b);
    if (an >= 0 || bn >= 0) {
      g->record(out, [a, b, an, bn](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto av = a.values();
        auto bv = b.values();
        if (an >= 0) {
          auto& aa = g.adjoint(an);
          for (std::size_t i = 0; i < ao.size(); ++i) aa[i] += ao[i] / bv[i];
        }
        if (bn >= 0) {
          auto& ba = g.adjoint(bn);
          for (std::size_t i = 0; i < ao.size(); ++i) ba[i] -= av[i] / (bv[i] * bv[i]) * ao[i];
        }
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto ov = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  if (auto* g = Graph<T>::current()) {
    int an = g->track(a);
    if (an >= 0) {
      g->record(out, [an, c](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& aa = g.adjoint(an);
        for (std::size_t i = 0; i < ao.size(); ++i) aa[i] += c * ao[i];
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto ov = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
  if (auto* g = Graph<T>::current()) {
    int an = g->track(a);
    if (an >= 0) {
      g->record(out, [an](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& aa = g.adjoint(an);
        for (std::size_t i = 0; i < ao.size(); ++i) aa[i] += ao[i];
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [x, xn](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        auto xv = x.values();
        for (std::size_t i = 0; i < ao.size(); ++i) {
          if (xv[i] > T(0)) xa[i] += ao[i];
        }
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(xv[i]);
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [x, xn](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        auto xv = x.values();
        for (std::size_t i = 0; i < ao.size(); ++i) xa[i] += ao[i] / xv[i];
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::sqrt(xv[i]);
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [out, xn](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        auto ov = out.values();
        for (std::size_t i = 0; i < ao.size(); ++i) xa[i] += ao[i] / (T(2) * ov[i]);
      });
    }
  }
  return out;
}

// Elementwise sign. Derivative is zero almost everywhere, so the result is a
// plain constant and gradient flow stops here.
template <class T>
Tensor<T> sign(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    ov[i] = xv[i] > T(0) ? T(1) : (xv[i] < T(0) ? T(-1) : T(0));
  }
  return out;
}

template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  detail::require(lo <= hi, "clamp: empty interval");
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(std::max(xv[i], lo), hi);
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [x, xn, lo, hi](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        auto xv = x.values();
        for (std::size_t i = 0; i < ao.size(); ++i) {
          if (xv[i] >= lo && xv[i] <= hi) xa[i] += ao[i];
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel(shape) == x.size(), "reshape: cannot view " + shape_str(x.shape()) +
                                                " as " + shape_str(shape));
  Tensor<T> out = Tensor<T>::from_values(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [xn](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        for (std::size_t i = 0; i < ao.size(); ++i) xa[i] += ao[i];
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> flatten2d(const Tensor<T>& x) {
  detail::require(!x.shape().empty(), "flatten2d: scalar input");
  int batch = x.shape()[0];
  return reshape(x, Shape{batch, static_cast<int>(x.size() / batch)});
}

// Row i of a 2-D tensor as a 1-D tensor.
template <class T>
Tensor<T> select_row(const Tensor<T>& m, int row) {
  detail::require_rank("select_row", m, 2);
  int rows = m.shape()[0], cols = m.shape()[1];
  detail::require(row >= 0 && row < rows, "select_row: row " + std::to_string(row) +
                                              " out of range for " + shape_str(m.shape()));
  std::vector<T> vals(m.values().begin() + static_cast<std::ptrdiff_t>(row) * cols,
                      m.values().begin() + static_cast<std::ptrdiff_t>(row + 1) * cols);
  Tensor<T> out = Tensor<T>::from_values({cols}, std::move(vals));
  if (auto* g = Graph<T>::current()) {
    int mn = g->track(m);
    if (mn >= 0) {
      g->record(out, [mn, row, cols](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& ma = g.adjoint(mn);
        for (int c = 0; c < cols; ++c) ma[static_cast<std::size_t>(row) * cols + c] += ao[static_cast<std::size_t>(c)];
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs) {
  detail::require(!xs.empty(), "concat_channels: no inputs");
  for (const auto& x : xs) detail::require_rank("concat_channels", x, 4);
  int n = xs[0].shape()[0], h = xs[0].shape()[2], w = xs[0].shape()[3];
  int ctotal = 0;
  for (const auto& x : xs) {
    detail::require(x.shape()[0] == n && x.shape()[2] == h && x.shape()[3] == w,
                    "concat_channels: incompatible shapes " + shape_str(xs[0].shape()) + " vs " +
                        shape_str(x.shape()));
    ctotal += x.shape()[1];
  }
  Tensor<T> out = Tensor<T>::zeros({n, ctotal, h, w});
  auto ov = out.values();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<int> offsets;
  int coff = 0;
  for (const auto& x : xs) {
    offsets.push_back(coff);
    int cx = x.shape()[1];
    auto xv = x.values();
    for (int b = 0; b < n; ++b) {
      std::copy(xv.begin() + static_cast<std::ptrdiff_t>(b) * cx * plane,
                xv.begin() + static_cast<std::ptrdiff_t>(b + 1) * cx * plane,
                ov.begin() + (static_cast<std::ptrdiff_t>(b) * ctotal + coff) * static_cast<std::ptrdiff_t>(plane));
    }
    coff += cx;
  }
  if (auto* g = Graph<T>::current()) {
    std::vector<int> nodes;
    std::vector<int> chans;
    bool any = false;
    for (const auto& x : xs) {
      nodes.push_back(g->track(x));
      chans.push_back(x.shape()[1]);
      any = any || nodes.back() >= 0;
    }
    if (any) {
      g->record(out, [nodes, chans, offsets, n, ctotal, plane](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (nodes[k] < 0) continue;
          auto& xa = g.adjoint(nodes[k]);
          int cx = chans[k];
          for (int b = 0; b < n; ++b) {
            const T* src = ao.data() + (static_cast<std::size_t>(b) * ctotal + offsets[k]) * plane;
            T* dst = xa.data() + static_cast<std::size_t>(b) * cx * plane;
            for (std::size_t i = 0; i < static_cast<std::size_t>(cx) * plane; ++i) dst[i] += src[i];
          }
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and broadcasts

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [xn](Graph<T>& g, int self) {
        const T a = g.out_adjoint(self)[0];
        auto& xa = g.adjoint(xn);
        for (auto& v : xa) v += a;
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  detail::require(x.size() > 0, "mean_all: empty tensor");
  T s = T(0);
  for (T v : x.values()) s += v;
  const T inv = T(1) / static_cast<T>(x.size());
  Tensor<T> out = Tensor<T>::scalar(s * inv);
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [xn, inv](Graph<T>& g, int self) {
        const T a = g.out_adjoint(self)[0] * inv;
        auto& xa = g.adjoint(xn);
        for (auto& v : xa) v += a;
      });
    }
  }
  return out;
}

// (N,C) -> (N): sum over the class axis.
template <class T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  detail::require_rank("sum_rows", x, 2);
  int n = x.shape()[0], c = x.shape()[1];
  Tensor<T> out = Tensor<T>::zeros({n});
  auto ov = out.values();
  auto xv = x.values();
  for (int i = 0; i < n; ++i) {
    T s = T(0);
    for (int j = 0; j < c; ++j) s += xv[static_cast<std::size_t>(i) * c + j];
    ov[static_cast<std::size_t>(i)] = s;
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [xn, n, c](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < c; ++j) xa[static_cast<std::size_t>(i) * c + j] += ao[static_cast<std::size_t>(i)];
        }
      });
    }
  }
  return out;
}

// (N,C) + (C) with the vector broadcast across rows.
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  detail::require_rank("add_rowvec", x, 2);
  detail::require_rank("add_rowvec", v, 1);
  int n = x.shape()[0], c = x.shape()[1];
  detail::require(v.shape()[0] == c, "add_rowvec: shape mismatch " + shape_str(x.shape()) + " vs " +
                                         shape_str(v.shape()));
  Tensor<T> out = Tensor<T>::zeros({n, c});
  auto ov = out.values();
  auto xv = x.values();
  auto vv = v.values();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      ov[static_cast<std::size_t>(i) * c + j] = xv[static_cast<std::size_t>(i) * c + j] + vv[static_cast<std::size_t>(j)];
    }
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x), vn = g->track(v);
    if (xn >= 0 || vn >= 0) {
      g->record(out, [xn, vn, n, c](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        if (xn >= 0) {
          auto& xa = g.adjoint(xn);
          for (std::size_t i = 0; i < ao.size(); ++i) xa[i] += ao[i];
        }
        if (vn >= 0) {
          auto& va = g.adjoint(vn);
          for (int i = 0; i < n; ++i) {
            for (int j = 0; j < c; ++j) va[static_cast<std::size_t>(j)] += ao[static_cast<std::size_t>(i) * c + j];
          }
        }
      });
    }
  }
  return out;
}

// Per-sample scalar multiply: x (N,...) * m (N). Used for path masks.
template <class T>
Tensor<T> mul_batch_scalar(const Tensor<T>& x, const Tensor<T>& m) {
  detail::require(!x.shape().empty(), "mul_batch_scalar: scalar input");
  detail::require_rank("mul_batch_scalar", m, 1);
  int n = x.shape()[0];
  detail::require(m.shape()[0] == n, "mul_batch_scalar: batch mismatch " + shape_str(x.shape()) +
                                         " vs " + shape_str(m.shape()));
  const std::size_t stride = static_cast<std::size_t>(x.size() / n);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values();
  auto xv = x.values();
  auto mv = m.values();
  for (int b = 0; b < n; ++b) {
    const T s = mv[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < stride; ++i) ov[b * stride + i] = xv[b * stride + i] * s;
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x), mn = g->track(m);
    if (xn >= 0 || mn >= 0) {
      g->record(out, [x, m, xn, mn, n, stride](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        if (xn >= 0) {
          auto& xa = g.adjoint(xn);
          auto mv = m.values();
          for (int b = 0; b < n; ++b) {
            const T s = mv[static_cast<std::size_t>(b)];
            for (std::size_t i = 0; i < stride; ++i) xa[b * stride + i] += ao[b * stride + i] * s;
          }
        }
        if (mn >= 0) {
          auto& ma = g.adjoint(mn);
          auto xv = x.values();
          for (int b = 0; b < n; ++b) {
            T s = T(0);
            for (std::size_t i = 0; i < stride; ++i) s += ao[b * stride + i] * xv[b * stride + i];
            ma[static_cast<std::size_t>(b)] += s;
          }
        }
      });
    }
  }
  return out;
}

// out = sum_o weights[o] * xs[o]; the mixing primitive for relaxed edges.
template <class T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> xs, const Tensor<T>& weights) {
  detail::require(!xs.empty(), "weighted_sum: no inputs");
  detail::require_rank("weighted_sum", weights, 1);
  detail::require(weights.shape()[0] == static_cast<int>(xs.size()),
                  "weighted_sum: " + std::to_string(xs.size()) + " inputs vs weight shape " +
                      shape_str(weights.shape()));
  for (const auto& x : xs) detail::require_same_shape("weighted_sum", xs[0], x);
  Tensor<T> out = Tensor<T>::zeros(xs[0].shape());
  auto ov = out.values();
  auto wv = weights.values();
  for (std::size_t o = 0; o < xs.size(); ++o) {
    const T w = wv[o];
    auto xv = xs[o].values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += w * xv[i];
  }
  if (auto* g = Graph<T>::current()) {
    std::vector<int> nodes;
    bool any = false;
    for (const auto& x : xs) {
      nodes.push_back(g->track(x));
      any = any || nodes.back() >= 0;
    }
    int wn = g->track(weights);
    any = any || wn >= 0;
    if (any) {
      std::vector<Tensor<T>> inputs(xs.begin(), xs.end());
      g->record(out, [inputs, weights, nodes, wn](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto wv = weights.values();
        for (std::size_t o = 0; o < inputs.size(); ++o) {
          if (nodes[o] >= 0) {
            auto& xa = g.adjoint(nodes[o]);
            const T w = wv[o];
            for (std::size_t i = 0; i < ao.size(); ++i) xa[i] += w * ao[i];
          }
        }
        if (wn >= 0) {
          auto& wa = g.adjoint(wn);
          for (std::size_t o = 0; o < inputs.size(); ++o) {
            auto xv = inputs[o].values();
            T s = T(0);
            for (std::size_t i = 0; i < ao.size(); ++i) s += ao[i] * xv[i];
            wa[o] += s;
          }
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  detail::require(k == k2, "matmul: inner dimension mismatch " + shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros({m, n});
  auto ov = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const T x = av[static_cast<std::size_t>(i) * k + p];
      if (x == T(0)) continue;
      const T* brow = bv.data() + static_cast<std::size_t>(p) * n;
      T* orow = ov.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  if (auto* g = Graph<T>::current()) {
    int an = g->track(a), bn = g->track(b);
    if (an >= 0 || bn >= 0) {
      g->record(out, [a, b, an, bn, m, k, n](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        if (an >= 0) {
          auto& aa = g.adjoint(an);
          auto bv = b.values();
          for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
              T s = T(0);
              const T* brow = bv.data() + static_cast<std::size_t>(p) * n;
              const T* orow = ao.data() + static_cast<std::size_t>(i) * n;
              for (int j = 0; j < n; ++j) s += orow[j] * brow[j];
              aa[static_cast<std::size_t>(i) * k + p] += s;
            }
          }
        }
        if (bn >= 0) {
          auto& ba = g.adjoint(bn);
          auto av = a.values();
          for (int i = 0; i < m; ++i) {
            const T* orow = ao.data() + static_cast<std::size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
              const T x = av[static_cast<std::size_t>(i) * k + p];
              if (x == T(0)) continue;
              T* brow = ba.data() + static_cast<std::size_t>(p) * n;
              for (int j = 0; j < n; ++j) brow[j] += x * orow[j];
            }
          }
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution and pooling (NCHW)

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  detail::require_rank("conv2d", x, 4);
  detail::require_rank("conv2d", w, 4);
  detail::require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  detail::require(pad >= 0, "conv2d: negative padding");
  const int n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int cout = w.shape()[0], kcin = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  detail::require(cin == kcin, "conv2d: channel mismatch input " + shape_str(x.shape()) +
                                   " vs kernel " + shape_str(w.shape()));
  const int ho = detail::conv_out_size(h, kh, stride, pad);
  const int wo = detail::conv_out_size(wd, kw, stride, pad);
  detail::require(ho >= 1 && wo >= 1, "conv2d: kernel " + shape_str(w.shape()) +
                                          " does not fit input " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros({n, cout, ho, wo});
  auto ov = out.values();
  auto xv = x.values();
  auto wv = w.values();
  const std::size_t xplane = static_cast<std::size_t>(h) * wd;
  const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
  for (int b = 0; b < n; ++b) {
    for (int co = 0; co < cout; ++co) {
      T* oimg = ov.data() + (static_cast<std::size_t>(b) * cout + co) * oplane;
      for (int ci = 0; ci < cin; ++ci) {
        const T* ximg = xv.data() + (static_cast<std::size_t>(b) * cin + ci) * xplane;
        const T* kimg = wv.data() + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
        for (int r = 0; r < kh; ++r) {
          int rlo, rhi;
          detail::conv_span(r, stride, pad, h, ho, rlo, rhi);
          for (int c = 0; c < kw; ++c) {
            const T kval = kimg[r * kw + c];
            if (kval == T(0)) continue;
            int clo, chi;
            detail::conv_span(c, stride, pad, wd, wo, clo, chi);
            for (int i = rlo; i < rhi; ++i) {
              const T* xrow = ximg + static_cast<std::size_t>(i * stride - pad + r) * wd + (clo * stride - pad + c);
              T* orow = oimg + static_cast<std::size_t>(i) * wo;
              for (int j = clo; j < chi; ++j) {
                orow[j] += kval * xrow[static_cast<std::size_t>(j - clo) * stride];
              }
            }
          }
        }
      }
    }
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x), wn = g->track(w);
    if (xn >= 0 || wn >= 0) {
      g->record(out, [x, w, xn, wn, stride, pad, n, cin, h, wd, cout, kh, kw, ho, wo, xplane, oplane](
                         Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto xv = x.values();
        auto wv = w.values();
        if (xn >= 0) {
          auto& xa = g.adjoint(xn);
          for (int b = 0; b < n; ++b) {
            for (int co = 0; co < cout; ++co) {
              const T* oimg = ao.data() + (static_cast<std::size_t>(b) * cout + co) * oplane;
              for (int ci = 0; ci < cin; ++ci) {
                T* ximg = xa.data() + (static_cast<std::size_t>(b) * cin + ci) * xplane;
                const T* kimg = wv.data() + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
                for (int r = 0; r < kh; ++r) {
                  int rlo, rhi;
                  detail::conv_span(r, stride, pad, h, ho, rlo, rhi);
                  for (int c = 0; c < kw; ++c) {
                    const T kval = kimg[r * kw + c];
                    if (kval == T(0)) continue;
                    int clo, chi;
                    detail::conv_span(c, stride, pad, wd, wo, clo, chi);
                    for (int i = rlo; i < rhi; ++i) {
                      T* xrow = ximg + static_cast<std::size_t>(i * stride - pad + r) * wd + (clo * stride - pad + c);
                      const T* orow = oimg + static_cast<std::size_t>(i) * wo;
                      for (int j = clo; j < chi; ++j) {
                        xrow[static_cast<std::size_t>(j - clo) * stride] += kval * orow[j];
                      }
                    }
                  }
                }
              }
            }
          }
        }
        if (wn >= 0) {
          auto& wa = g.adjoint(wn);
          for (int b = 0; b < n; ++b) {
            for (int co = 0; co < cout; ++co) {
              const T* oimg = ao.data() + (static_cast<std::size_t>(b) * cout + co) * oplane;
              for (int ci = 0; ci < cin; ++ci) {
                const T* ximg = xv.data() + (static_cast<std::size_t>(b) * cin + ci) * xplane;
                T* kimg = wa.data() + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
                for (int r = 0; r < kh; ++r) {
                  int rlo, rhi;
                  detail::conv_span(r, stride, pad, h, ho, rlo, rhi);
                  for (int c = 0; c < kw; ++c) {
                    int clo, chi;
                    detail::conv_span(c, stride, pad, wd, wo, clo, chi);
                    T s = T(0);
                    for (int i = rlo; i < rhi; ++i) {
                      const T* xrow = ximg + static_cast<std::size_t>(i * stride - pad + r) * wd + (clo * stride - pad + c);
                      const T* orow = oimg + static_cast<std::size_t>(i) * wo;
                      for (int j = clo; j < chi; ++j) {
                        s += xrow[static_cast<std::size_t>(j - clo) * stride] * orow[j];
                      }
                    }
                    kimg[r * kw + c] += s;
                  }
                }
              }
            }
          }
        }
      });
    }
  }
  return out;
}

namespace detail {

template <class T>
void pool_check(const char* op, const Tensor<T>& x, int kernel, int stride, int pad) {
  require_rank(op, x, 4);
  require(kernel >= 1, std::string(op) + ": kernel must be >= 1");
  require(stride == 1 || stride == 2, std::string(op) + ": stride must be 1 or 2");
  require(pad >= 0 && pad < kernel, std::string(op) + ": padding must be in [0, kernel)");
}

}  // namespace detail

// Average pooling; padded cells are excluded from the divisor.
template <class T>
Tensor<T> avg_pool(const Tensor<T>& x, int kernel, int stride, int pad) {
  detail::pool_check("avg_pool", x, kernel, stride, pad);
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int ho = detail::conv_out_size(h, kernel, stride, pad);
  const int wo = detail::conv_out_size(w, kernel, stride, pad);
  detail::require(ho >= 1 && wo >= 1, "avg_pool: window does not fit input " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros({n, c, ho, wo});
  auto ov = out.values();
  auto xv = x.values();
  const std::size_t xplane = static_cast<std::size_t>(h) * w;
  const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
  for (int bc = 0; bc < n * c; ++bc) {
    const T* ximg = xv.data() + bc * xplane;
    T* oimg = ov.data() + bc * oplane;
    for (int i = 0; i < ho; ++i) {
      const int r0 = std::max(0, i * stride - pad);
      const int r1 = std::min(h, i * stride - pad + kernel);
      for (int j = 0; j < wo; ++j) {
        const int c0 = std::max(0, j * stride - pad);
        const int c1 = std::min(w, j * stride - pad + kernel);
        T s = T(0);
        for (int r = r0; r < r1; ++r) {
          for (int q = c0; q < c1; ++q) s += ximg[static_cast<std::size_t>(r) * w + q];
        }
        oimg[static_cast<std::size_t>(i) * wo + j] = s / static_cast<T>((r1 - r0) * (c1 - c0));
      }
    }
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [xn, kernel, stride, pad, n, c, h, w, ho, wo, xplane, oplane](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        for (int bc = 0; bc < n * c; ++bc) {
          T* ximg = xa.data() + bc * xplane;
          const T* oimg = ao.data() + bc * oplane;
          for (int i = 0; i < ho; ++i) {
            const int r0 = std::max(0, i * stride - pad);
            const int r1 = std::min(h, i * stride - pad + kernel);
            for (int j = 0; j < wo; ++j) {
              const int c0 = std::max(0, j * stride - pad);
              const int c1 = std::min(w, j * stride - pad + kernel);
              const T a = oimg[static_cast<std::size_t>(i) * wo + j] / static_cast<T>((r1 - r0) * (c1 - c0));
              for (int r = r0; r < r1; ++r) {
                for (int q = c0; q < c1; ++q) ximg[static_cast<std::size_t>(r) * w + q] += a;
              }
            }
          }
        }
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> max_pool(const Tensor<T>& x, int kernel, int stride, int pad) {
  detail::pool_check("max_pool", x, kernel, stride, pad);
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int ho = detail::conv_out_size(h, kernel, stride, pad);
  const int wo = detail::conv_out_size(w, kernel, stride, pad);
  detail::require(ho >= 1 && wo >= 1, "max_pool: window does not fit input " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros({n, c, ho, wo});
  auto ov = out.values();
  auto xv = x.values();
  const std::size_t xplane = static_cast<std::size_t>(h) * w;
  const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
  // First maximum in scan order wins, which keeps backward deterministic.
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(n) * c * oplane);
  for (int bc = 0; bc < n * c; ++bc) {
    const T* ximg = xv.data() + bc * xplane;
    T* oimg = ov.data() + bc * oplane;
    for (int i = 0; i < ho; ++i) {
      const int r0 = std::max(0, i * stride - pad);
      const int r1 = std::min(h, i * stride - pad + kernel);
      for (int j = 0; j < wo; ++j) {
        const int c0 = std::max(0, j * stride - pad);
        const int c1 = std::min(w, j * stride - pad + kernel);
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t bestIdx = -1;
        for (int r = r0; r < r1; ++r) {
          for (int q = c0; q < c1; ++q) {
            const T v = ximg[static_cast<std::size_t>(r) * w + q];
            if (v > best) {
              best = v;
              bestIdx = static_cast<std::int64_t>(r) * w + q;
            }
          }
        }
        oimg[static_cast<std::size_t>(i) * wo + j] = best;
        argmax[bc * oplane + static_cast<std::size_t>(i) * wo + j] = bestIdx;
      }
    }
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [xn, argmax = std::move(argmax), n, c, xplane, oplane](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        for (int bc = 0; bc < n * c; ++bc) {
          T* ximg = xa.data() + bc * xplane;
          const T* oimg = ao.data() + bc * oplane;
          const std::int64_t* amax = argmax.data() + bc * oplane;
          for (std::size_t i = 0; i < oplane; ++i) ximg[amax[i]] += oimg[i];
        }
      });
    }
  }
  return out;
}

// Per-channel batch normalization over (N,H,W) with batch statistics only:
// no running stats, no learned affine.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  detail::require_rank("batch_norm", x, 4);
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const T m = static_cast<T>(n) * static_cast<T>(h) * static_cast<T>(w);
  std::vector<T> mean(static_cast<std::size_t>(c), T(0));
  std::vector<T> invstd(static_cast<std::size_t>(c), T(0));
  auto xv = x.values();
  for (int ch = 0; ch < c; ++ch) {
    T s = T(0);
    for (int b = 0; b < n; ++b) {
      const T* ximg = xv.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += ximg[i];
    }
    mean[static_cast<std::size_t>(ch)] = s / m;
  }
  for (int ch = 0; ch < c; ++ch) {
    const T mu = mean[static_cast<std::size_t>(ch)];
    T s = T(0);
    for (int b = 0; b < n; ++b) {
      const T* ximg = xv.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = ximg[i] - mu;
        s += d * d;
      }
    }
    invstd[static_cast<std::size_t>(ch)] = T(1) / std::sqrt(s / m + eps);
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T mu = mean[static_cast<std::size_t>(ch)];
      const T is = invstd[static_cast<std::size_t>(ch)];
      const T* ximg = xv.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
      T* oimg = ov.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) oimg[i] = (ximg[i] - mu) * is;
    }
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      // dx = invstd/m * (m*dy - sum(dy) - xhat * sum(dy*xhat)), per channel.
      g->record(out, [out, xn, invstd = std::move(invstd), n, c, plane, m](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        auto xhat = out.values();
        for (int ch = 0; ch < c; ++ch) {
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int b = 0; b < n; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += ao[base + i];
              sum_dy_xhat += ao[base + i] * xhat[base + i];
            }
          }
          const T is = invstd[static_cast<std::size_t>(ch)];
          for (int b = 0; b < n; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              xa[base + i] += is / m * (m * ao[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat);
            }
          }
        }
      });
    }
  }
  return out;
}

// (N,C,H,W) -> (N,C) spatial mean; the classifier head input.
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank("global_avg_pool", x, 4);
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const T inv = T(1) / static_cast<T>(plane);
  Tensor<T> out = Tensor<T>::zeros({n, c});
  auto ov = out.values();
  auto xv = x.values();
  for (int bc = 0; bc < n * c; ++bc) {
    T s = T(0);
    const T* ximg = xv.data() + bc * plane;
    for (std::size_t i = 0; i < plane; ++i) s += ximg[i];
    ov[static_cast<std::size_t>(bc)] = s * inv;
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [xn, n, c, plane, inv](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        for (int bc = 0; bc < n * c; ++bc) {
          const T a = ao[static_cast<std::size_t>(bc)] * inv;
          T* ximg = xa.data() + bc * plane;
          for (std::size_t i = 0; i < plane; ++i) ximg[i] += a;
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax family (over the last axis; rank 1 or 2)

namespace detail {

template <class T>
void softmax_dims(const char* op, const Tensor<T>& x, int& rows, int& cols) {
  require(x.shape().size() == 1 || x.shape().size() == 2,
          std::string(op) + ": expected rank 1 or 2, got " + shape_str(x.shape()));
  if (x.shape().size() == 1) {
    rows = 1;
    cols = x.shape()[0];
  } else {
    rows = x.shape()[0];
    cols = x.shape()[1];
  }
  for (T v : x.values()) {
    require(!std::isnan(v), std::string(op) + ": NaN input");
  }
}

}  // namespace detail

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  int rows, cols;
  detail::softmax_dims("softmax", x, rows, cols);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values();
  auto xv = x.values();
  for (int r = 0; r < rows; ++r) {
    const T* xr = xv.data() + static_cast<std::size_t>(r) * cols;
    T* orow = ov.data() + static_cast<std::size_t>(r) * cols;
    T mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    T z = T(0);
    for (int j = 0; j < cols; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < cols; ++j) orow[j] /= z;
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [out, xn, rows, cols](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        auto p = out.values();
        for (int r = 0; r < rows; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * cols;
          T dot = T(0);
          for (int j = 0; j < cols; ++j) dot += ao[base + j] * p[base + j];
          for (int j = 0; j < cols; ++j) xa[base + j] += p[base + j] * (ao[base + j] - dot);
        }
      });
    }
  }
  return out;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  int rows, cols;
  detail::softmax_dims("log_softmax", x, rows, cols);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values();
  auto xv = x.values();
  for (int r = 0; r < rows; ++r) {
    const T* xr = xv.data() + static_cast<std::size_t>(r) * cols;
    T* orow = ov.data() + static_cast<std::size_t>(r) * cols;
    T mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    T z = T(0);
    for (int j = 0; j < cols; ++j) z += std::exp(xr[j] - mx);
    const T lse = mx + std::log(z);
    for (int j = 0; j < cols; ++j) orow[j] = xr[j] - lse;
  }
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(x);
    if (xn >= 0) {
      g->record(out, [out, xn, rows, cols](Graph<T>& g, int self) {
        const auto& ao = g.out_adjoint(self);
        auto& xa = g.adjoint(xn);
        auto lsm = out.values();
        for (int r = 0; r < rows; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * cols;
          T s = T(0);
          for (int j = 0; j < cols; ++j) s += ao[base + j];
          for (int j = 0; j < cols; ++j) xa[base + j] += ao[base + j] - std::exp(lsm[base + j]) * s;
        }
      });
    }
  }
  return out;
}

// Mean negative log-likelihood of the true classes.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  detail::require_rank("cross_entropy", logits, 2);
  const int n = logits.shape()[0], c = logits.shape()[1];
  detail::require(static_cast<int>(labels.size()) == n,
                  "cross_entropy: " + std::to_string(labels.size()) + " labels for batch " + std::to_string(n));
  for (int y : labels) {
    detail::require(y >= 0 && y < c, "cross_entropy: label " + std::to_string(y) +
                                         " out of range for " + std::to_string(c) + " classes");
  }
  auto xv = logits.values();
  std::vector<T> rows(static_cast<std::size_t>(n) * c);
  T loss = T(0);
  for (int r = 0; r < n; ++r) {
    const T* xr = xv.data() + static_cast<std::size_t>(r) * c;
    T mx = xr[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    T z = T(0);
    for (int j = 0; j < c; ++j) z += std::exp(xr[j] - mx);
    const T lse = mx + std::log(z);
    for (int j = 0; j < c; ++j) rows[static_cast<std::size_t>(r) * c + j] = std::exp(xr[j] - lse);
    loss -= xr[labels[static_cast<std::size_t>(r)]] - lse;
  }
  loss /= static_cast<T>(n);
  Tensor<T> out = Tensor<T>::scalar(loss);
  if (auto* g = Graph<T>::current()) {
    int xn = g->track(logits);
    if (xn >= 0) {
      g->record(out, [xn, labels, softmax_rows = std::move(rows), n, c](Graph<T>& g, int self) {
        const T a = g.out_adjoint(self)[0] / static_cast<T>(n);
        auto& xa = g.adjoint(xn);
        for (int r = 0; r < n; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * c;
          for (int j = 0; j < c; ++j) {
            T v = softmax_rows[base + j];
            if (j == labels[static_cast<std::size_t>(r)]) v -= T(1);
            xa[base + j] += a * v;
          }
        }
      });
    }
  }
  return out;
}

}  // namespace rnas
