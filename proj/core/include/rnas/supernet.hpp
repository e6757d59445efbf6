#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rnas/network.hpp"

namespace rnas {

// Cell-based over-parameterized network. Every edge carries all candidate
// operations mixed by softmax(alpha); normal and reduction cells share one
// alpha matrix each across the stack.
template <class T>
class Supernet {
 public:
  struct MixedCell {
    bool reduction = false;
    Tensor<T> pre0_w, pre1_w;
    int pre0_stride = 1;
    // [edge][op] weight tensors; undefined handle for parameter-free ops.
    std::vector<std::vector<Tensor<T>>> edge_weights;
  };

  Supernet(NetworkShape shape, OpSet ops, Rng& rng, double alpha_noise = 1e-3)
      : shape_(shape), ops_(std::move(ops)) {
    const int stem_out = shape_.channels * shape_.stem_multiplier;
    stem_w_ = conv_weight<T>(stem_out, shape_.in_channels, 3, rng);

    int c_pp = stem_out, c_p = stem_out, c_curr = shape_.channels;
    bool prev_reduction = false;
    for (int k = 0; k < shape_.cells; ++k) {
      MixedCell cell;
      cell.reduction = is_reduction_cell(k, shape_.cells);
      if (cell.reduction) c_curr *= 2;
      cell.pre0_stride = prev_reduction ? 2 : 1;
      cell.pre0_w = conv_weight<T>(c_curr, c_pp, 1, rng);
      cell.pre1_w = conv_weight<T>(c_curr, c_p, 1, rng);
      cell.edge_weights.resize(static_cast<std::size_t>(edge_count(shape_.nodes)));
      for (auto& per_op : cell.edge_weights) {
        per_op.resize(ops_.size());
        for (std::size_t o = 0; o < ops_.size(); ++o) {
          if (op_has_weights(ops_[o])) {
            per_op[o] = conv_weight<T>(c_curr, c_curr, candidate_kernel(ops_[o]), rng);
          }
        }
      }
      cells_.push_back(std::move(cell));
      c_pp = c_p;
      c_p = shape_.nodes * c_curr;
      prev_reduction = cell_at(k).reduction;
    }

    classifier_w_ = linear_weight<T>(c_p, shape_.classes, rng);
    classifier_b_ = Tensor<T>::zeros({shape_.classes}, true);

    const int edges = edge_count(shape_.nodes);
    alpha_normal_ = Tensor<T>::zeros({edges, static_cast<int>(ops_.size())}, true);
    alpha_reduce_ = Tensor<T>::zeros({edges, static_cast<int>(ops_.size())}, true);
    for (auto& v : alpha_normal_.values()) v = static_cast<T>(rng.normal(0.0, alpha_noise));
    for (auto& v : alpha_reduce_.values()) v = static_cast<T>(rng.normal(0.0, alpha_noise));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    check_input(x);
    ++forward_count_;
    Tensor<T> stem = batch_norm(conv2d(x, stem_w_, 1, 1));
    Tensor<T> s0 = stem, s1 = stem;
    for (const MixedCell& cell : cells_) {
      Tensor<T> out = cell_forward(cell, s0, s1);
      s0 = s1;
      s1 = out;
    }
    Tensor<T> pooled = global_avg_pool(s1);
    return add_rowvec(matmul(pooled, classifier_w_), classifier_b_);
  }

  Tensor<T> alpha_normal() const { return alpha_normal_; }
  Tensor<T> alpha_reduce() const { return alpha_reduce_; }

  std::vector<Tensor<T>> arch_params() const { return {alpha_normal_, alpha_reduce_}; }

  std::vector<Tensor<T>> weight_params() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : named_weights()) out.push_back(p.tensor);
    return out;
  }

  std::vector<NamedParam<T>> named_weights() const {
    std::vector<NamedParam<T>> out;
    out.push_back({"stem.w", stem_w_});
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      const std::string prefix = "cell" + std::to_string(k) + ".";
      out.push_back({prefix + "pre0.w", cells_[k].pre0_w});
      out.push_back({prefix + "pre1.w", cells_[k].pre1_w});
      for (std::size_t e = 0; e < cells_[k].edge_weights.size(); ++e) {
        for (std::size_t o = 0; o < ops_.size(); ++o) {
          const Tensor<T>& w = cells_[k].edge_weights[e][o];
          if (w.defined()) {
            out.push_back({prefix + "edge" + std::to_string(e) + "." + op_name(ops_[o]) + ".w", w});
          }
        }
      }
    }
    out.push_back({"classifier.w", classifier_w_});
    out.push_back({"classifier.b", classifier_b_});
    return out;
  }

  std::vector<NamedParam<T>> named_arch_params() const {
    return {{"alpha.normal", alpha_normal_}, {"alpha.reduce", alpha_reduce_}};
  }

  Genotype derive() const {
    return derive_genotype(alpha_rows(alpha_normal_), alpha_rows(alpha_reduce_), ops_, shape_.nodes);
  }

  const NetworkShape& shape() const { return shape_; }
  const OpSet& ops() const { return ops_; }
  std::uint64_t forward_count() const { return forward_count_; }
  void reset_forward_count() { forward_count_ = 0; }

  static std::vector<std::vector<double>> alpha_rows(const Tensor<T>& alpha) {
    const int edges = alpha.shape()[0], nops = alpha.shape()[1];
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(edges));
    auto av = alpha.values();
    for (int e = 0; e < edges; ++e) {
      rows[static_cast<std::size_t>(e)].assign(av.begin() + static_cast<std::ptrdiff_t>(e) * nops,
                                               av.begin() + static_cast<std::ptrdiff_t>(e + 1) * nops);
    }
    return rows;
  }

 private:
  const MixedCell& cell_at(int k) const { return cells_[static_cast<std::size_t>(k)]; }

  void check_input(const Tensor<T>& x) const {
    detail::require(x.defined() && x.shape().size() == 4 && x.shape()[1] == shape_.in_channels,
                    "supernet: expected input (batch," + std::to_string(shape_.in_channels) +
                        ",H,W), got " + (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
  }

  Tensor<T> cell_forward(const MixedCell& cell, const Tensor<T>& s0, const Tensor<T>& s1) const {
    const Tensor<T>& alpha = cell.reduction ? alpha_reduce_ : alpha_normal_;
    std::vector<Tensor<T>> states;
    states.push_back(preprocess(s0, cell.pre0_w, cell.pre0_stride));
    states.push_back(preprocess(s1, cell.pre1_w, 1));
    for (int i = 0; i < shape_.nodes; ++i) {
      Tensor<T> acc;
      for (int j = 0; j < i + 2; ++j) {
        const int e = edge_offset(i) + j;
        const int stride = (cell.reduction && j < 2) ? 2 : 1;
        Tensor<T> mix_w = softmax(select_row(alpha, e));
        std::vector<Tensor<T>> outs;
        outs.reserve(ops_.size());
        for (std::size_t o = 0; o < ops_.size(); ++o) {
          outs.push_back(apply_candidate(ops_[o], states[static_cast<std::size_t>(j)],
                                         cell.edge_weights[static_cast<std::size_t>(e)][o], stride));
        }
        Tensor<T> mixed = weighted_sum(std::span<const Tensor<T>>(outs), mix_w);
        acc = acc.defined() ? add(acc, mixed) : mixed;
      }
      states.push_back(acc);
    }
    return concat_channels(std::span<const Tensor<T>>(states.data() + 2, static_cast<std::size_t>(shape_.nodes)));
  }

  NetworkShape shape_;
  OpSet ops_;
  Tensor<T> stem_w_;
  std::vector<MixedCell> cells_;
  Tensor<T> classifier_w_, classifier_b_;
  Tensor<T> alpha_normal_, alpha_reduce_;
  mutable std::uint64_t forward_count_ = 0;
};

}  // namespace rnas
