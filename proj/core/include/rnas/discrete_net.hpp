#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rnas/network.hpp"

namespace rnas {

// Network containing only the operations retained by a genotype. Shares the
// cell layout, stem, classifier and parameter naming with the supernet so
// checkpoints and weight transfer line up.
template <class T>
class DiscreteNet {
 public:
  struct Edge {
    int input = 0;
    OpKind op = OpKind::Skip;
    int edge_index = 0;  // supernet edge id, for name alignment
    Tensor<T> weight;    // defined only for conv ops
  };

  struct Cell {
    bool reduction = false;
    Tensor<T> pre0_w, pre1_w;
    int pre0_stride = 1;
    std::vector<Edge> edges;  // 2 per intermediate node, in node order
  };

  DiscreteNet(const Genotype& genotype, NetworkShape shape, Rng& rng, bool aux_head = false)
      : genotype_(genotype), shape_(shape), aux_enabled_(aux_head) {
    validate_genotype(genotype_);
    detail::require(genotype_.nodes == shape_.nodes,
                    "discrete net: genotype has " + std::to_string(genotype_.nodes) +
                        " nodes, network expects " + std::to_string(shape_.nodes));
    const int stem_out = shape_.channels * shape_.stem_multiplier;
    stem_w_ = conv_weight<T>(stem_out, shape_.in_channels, 3, rng);

    int c_pp = stem_out, c_p = stem_out, c_curr = shape_.channels;
    bool prev_reduction = false;
    aux_index_ = shape_.cells >= 3 ? 2 * shape_.cells / 3 : shape_.cells - 1;
    for (int k = 0; k < shape_.cells; ++k) {
      Cell cell;
      cell.reduction = is_reduction_cell(k, shape_.cells);
      if (cell.reduction) c_curr *= 2;
      cell.pre0_stride = prev_reduction ? 2 : 1;
      cell.pre0_w = conv_weight<T>(c_curr, c_pp, 1, rng);
      cell.pre1_w = conv_weight<T>(c_curr, c_p, 1, rng);
      const auto& edges = cell.reduction ? genotype_.reduce : genotype_.normal;
      for (const GenotypeEdge& ge : edges) {
        Edge e;
        e.input = ge.input;
        e.op = ge.op;
        e.edge_index = edge_offset(ge.node - 2) + ge.input;
        if (op_has_weights(ge.op)) {
          e.weight = conv_weight<T>(c_curr, c_curr, candidate_kernel(ge.op), rng);
        }
        cell.edges.push_back(std::move(e));
      }
      prev_reduction = cell.reduction;
      if (k == aux_index_) aux_channels_ = shape_.nodes * c_curr;
      cells_.push_back(std::move(cell));
      c_pp = c_p;
      c_p = shape_.nodes * c_curr;
    }

    classifier_w_ = linear_weight<T>(c_p, shape_.classes, rng);
    classifier_b_ = Tensor<T>::zeros({shape_.classes}, true);
    if (aux_enabled_) {
      aux_w_ = linear_weight<T>(aux_channels_, shape_.classes, rng);
      aux_b_ = Tensor<T>::zeros({shape_.classes}, true);
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const { return run(x, 0.0, nullptr).logits; }

  struct ForwardResult {
    Tensor<T> logits;
    Tensor<T> aux_logits;  // undefined unless the aux head is enabled
  };

  // Training forward. Drop-path zeroes each non-skip edge output per sample
  // with the given probability, rescaling survivors by 1/(1-p).
  ForwardResult forward_train(const Tensor<T>& x, double drop_path_prob, Rng* rng) const {
    return run(x, drop_path_prob, rng);
  }

  std::vector<NamedParam<T>> named_params() const {
    std::vector<NamedParam<T>> out;
    out.push_back({"stem.w", stem_w_});
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      const std::string prefix = "cell" + std::to_string(k) + ".";
      out.push_back({prefix + "pre0.w", cells_[k].pre0_w});
      out.push_back({prefix + "pre1.w", cells_[k].pre1_w});
      for (const Edge& e : cells_[k].edges) {
        if (e.weight.defined()) {
          out.push_back({prefix + "edge" + std::to_string(e.edge_index) + "." + op_name(e.op) + ".w", e.weight});
        }
      }
    }
    out.push_back({"classifier.w", classifier_w_});
    out.push_back({"classifier.b", classifier_b_});
    if (aux_enabled_) {
      out.push_back({"aux.w", aux_w_});
      out.push_back({"aux.b", aux_b_});
    }
    return out;
  }

  std::vector<Tensor<T>> params() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : named_params()) out.push_back(p.tensor);
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : named_params()) n += p.tensor.size();
    return n;
  }

  // Parameters inside cells only; scales exactly with channels^2.
  std::int64_t cell_parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : named_params()) {
      if (p.name.rfind("cell", 0) == 0) n += p.tensor.size();
    }
    return n;
  }

  // Copies any parameter whose name and shape match the source list.
  void load_matching(const std::vector<NamedParam<T>>& source) {
    std::map<std::string, Tensor<T>> by_name;
    for (const auto& p : source) by_name.emplace(p.name, p.tensor);
    for (auto& p : named_params()) {
      auto it = by_name.find(p.name);
      if (it == by_name.end() || it->second.shape() != p.tensor.shape()) continue;
      auto dst = p.tensor.values();
      auto src = it->second.values();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  const Genotype& genotype() const { return genotype_; }
  const NetworkShape& shape() const { return shape_; }
  bool has_aux() const { return aux_enabled_; }

 private:
  ForwardResult run(const Tensor<T>& x, double drop_path_prob, Rng* rng) const {
    detail::require(x.defined() && x.shape().size() == 4 && x.shape()[1] == shape_.in_channels,
                    "discrete net: expected input (batch," + std::to_string(shape_.in_channels) +
                        ",H,W), got " + (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
    ForwardResult result;
    Tensor<T> stem = batch_norm(conv2d(x, stem_w_, 1, 1));
    Tensor<T> s0 = stem, s1 = stem;
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      Tensor<T> out = cell_forward(cells_[k], s0, s1, drop_path_prob, rng, x.shape()[0]);
      s0 = s1;
      s1 = out;
      if (aux_enabled_ && static_cast<int>(k) == aux_index_) {
        result.aux_logits = add_rowvec(matmul(global_avg_pool(s1), aux_w_), aux_b_);
      }
    }
    result.logits = add_rowvec(matmul(global_avg_pool(s1), classifier_w_), classifier_b_);
    return result;
  }

  Tensor<T> cell_forward(const Cell& cell, const Tensor<T>& s0, const Tensor<T>& s1,
                         double drop_path_prob, Rng* rng, int batch) const {
    std::vector<Tensor<T>> states;
    states.push_back(preprocess(s0, cell.pre0_w, cell.pre0_stride));
    states.push_back(preprocess(s1, cell.pre1_w, 1));
    for (int i = 0; i < shape_.nodes; ++i) {
      Tensor<T> acc;
      for (int slot = 0; slot < 2; ++slot) {
        const Edge& e = cell.edges[static_cast<std::size_t>(2 * i + slot)];
        const int stride = (cell.reduction && e.input < 2) ? 2 : 1;
        Tensor<T> out = apply_candidate(e.op, states[static_cast<std::size_t>(e.input)], e.weight, stride);
        if (drop_path_prob > 0.0 && rng != nullptr && e.op != OpKind::Skip) {
          out = mul_batch_scalar(out, drop_path_mask(batch, drop_path_prob, *rng));
        }
        acc = acc.defined() ? add(acc, out) : out;
      }
      states.push_back(acc);
    }
    return concat_channels(std::span<const Tensor<T>>(states.data() + 2, static_cast<std::size_t>(shape_.nodes)));
  }

  static Tensor<T> drop_path_mask(int batch, double prob, Rng& rng) {
    Tensor<T> mask = Tensor<T>::zeros({batch});
    auto mv = mask.values();
    const T keep = static_cast<T>(1.0 / (1.0 - prob));
    for (int b = 0; b < batch; ++b) {
      mv[static_cast<std::size_t>(b)] = rng.uniform(0.0, 1.0) < prob ? T(0) : keep;
    }
    return mask;
  }

  Genotype genotype_;
  NetworkShape shape_;
  bool aux_enabled_ = false;
  int aux_index_ = -1;
  int aux_channels_ = 0;
  Tensor<T> stem_w_;
  std::vector<Cell> cells_;
  Tensor<T> classifier_w_, classifier_b_;
  Tensor<T> aux_w_, aux_b_;
};

}  // namespace rnas
