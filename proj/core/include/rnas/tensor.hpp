#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rnas {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <class T>
class Graph;

namespace detail {

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until materialized
  bool requires_grad = false;
  // Position in the graph that recorded this tensor. graph_id pairs with
  // Graph::id() so a handle surviving its graph is treated as a fresh leaf.
  std::uint64_t graph_id = 0;
  int node = -1;
};

}  // namespace detail

// Value handle into a reverse-mode differentiation graph. Copies share
// storage; all data is packed row-major.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad, true);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.d_->values) v = value;
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(shape));
    }
    Tensor t;
    t.d_ = std::make_shared<detail::TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_values({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(d_->values.size()); }

  std::span<T> values() { return d_->values; }
  std::span<const T> values() const { return d_->values; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::span<T> grad() {
    if (d_->grad.empty()) {
      throw std::logic_error("tensor: gradient requested but never materialized");
    }
    return d_->grad;
  }
  std::span<const T> grad() const {
    if (d_->grad.empty()) {
      throw std::logic_error("tensor: gradient requested but never materialized");
    }
    return d_->grad;
  }

  void zero_grad() { d_->grad.assign(d_->values.size(), T(0)); }

  void accumulate_grad(std::span<const T> g) {
    if (static_cast<std::int64_t>(g.size()) != size()) {
      throw std::invalid_argument("tensor: gradient size mismatch");
    }
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
    for (std::size_t i = 0; i < g.size(); ++i) d_->grad[i] += g[i];
  }

  T item() const {
    if (size() != 1) {
      throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(shape()));
    }
    return d_->values[0];
  }

  // Deep copy with no gradient tracking.
  Tensor detach() const {
    return from_values(d_->shape, d_->values, false);
  }

  detail::TensorData<T>* impl() const { return d_.get(); }
  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  Tensor(Shape shape, std::vector<T>, bool requires_grad, bool /*zeroed*/) {
    d_ = std::make_shared<detail::TensorData<T>>();
    d_->values.assign(static_cast<std::size_t>(numel(shape)), T(0));
    d_->shape = std::move(shape);
    d_->requires_grad = requires_grad;
  }

  std::shared_ptr<detail::TensorData<T>> d_;
};

// Ordered record of primitive operations. Nodes are appended in execution
// order; backward replays them in exact reverse creation order, which keeps
// gradient accumulation deterministic.
template <class T>
class Graph {
 public:
  // A node's backward reads its own adjoint and scatters into operand
  // adjoints via the node ids captured at record time.
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() : id_(next_id()) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  class Scope {
   public:
    explicit Scope(Graph& g) : prev_(tl_current_) { tl_current_ = &g; }
    ~Scope() { tl_current_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* prev_;
  };

  static Graph* current() { return tl_current_; }

  std::uint64_t id() const { return id_; }
  std::size_t node_count() const { return nodes_.size(); }

  bool tracks(const Tensor<T>& t) const {
    return t.defined() && t.impl()->graph_id == id_;
  }

  // Node id of `t` on this graph. Registers a leaf for gradient-requiring
  // tensors seen for the first time; returns -1 for plain constants.
  int track(const Tensor<T>& t) {
    auto* d = t.impl();
    if (d->graph_id == id_) return d->node;
    if (!d->requires_grad) return -1;
    nodes_.push_back(Node{t, BackwardFn{}});
    d->graph_id = id_;
    d->node = static_cast<int>(nodes_.size()) - 1;
    return d->node;
  }

  // Registers an op output together with its backward closure.
  int record(const Tensor<T>& out, BackwardFn fn) {
    nodes_.push_back(Node{out, std::move(fn)});
    auto* d = out.impl();
    d->graph_id = id_;
    d->node = static_cast<int>(nodes_.size()) - 1;
    return d->node;
  }

  // Adjoint buffer of a node, materialized on first touch.
  std::vector<T>& adjoint(int node) {
    auto& a = adj_[static_cast<std::size_t>(node)];
    if (a.empty()) a.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].tensor.size()), T(0));
    return a;
  }

  const std::vector<T>& out_adjoint(int node) const { return adj_[static_cast<std::size_t>(node)]; }

  // Full backward: propagates adjoints and adds dLoss/dTensor into the .grad
  // of every gradient-requiring leaf reached from `loss`.
  void backward(const Tensor<T>& loss) {
    propagate(loss);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (!n.fn && n.tensor.requires_grad() && !adj_[i].empty()) {
        n.tensor.accumulate_grad(adj_[i]);
      }
    }
    adj_.clear();
  }

  // Gradients of `loss` w.r.t. `wrt` only. Nothing is published to any
  // tensor's .grad, so parameters touched by the forward stay untouched.
  std::vector<std::vector<T>> gradients(const Tensor<T>& loss, std::span<const Tensor<T>> wrt) {
    propagate(loss);
    std::vector<std::vector<T>> out;
    out.reserve(wrt.size());
    for (const Tensor<T>& t : wrt) {
      const auto* d = t.impl();
      if (d->graph_id == id_ && d->node >= 0 && !adj_[static_cast<std::size_t>(d->node)].empty()) {
        out.push_back(adj_[static_cast<std::size_t>(d->node)]);
      } else {
        out.emplace_back(static_cast<std::size_t>(t.size()), T(0));
      }
    }
    adj_.clear();
    return out;
  }

  static std::uint64_t backward_count() { return tl_backward_count_; }
  static void reset_backward_count() { tl_backward_count_ = 0; }

 private:
  struct Node {
    Tensor<T> tensor;
    BackwardFn fn;  // empty for leaves
  };

  void propagate(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar, got " +
                                  (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!tracks(loss) || nodes_.empty()) {
      throw std::invalid_argument("backward: loss does not belong to this graph");
    }
    ++tl_backward_count_;
    adj_.assign(nodes_.size(), {});
    adjoint(loss.impl()->node)[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].fn && !adj_[i].empty()) {
        nodes_[i].fn(*this, static_cast<int>(i));
      }
    }
  }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> adj_;
  static inline thread_local Graph* tl_current_ = nullptr;
  static inline thread_local std::uint64_t tl_backward_count_ = 0;
};

}  // namespace rnas
