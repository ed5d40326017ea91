#pragma once

#include <Eigen/Core>
#include <atomic>
#include <unordered_set>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>

#include "fieldgen/common.hpp"

namespace fieldgen::ad {

using Shape = std::vector<long>;

template <class T>
using Buf = Eigen::Array<T, Eigen::Dynamic, 1>;

inline long numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw shape_error(msg);
}

// Gradient recording is on by default; NoGradGuard suspends it for a scope.
struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

template <class T>
struct Node;

namespace detail {

// During a targeted reverse sweep this points at the set of nodes whose
// gradients can still reach a requested target; vjps consult it to skip
// dead branches (e.g. weight gradients when only input gradients are asked
// for).
template <class T>
inline const std::unordered_set<const Node<T>*>*& needed_filter() {
  thread_local const std::unordered_set<const Node<T>*>* filter = nullptr;
  return filter;
}

}  // namespace detail

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
};

template <class T>
class Tensor;

// One recorded op (or leaf) in the differentiation graph. Nodes are created
// in strictly increasing id order, so ids give a valid topological order.
template <class T>
struct Node {
  Shape shape;
  Buf<T> value;
  Buf<T> grad;  // populated by backward(); same length as value
  bool has_grad = false;
  bool requires_grad = false;
  bool leaf = true;
  bool backward_done = false;
  const char* op = "leaf";
  std::uint64_t id = 0;
  std::vector<Tensor<T>> parents;
  // Returns one gradient per parent (empty Tensor for non-differentiable
  // slots). Must be built from Tensor ops so that gradients can themselves
  // be differentiated.
  std::function<std::vector<Tensor<T>>(const Tensor<T>& gout)> vjp;

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }
};

template <class T>
void check_finite(const Buf<T>& v, const char* op) {
  if (!v.allFinite())
    throw numeric_error(std::string("non-finite output in op '") + op + "'");
}

// Shared handle to a graph node. Copies alias the same storage.
template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  bool defined() const { return static_cast<bool>(n_); }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_buf(std::move(shape), Buf<T>::Zero(0), requires_grad, true);
  }
  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    Buf<T> b = Buf<T>::Constant(fieldgen::ad::numel(shape), fill);
    return from_buf(std::move(shape), std::move(b), requires_grad, false);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(1), requires_grad);
  }
  static Tensor from_data(Shape shape, const std::vector<T>& data,
                          bool requires_grad = false) {
    require(fieldgen::ad::numel(shape) == static_cast<long>(data.size()),
            "from_data: shape " + shape_str(shape) + " does not match " +
                std::to_string(data.size()) + " values");
    Buf<T> b(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) b[i] = data[i];
    return from_buf(std::move(shape), std::move(b), requires_grad, false);
  }
  static Tensor from_buf(Shape shape, Buf<T> b, bool requires_grad = false,
                         bool zero_init = false) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = zero_init ? Buf<T>::Zero(fieldgen::ad::numel(node->shape)) : std::move(b);
    require(node->value.size() == fieldgen::ad::numel(node->shape),
            "from_buf: buffer length mismatch for " + shape_str(node->shape));
    check_finite(node->value, "leaf");
    node->requires_grad = requires_grad;
    node->leaf = true;
    node->id = Node<T>::next_id();
    Tensor t;
    t.n_ = std::move(node);
    return t;
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return full({1}, v, requires_grad);
  }
  // Leaf with i.i.d. normal entries scaled by stddev.
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1),
                      bool requires_grad = false) {
    Buf<T> b(fieldgen::ad::numel(shape));
    for (long i = 0; i < b.size(); ++i)
      b[i] = static_cast<T>(rng.normal()) * stddev;
    return from_buf(std::move(shape), std::move(b), requires_grad, false);
  }

  const Shape& shape() const { return node().shape; }
  long rank() const { return static_cast<long>(node().shape.size()); }
  long dim(long i) const { return node().shape[static_cast<std::size_t>(i)]; }
  long numel() const { return node().value.size(); }
  bool is_scalar() const { return numel() == 1; }

  const Buf<T>& value() const { return node().value; }
  Buf<T>& mutable_value() { return node().value; }
  T item() const {
    require(is_scalar(), "item: tensor " + shape_str(shape()) + " not scalar");
    return node().value[0];
  }
  T at(long i) const { return node().value[i]; }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool rg) {
    require(node().leaf, "set_requires_grad: only valid on leaf tensors");
    node().requires_grad = rg;
  }

  bool has_grad() const { return node().has_grad; }
  const Buf<T>& grad() const {
    if (!node().has_grad)
      throw std::logic_error("grad requested but none populated");
    return node().grad;
  }
  void zero_grad() {
    node().grad = Buf<T>::Zero(numel());
    node().has_grad = false;
    node().backward_done = false;
  }
  void accumulate_grad(const Buf<T>& g) {
    Node<T>& n = node();
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  const char* op() const { return node().op; }
  bool is_leaf() const { return node().leaf; }
  std::uint64_t id() const { return node().id; }
  const std::vector<Tensor>& parents() const { return node().parents; }

  // Value copy with no graph history.
  Tensor detach() const {
    return from_buf(shape(), node().value, false, false);
  }

  std::shared_ptr<Node<T>> node_ptr() const { return n_; }
  Node<T>& node() const {
    if (!n_) throw std::logic_error("use of undefined Tensor");
    return *n_;
  }

  // Internal: wrap the result of an op. Parents/vjp are kept only when the
  // result actually participates in differentiation.
  static Tensor make_op(const char* op, Shape shape, Buf<T> value,
                        std::vector<Tensor> parents,
                        std::function<std::vector<Tensor>(const Tensor&)> vjp) {
    require(static_cast<long>(value.size()) == fieldgen::ad::numel(shape),
            std::string(op) + ": produced buffer of wrong length for " +
                shape_str(shape));
    check_finite(value, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->leaf = false;
    node->op = op;
    node->id = Node<T>::next_id();
    bool rg = false;
    if (GradMode::enabled()) {
      for (const auto& p : parents)
        if (p.defined() && p.requires_grad()) rg = true;
    }
    node->requires_grad = rg;
    if (rg) {
      node->parents = std::move(parents);
      node->vjp = std::move(vjp);
    }
    Tensor t;
    t.n_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

// True when a vjp should spend work producing this parent's gradient:
// it must require grad and, under a targeted sweep, lie on a path to a
// requested target.
template <class T>
inline bool grad_wanted(const Tensor<T>& p) {
  if (!p.defined() || !p.requires_grad()) return false;
  const auto* filter = detail::needed_filter<T>();
  return filter == nullptr || filter->count(&p.node()) > 0;
}

}  // namespace fieldgen::ad
