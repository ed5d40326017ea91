#pragma once

#include <algorithm>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fieldgen/ad/ops.hpp"
#include "fieldgen/ad/tensor.hpp"

namespace fieldgen::ad {

namespace detail {

// Nodes that require grad, reachable from root, in descending id order
// (children before parents; ids increase monotonically at creation).
template <class T>
std::vector<std::shared_ptr<Node<T>>> reachable(const Tensor<T>& root) {
  std::vector<std::shared_ptr<Node<T>>> out;
  std::unordered_set<const Node<T>*> seen;
  std::vector<std::shared_ptr<Node<T>>> stack;
  if (root.defined() && root.requires_grad()) stack.push_back(root.node_ptr());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    out.push_back(n);
    for (const auto& p : n->parents)
      if (p.defined() && p.requires_grad() && !seen.count(&p.node()))
        stack.push_back(p.node_ptr());
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });
  return out;
}

template <class T>
struct FilterGuard {
  const std::unordered_set<const Node<T>*>* prev;
  explicit FilterGuard(const std::unordered_set<const Node<T>*>* f)
      : prev(needed_filter<T>()) {
    needed_filter<T>() = f;
  }
  ~FilterGuard() { needed_filter<T>() = prev; }
};

// Core reverse sweep. Returns accumulated gradients per node; when
// create_graph is set the returned tensors carry their own history. With
// `targets`, nodes (and vjp slots) that cannot reach any target are pruned.
template <class T>
std::unordered_map<const Node<T>*, Tensor<T>> reverse_sweep(
    const Tensor<T>& root, bool create_graph, long* visits = nullptr,
    const std::vector<Tensor<T>>* targets = nullptr) {
  require(root.is_scalar(), "backward: loss must be scalar, got " +
                                shape_str(root.shape()));
  if (!root.requires_grad())
    return {};
  auto order = reachable(root);

  std::unordered_set<const Node<T>*> needed;
  std::unique_ptr<FilterGuard<T>> fguard;
  if (targets) {
    std::unordered_set<const Node<T>*> target_set;
    for (const auto& t : targets[0])
      if (t.defined()) target_set.insert(&t.node());
    // ascending ids: parents are classified before their consumers
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = it->get();
      bool need = target_set.count(n) > 0;
      for (const auto& p : n->parents)
        if (!need && p.defined() && needed.count(&p.node())) need = true;
      if (need) needed.insert(n);
    }
    fguard = std::make_unique<FilterGuard<T>>(&needed);
  }

  std::unordered_map<const Node<T>*, Tensor<T>> gmap;
  std::unique_ptr<NoGradGuard> guard;
  if (!create_graph) guard = std::make_unique<NoGradGuard>();
  gmap.emplace(&root.node(), Tensor<T>::ones({1}));
  long count = 0;
  for (const auto& n : order) {
    if (targets && !needed.count(n.get())) continue;
    auto it = gmap.find(n.get());
    if (it == gmap.end()) continue;
    ++count;
    if (!n->vjp) continue;  // leaf
    const Tensor<T> g = it->second;
    std::vector<Tensor<T>> contribs = n->vjp(g);
    require(contribs.size() == n->parents.size(),
            std::string("vjp of '") + n->op + "' returned wrong arity");
    for (std::size_t i = 0; i < contribs.size(); ++i) {
      const Tensor<T>& p = n->parents[i];
      if (!p.defined() || !p.requires_grad() || !contribs[i].defined())
        continue;
      auto pit = gmap.find(&p.node());
      if (pit == gmap.end())
        gmap.emplace(&p.node(), contribs[i]);
      else
        pit->second = add(pit->second, contribs[i]);
    }
  }
  if (visits) *visits = count;
  return gmap;
}

}  // namespace detail

// Ordered record of the ops reachable from a root; inputs always precede
// the nodes that consume them.
template <class T>
class Graph {
 public:
  explicit Graph(Tensor<T> root) : root_(std::move(root)) {
    nodes_ = detail::reachable(root_);
    std::reverse(nodes_.begin(), nodes_.end());  // ascending id
  }

  const std::vector<std::shared_ptr<Node<T>>>& nodes() const { return nodes_; }

  // Accumulates gradients into every requires_grad tensor on a path to the
  // root. Calling twice without reset() is an error.
  void backward() {
    if (root_.node().backward_done)
      throw std::logic_error(
          "backward: already run for this loss; reset() first");
    last_visits_ = 0;
    auto gmap = detail::reverse_sweep(root_, /*create_graph=*/false,
                                      &last_visits_);
    for (const auto& n : nodes_) {
      auto it = gmap.find(n.get());
      if (it == gmap.end()) continue;
      n->grad.resize(n->value.size());
      if (!n->has_grad) n->grad.setZero();
      n->grad += it->second.value();
      n->has_grad = true;
    }
    root_.node().backward_done = true;
  }

  void reset() {
    for (const auto& n : nodes_) {
      n->has_grad = false;
      n->grad.resize(0);
      n->backward_done = false;
    }
    root_.node().backward_done = false;
  }

  long last_backward_visits() const { return last_visits_; }

 private:
  Tensor<T> root_;
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  long last_visits_ = 0;
};

template <class T>
void backward(const Tensor<T>& loss) {
  Graph<T>(loss).backward();
}

// Functional gradients of a scalar w.r.t. chosen tensors. Does not touch
// .grad buffers. With create_graph the results are differentiable.
template <class T>
std::vector<Tensor<T>> grad_of(const Tensor<T>& out,
                               const std::vector<Tensor<T>>& wrt,
                               bool create_graph) {
  auto gmap = detail::reverse_sweep(out, create_graph, nullptr, &wrt);
  std::vector<Tensor<T>> result;
  result.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto it = gmap.find(&t.node());
    if (it == gmap.end())
      result.push_back(Tensor<T>::zeros(t.shape()));
    else
      result.push_back(it->second);
  }
  return result;
}

template <class T>
struct InputGradient {
  Tensor<T> value;         // d scalar_out / d input
  bool disconnected = false;  // set when the output does not depend on input
};

// Gradient of a scalar output w.r.t. an input tensor, returned as a graph
// tensor so it can be differentiated again (R1 penalty path).
template <class T>
InputGradient<T> input_gradient(const Tensor<T>& scalar_out,
                                const Tensor<T>& input,
                                bool create_graph = true) {
  require(scalar_out.is_scalar(), "input_gradient: scalar output required");
  InputGradient<T> r;
  if (!input.requires_grad() || !scalar_out.requires_grad()) {
    r.value = Tensor<T>::zeros(input.shape());
    r.disconnected = true;
    return r;
  }
  const std::vector<Tensor<T>> wanted{input};
  auto gmap = detail::reverse_sweep(scalar_out, create_graph, nullptr, &wanted);
  auto it = gmap.find(&input.node());
  if (it == gmap.end()) {
    r.value = Tensor<T>::zeros(input.shape());
    r.disconnected = true;
    return r;
  }
  r.value = it->second;
  return r;
}

template <class T>
void zero_grad(const std::vector<Tensor<T>>& params) {
  for (auto& p : params) const_cast<Tensor<T>&>(p).zero_grad();
}

}  // namespace fieldgen::ad
