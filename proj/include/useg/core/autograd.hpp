#pragma once

#include "useg/core/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace useg {

/// One node of the dynamic computation graph. Nodes own their forward value
/// and (lazily) a gradient of the same shape. Edges point from a node to the
/// inputs it was computed from, so releasing the root frees the whole tape.
template <class S>
class Node {
 public:
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  /// Propagates this->grad into the parents' grads. Only set when some
  /// parent requires a gradient.
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return grad.size() == value.size() && grad.size() > 0; }

  Tensor<S>& ensure_grad() {
    if (!has_grad()) grad = Tensor<S>::zeros(value.shape());
    return grad;
  }
};

template <class S>
using Var = std::shared_ptr<Node<S>>;

/// Leaf holding a constant (no gradient is ever computed into it).
template <class S>
Var<S> constant(Tensor<S> value) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  return n;
}

/// Leaf holding a trainable parameter.
template <class S>
Var<S> parameter(Tensor<S> value) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

/// Copy of the value, cut off from the graph.
template <class S>
Var<S> detach(const Var<S>& v) {
  return constant(v->value);
}

template <class S>
bool any_requires_grad(const std::vector<Var<S>>& vars) {
  for (const auto& v : vars)
    if (v->requires_grad) return true;
  return false;
}

/// Build an op node. The backward function is dropped when no parent needs
/// gradients, so inference graphs carry no closures.
template <class S, class F>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> parents, F&& backward_fn) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->requires_grad = any_requires_grad(parents);
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward_fn = std::forward<F>(backward_fn);
  return n;
}

template <class S>
S scalar_value(const Var<S>& v) {
  assert(v->value.size() == 1);
  return v->value.at(0);
}

/// Reverse-mode sweep from `root`, seeding d(root)/d(root) = 1. Gradients
/// accumulate, so callers zero parameter grads between steps.
template <class S>
void backward(const Var<S>& root) {
  if (!root->requires_grad) return;
  // Reverse post-order of a DFS over parent edges is a topological order:
  // every consumer is visited before the node it consumes.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  struct Frame {
    Node<S>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<S>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  Tensor<S>& g = root->ensure_grad();
  g.flat().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

}  // namespace useg
