#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "marsrec/tensor.hpp"

namespace marsrec::ad {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline int64_t next_node_order() {
  static int64_t counter = 0;
  return counter++;
}

// One vertex of the computation DAG. Gradients accumulate into `grad`;
// `backprop` reads this node's grad and scatters into the parents'.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool grad_alloc = false;
  int64_t order = next_node_order();
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  Tensor<T>& ensure_grad() {
    if (!grad_alloc) {
      grad = Tensor<T>(value.shape());
      grad.fill(T(0));
      grad_alloc = true;
    }
    return grad;
  }
  void clear_grad() {
    if (grad_alloc) grad.fill(T(0));
  }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
NodePtr<T> leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <class T>
NodePtr<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

// Builds an op node. The backprop closure is only retained when some
// parent participates in differentiation, so inference builds no tape.
template <class T>
NodePtr<T> make_op(Tensor<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool rg = false;
  for (auto& p : parents) rg = rg || (p && p->requires_grad);
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// Reverse sweep from a scalar root. Nodes fire in reverse creation order,
// which is a valid topological order for a tape built front to back.
template <class T>
void backward(const NodePtr<T>& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents)
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->order > b->order; });

  root->ensure_grad().fill(T(1));
  for (Node<T>* n : order) {
    if (n != root.get() && !n->grad_alloc) continue;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace marsrec::ad
