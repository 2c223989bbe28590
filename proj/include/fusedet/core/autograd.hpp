#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fusedet/core/tensor.hpp"

namespace fusedet {

// Define-by-run reverse-mode autodiff. Var is a shared handle to a graph
// node; ops allocate result nodes with a captured backward closure. Graphs
// are built per step and freed when the last Var handle drops.

template <class T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;
  bool needs_grad = false;
  bool grad_ready = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward;

  void ensure_grad() {
    if (!grad_ready) {
      grad = Tensor<T>(val.shape);
      grad_ready = true;
    }
  }
};

// Per-scalar-type grad mode; NoGradGuard disables graph construction (used
// by inference/evaluation paths).
template <class T>
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode<T>()) { grad_mode<T>() = false; }
  ~NoGradGuard() { grad_mode<T>() = prev; }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> v, bool needs_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->val = std::move(v);
    node_->needs_grad = needs_grad && grad_mode<T>();
  }

  static Var leaf(Tensor<T> v) { return Var(std::move(v), true); }
  static Var constant(Tensor<T> v) { return Var(std::move(v), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& val() const { return node_->val; }
  Tensor<T>& val() { return node_->val; }
  Tensor<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool needs_grad() const { return node_ && node_->needs_grad; }
  void zero_grad() {
    if (node_ && node_->grad_ready) node_->grad.zero();
  }

  const Shape& shape() const { return node_->val.shape; }
  int64_t dim(int i) const { return node_->val.dim(i); }
  int64_t numel() const { return node_->val.numel(); }

  std::shared_ptr<Node<T>> node_;
};

// Result node builder. If grad mode is off or no parent needs gradient the
// node is constant and carries no closure.
template <class T, class BW>
Var<T> make_op(Tensor<T> val, std::vector<Var<T>> parents, BW&& bw) {
  Var<T> out(std::move(val), false);
  bool needs = false;
  if (grad_mode<T>())
    for (const auto& p : parents) needs = needs || p.needs_grad();
  if (needs) {
    out.node_->needs_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::forward<BW>(bw);
  }
  return out;
}

// Reverse-topological traversal from root; root must be scalar unless a
// seed gradient is supplied.
template <class T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  check(root.defined(), "backward on undefined Var");
  check(root.needs_grad(), "backward on a graph with no gradients required");
  if (!seed) check_shape(root.numel() == 1, "backward root must be scalar");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.node_.get(), 0);
  seen.insert(root.node_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node_->ensure_grad();
  if (seed)
    root.node_->grad = *seed;
  else
    root.node_->grad.fill(T(1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) {
      for (auto& p : n->parents)
        if (p->needs_grad) p->ensure_grad();
      n->backward(*n);
      n->backward = nullptr;  // release captured buffers eagerly
      // Interior values/grads are dead once this node's backward has run
      // (children ran earlier in reverse order); leaves keep theirs.
      n->val = Tensor<T>();
      n->grad = Tensor<T>();
      n->grad_ready = false;
    }
  }
}

}  // namespace fusedet
