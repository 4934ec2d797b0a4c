#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "wildfire/error.hpp"

namespace wildfire::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// Graph recording switch (thread local). Disabled inside NoGradGuard.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;
  bool released = false;  ///< graph freed by a previous backward()

  bool is_leaf() const { return parents.empty() && !backward && !released; }

  /// Gradient buffer, zero-allocated on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Reference-semantics handle to a value node. Copies share the node, as
/// parameters must be shared between a model and its optimizer.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value.assign(ad::numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    if (values.size() != ad::numel(shape))
      throw ShapeError("tensor data has " + std::to_string(values.size()) + " elements, shape " + shape_str(shape) +
                       " needs " + std::to_string(ad::numel(shape)));
    node_->value = std::move(values);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, std::vector<T>{v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  explicit operator bool() const { return defined(); }

  const Shape& shape() const { return node().shape; }
  std::size_t dim(std::size_t i) const {
    if (i >= shape().size()) throw ShapeError("dimension " + std::to_string(i) + " out of range for " + shape_str(shape()));
    return shape()[i];
  }
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return node().value.size(); }

  std::span<const T> data() const { return node().value; }
  /// Direct write access for initialisation and optimiser updates.
  std::span<T> mutable_data() { return node().value; }
  const std::vector<T>& values() const { return node().value; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node().value[0];
  }
  T operator[](std::size_t i) const { return node().value[i]; }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) { node().requires_grad = on; }
  bool has_grad() const { return node().grad.size() == node().value.size() && numel() > 0; }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().grad_buffer(); }
  void zero_grad() { std::fill(node().grad.begin(), node().grad.end(), T(0)); }
  void clear_grad() { node().grad.clear(); }

  const char* op() const { return node().op; }

  /// New leaf with a copy of the values.
  Tensor detach() const { return Tensor(shape(), values(), false); }

  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
  Node<T>& node() const {
    if (!node_) throw Error("use of an undefined tensor");
    return *node_;
  }

  /// Result of an operation. The graph edge is recorded only when grad mode is
  /// on and some input requires a gradient.
  static Tensor from_op(Shape shape, std::vector<T> values, const char* op, std::vector<Tensor> inputs,
                        std::function<void(Node<T>& out)> backward) {
    Tensor out(std::move(shape), std::move(values), false);
    out.node().op = op;
    if (!grad_mode()) return out;
    bool any = false;
    for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (!any) return out;
    auto& n = out.node();
    n.requires_grad = true;
    for (auto& t : inputs)
      if (t.defined()) n.parents.push_back(t.node_ptr());
    Node<T>* self = &n;
    n.backward = [self, fn = std::move(backward)] { fn(*self); };
    return out;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable node that requires one; the graph of intermediate nodes is
/// released afterwards unless retain_graph is set.
template <class T>
void backward(const Tensor<T>& loss, bool retain_graph = false) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw Error("loss does not depend on any tensor that requires a gradient");
  if (loss.node().released) throw Error("backward() through a graph that was already released; pass retain_graph");

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node_ptr().get(), 0}};
  seen.insert(loss.node_ptr().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  loss.node().grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();

  if (!retain_graph) {
    for (Node<T>* n : order) {
      if (n->is_leaf()) continue;
      n->backward = nullptr;
      n->parents.clear();
      n->released = true;
      if (n != loss.node_ptr().get()) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }
}

}  // namespace wildfire::ad
