#pragma once

// Reverse-mode autodiff over dense 4-D tensors (batch, channel, height, width).
//
// Every op allocates a node holding its value; when gradients are enabled and
// any input requires them, the node also keeps its inputs and a backward rule.
// backward() walks the graph in reverse topological order.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "svw/core/error.hpp"

namespace svw::ad {

struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t hw() const { return static_cast<std::size_t>(h) * w; }
  std::size_t chw() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream s;
    s << "(" << n << "," << c << "," << h << "," << w << ")";
    return s.str();
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph construction in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  T* grad_data() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape s, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>();
    node->shape = s;
    node->value.assign(s.numel(), T(0));
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(s.numel(), T(0));
    return Tensor(std::move(node));
  }

  static Tensor filled(Shape s, T v) {
    auto t = zeros(s);
    std::fill(t.data(), t.data() + t.numel(), v);
    return t;
  }

  static Tensor from(Shape s, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != s.numel()) {
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + s.str());
    }
    auto t = zeros(s, requires_grad);
    t.node_->value = std::move(values);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T item() const { return node_->value.at(0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->grad_data();
  }

  /// Gradient buffer; zeros if nothing has been accumulated.
  std::vector<T>& grad() {
    node_->grad_data();
    return node_->grad;
  }
  const std::vector<T>& grad() const { return const_cast<Tensor*>(this)->grad(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  /// Same values, cut off from the graph.
  Tensor detach() const {
    auto t = zeros(shape());
    t.node_->value = node_->value;
    return t;
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Value equality (same shape, same bits).
  bool same_values(const Tensor& other) const {
    return shape() == other.shape() && values() == other.values();
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates an op result. Graph edges are kept only when gradients are enabled
/// and some input requires them; `rule` receives the result node.
template <class T>
Tensor<T> make_result(Shape s, std::vector<Tensor<T>> inputs, std::vector<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->shape = s;
  node->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      for (auto& in : inputs) node->parents.push_back(in.node_ptr());
    }
  }
  return Tensor<T>(std::move(node));
}

/// Attaches a backward rule when the result is part of the graph.
template <class T, class F>
void on_backward(Tensor<T>& result, F&& rule) {
  if (result.requires_grad()) result.node()->backward = std::forward<F>(rule);
}

/// Accumulates d(loss)/d(leaf) for every leaf reachable from `loss`.
/// The traversed graph is released afterwards.
template <class T>
void backward(Tensor<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + loss.shape().str());
  if (!loss.requires_grad()) return;

  // Shared handles keep intermediates alive while edges are being released.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{loss.node_ptr(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const auto& p = node->parents[next++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_data()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (node->backward) {
      node->grad_data();
      node->backward();
    }
  }
  for (auto& node : order) {
    if (!node->backward) continue;
    node->backward = nullptr;
    node->parents.clear();
    if (node.get() != loss.node()) std::vector<T>().swap(node->grad);
  }
}

template <class T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace svw::ad
