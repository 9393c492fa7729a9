// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "adlm/common.hpp"

namespace adlm {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward;

  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage. Operations
/// that involve an input with requires_grad() record a backward rule, and
/// calling backward() on a scalar result walks the recorded graph in reverse
/// topological order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto node = std::make_shared<detail::Node>();
    node->value.assign(adlm::numel(shape), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (adlm::numel(shape) != values.size()) {
      throw ShapeError("Tensor::from: shape " + to_string(shape) + " holds " +
                       std::to_string(adlm::numel(shape)) + " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t rows() const { return dim() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return dim() == 0 ? 1 : node_->shape.back(); }

  std::span<const double> data() const { return node_->value; }
  // Direct write access, intended for parameter updates and test setup.
  std::span<double> mutable_data() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (numel() != 1) throw ShapeError("Tensor::item: shape " + to_string(shape()) + " is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Fresh leaf with copied values and no history.
  Tensor clone(bool requires_grad = false) const { return from(shape(), node_->value, requires_grad); }
  // Leaf sharing nothing with this tensor's graph.
  Tensor detach() const { return clone(false); }

  void backward() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
  if (!defined() || numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (defined() ? to_string(shape()) : std::string("<undefined>")));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

/// Whether ops record backward rules on this thread.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// Disables graph recording for its lifetime (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

inline bool any_requires_grad(const std::vector<const Tensor*>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Builds the result node; the backward rule is attached only when some
// input requires grad.
inline Tensor make_result(Shape shape, std::vector<double> value, const std::vector<const Tensor*>& inputs,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_mode() && any_requires_grad(inputs)) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->parents.push_back(t->node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace adlm
