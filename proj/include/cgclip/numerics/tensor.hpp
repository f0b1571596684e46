#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cgclip/error.hpp"

namespace cgclip::num {

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Gradient recording is on by default; NoGradGuard turns it off for the
// current thread (evaluation, memory updates, benchmarks).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// When checked mode is on, every op output is scanned for NaN/Inf.
bool checked_mode();
void set_checked_mode(bool on);

template <Real T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into the grads of its inputs.
  std::function<void(Node&)> backward;
  std::string_view op = "leaf";

  bool is_leaf() const { return inputs.empty(); }
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <Real T>
class Tensor {
 public:
  using value_type = T;
  using Backward = std::function<void(Node<T>&)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (std::size_t d : shape)
      if (d == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
    if (shape_numel(shape) != data.size())
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  // Builds the output of a recorded operation. The backward closure is kept
  // only when recording is on and some input needs a gradient.
  static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                            std::string_view op, Backward backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Only parameter updates outside recording should write through this.
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw ContractError("item() on a tensor with " + std::to_string(numel()) +
                                          " elements");
    return node_->value[0];
  }
  T at(std::initializer_list<std::size_t> index) const;

  // A new leaf holding a copy of the values; no link back to this record.
  Tensor detach() const { return from_data(shape(), node_->value, false); }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

// Topologically ordered list of the recorded operations reachable from a root.
// Every operation appears after all of its inputs.
template <Real T>
class ComputationRecord {
 public:
  static ComputationRecord trace(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<Node<T>*>& order() const { return order_; }

  // Seeds d(root)/d(root) = 1 and replays every adjoint once in reverse order.
  // Gradients of intermediate nodes are reset first; leaf gradients accumulate.
  void backward() const;

 private:
  Tensor<T> root_;
  std::vector<Node<T>*> order_;
};

template <Real T>
void backward(const Tensor<T>& root) {
  ComputationRecord<T>::trace(root).backward();
}

}  // namespace cgclip::num
