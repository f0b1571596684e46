#include "cgclip/numerics/tensor.hpp"

#include <atomic>
#include <cmath>
#include <unordered_set>

namespace cgclip::num {
namespace {

thread_local bool t_grad_enabled = true;
std::atomic<bool> g_checked{false};

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }
void set_checked_mode(bool on) { g_checked.store(on); }

template <Real T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                                 std::string_view op, Backward backward) {
  if (checked_mode()) {
    for (T v : data)
      if (!std::isfinite(v))
        throw NumericError("non-finite value produced by op '" + std::string(op) + "'");
  }
  Tensor out = from_data(std::move(shape), std::move(data), false);
  out.node_->op = op;
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->backward = std::move(backward);
  out.node_->inputs.reserve(inputs.size());
  for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
  return out;
}

template <Real T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank does not match tensor rank");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw DimensionError("index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <Real T>
ComputationRecord<T> ComputationRecord<T>::trace(const Tensor<T>& root) {
  ComputationRecord rec;
  rec.root_ = root;
  if (!root.requires_grad()) return rec;
  // Iterative post-order DFS.
  std::unordered_set<const Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node_ptr().get(), 0);
  seen.insert(root.node_ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      rec.order_.push_back(node);
      stack.pop_back();
    }
  }
  return rec;
}

template <Real T>
void ComputationRecord<T>::backward() const {
  if (!root_.defined()) throw ContractError("backward on an undefined tensor");
  if (root_.numel() != 1)
    throw ContractError("backward requires a scalar root, got shape " +
                        shape_string(root_.shape()));
  if (order_.empty()) return;
  for (Node<T>* n : order_)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  Node<T>& root = root_.node();
  root.grad_buffer()[0] += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf() && n->backward) n->backward(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class ComputationRecord<float>;
template class ComputationRecord<double>;

}  // namespace cgclip::num
