// SPDX-License-Identifier: Apache-2.0
//
// Dense N-d tensor with reverse-mode differentiation.
//
// A Tensor is a handle: copies share storage and graph position, as in most
// autograd libraries. Value type T is float (training) or double
// (gradient-check mode); a computation graph never mixes the two.
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "detectlab/errors.hpp"

namespace detectlab {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

/// One recorded operation. `backward` receives the gradient of the node's
/// output and accumulates vector-Jacobian products into `inputs[i]->grad`.
template <typename T>
struct Node {
  using BackwardFn =
      std::function<void(std::span<const T> grad_out, std::span<const ImplPtr<T>> inputs)>;

  const char* op = "";
  std::vector<ImplPtr<T>> inputs;
  BackwardFn backward;
  bool detached = false;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // null for leaves

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Thread-local switch; when disabled no operation records a node.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return static_cast<Index>(impl_->data.size()); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const;
  T& operator[](Index i) { return impl_->data[static_cast<std::size_t>(i)]; }
  T operator[](Index i) const { return impl_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool has_grad() const { return !impl_->grad.empty(); }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad();

  bool is_leaf() const { return impl_->node == nullptr; }
  const Node<T>* node() const { return impl_->node.get(); }

  /// Deep copy of values only; the copy is a fresh leaf.
  Tensor clone() const;

  /// Reverse pass seeded with ones (the tensor is usually a scalar loss).
  void backward() const;

  const ImplPtr<T>& impl() const { return impl_; }
  explicit Tensor(ImplPtr<T> impl) : impl_(std::move(impl)) {}

 private:
  ImplPtr<T> impl_;
};

/// Topologically ordered record of the graph reachable from a root.
/// backward() visits nodes in exact reverse of that order.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  // Seed defaults to ones. Non-leaf gradients are reset first, so replaying
  // the same tape twice yields identical leaf increments.
  void backward(std::span<const T> seed = {}) const;

  std::size_t size() const { return order_.size(); }
  std::vector<std::string> op_names() const;

 private:
  std::vector<ImplPtr<T>> order_;  // forward topological order; root last
};

/// Builds an op output. A node is attached only when grad mode is on and at
/// least one input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, const char* op,
                      typename Node<T>::BackwardFn backward);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      const char* op, typename Node<T>::BackwardFn backward);

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>::from(t.shape(), std::move(out), t.requires_grad());
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace detectlab
