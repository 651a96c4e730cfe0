// SPDX-License-Identifier: Apache-2.0
#include "detectlab/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace detectlab {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) { g_grad_enabled = enabled; }

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const Index n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
              requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<Index>(data.size())) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " elements");
  }
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from(Shape{}, {value}, requires_grad);
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (impl_->data.size() != 1) throw ShapeError("item() on tensor " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return from(impl_->shape, impl_->data, false);
}

template <typename T>
void Tensor<T>::backward() const {
  Tape<T>::record(*this).backward();
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  if (!root.defined()) return tape;
  // Iterative post-order DFS; the post-order is a forward topological order.
  std::unordered_set<const TensorImpl<T>*> visited;
  std::vector<std::pair<ImplPtr<T>, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->node.get();
    if (node != nullptr && next < node->inputs.size()) {
      const ImplPtr<T>& child = node->inputs[next++];
      if (child && visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    tape.order_.push_back(impl);
    stack.pop_back();
  }
  return tape;
}

template <typename T>
void Tape<T>::backward(std::span<const T> seed) const {
  if (order_.empty()) return;
  for (const auto& impl : order_) {
    if (impl->node) impl->grad.assign(impl->data.size(), T(0));
  }
  const ImplPtr<T>& root = order_.back();
  auto& root_grad = root->grad_buffer();
  if (seed.empty()) {
    std::fill(root_grad.begin(), root_grad.end(), T(1));
  } else {
    if (seed.size() != root_grad.size()) throw ShapeError("backward seed size mismatch");
    std::transform(seed.begin(), seed.end(), root_grad.begin(), root_grad.begin(),
                   [](T s, T g) { return g + s; });
  }
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const auto& impl = *it;
    const auto& node = impl->node;
    if (!node || node->detached || !node->backward) continue;
    node->backward(std::span<const T>(impl->grad), node->inputs);
  }
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> names;
  for (const auto& impl : order_) {
    if (impl->node) names.emplace_back(impl->node->op);
  }
  return names;
}

namespace {

template <typename T, typename Range>
Tensor<T> make_result_impl(Shape shape, std::vector<T> data, const Range& inputs,
                           const char* op, typename Node<T>::BackwardFn backward) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(data), false);
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

template <typename T>
struct DerefRange {
  std::initializer_list<const Tensor<T>*> list;
  struct It {
    const Tensor<T>* const* p;
    const Tensor<T>& operator*() const { return **p; }
    It& operator++() {
      ++p;
      return *this;
    }
    bool operator!=(const It& o) const { return p != o.p; }
  };
  It begin() const { return It{list.begin()}; }
  It end() const { return It{list.end()}; }
};

}  // namespace

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, const char* op,
                      typename Node<T>::BackwardFn backward) {
  return make_result_impl<T>(std::move(shape), std::move(data), DerefRange<T>{inputs}, op,
                             std::move(backward));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      const char* op, typename Node<T>::BackwardFn backward) {
  return make_result_impl<T>(std::move(shape), std::move(data), inputs, op,
                             std::move(backward));
}

#define DETECTLAB_INSTANTIATE(T)                                                          \
  template class Tensor<T>;                                                               \
  template class Tape<T>;                                                                 \
  template Tensor<T> make_result<T>(Shape, std::vector<T>,                                \
                                    std::initializer_list<const Tensor<T>*>, const char*, \
                                    typename Node<T>::BackwardFn);                        \
  template Tensor<T> make_result<T>(Shape, std::vector<T>, const std::vector<Tensor<T>>&, \
                                    const char*, typename Node<T>::BackwardFn);

DETECTLAB_INSTANTIATE(float)
DETECTLAB_INSTANTIATE(double)
#undef DETECTLAB_INSTANTIATE

}  // namespace detectlab
