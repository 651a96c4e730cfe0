// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operators. Image tensors use NCHW order.
#pragma once

#include <vector>

#include "detectlab/tensor.hpp"

namespace detectlab {

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  Index dilation = 1;
};

Index conv_output_size(Index in, Index kernel, Index stride, Index padding, Index dilation);

/// Multiply-accumulate counter fed by conv2d; thread local.
class MacCounter {
 public:
  static void reset();
  static void add(std::int64_t macs);
  static std::int64_t value();
};

// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options = {});

// [N,C,H,W] -> [N,C,H,1], mean over the width axis.
template <typename T>
Tensor<T> pool_avg_h(const Tensor<T>& input);

// [N,C,H,W] -> [N,C,1,W], mean over the height axis.
template <typename T>
Tensor<T> pool_avg_w(const Tensor<T>& input);

// Max pooling with -inf padding; ties route gradient to the lowest index.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, Index kernel, Index stride, Index padding);

// add/mul accept identical shapes, or rank-4 operands whose H and/or W is 1
// on one side (e.g. [N,C,H,1] * [N,C,1,W]).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& tensors, int axis);
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<Index>& sizes, int axis);

// Same element order, new shape.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// [N,C,H,W] -> [N,H,W,C]
template <typename T>
Tensor<T> nchw_to_nhwc(const Tensor<T>& x);

/// Same values; the producing node is flagged detached, so nothing upstream
/// receives gradient through it.
template <typename T>
Tensor<T> detach(const Tensor<T>& x);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of [N,C,H,W]. In training mode batch statistics
/// are used and the running buffers updated in place (unbiased variance).
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var,
                     BatchNormOptions options = {});

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

}  // namespace detectlab
