// SPDX-License-Identifier: Apache-2.0
//
// conv2d via patch unrolling (im2col) and a dense matrix product.
#include <Eigen/Core>
#include <algorithm>

#include "detectlab/ops.hpp"

namespace detectlab {

namespace {

thread_local std::int64_t g_macs = 0;

struct ConvGeometry {
  Index cin, h, w, kh, kw, ho, wo, stride, pad, dil;
  Index patch() const { return cin * kh * kw; }
  Index pixels() const { return ho * wo; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// cols: [cin*kh*kw, ho*wo]
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  for (Index c = 0; c < g.cin; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki * g.dil;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = img + (c * g.h + iy) * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj * g.dil;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  for (Index c = 0; c < g.cin; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + oy * g.wo;
          T* dst = img + (c * g.h + iy) * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj * g.dil;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

Index conv_output_size(Index in, Index kernel, Index stride, Index padding, Index dilation) {
  const Index span = dilation * (kernel - 1) + 1;
  if (in + 2 * padding < span) {
    throw ShapeError("conv2d: padded input " + std::to_string(in + 2 * padding) +
                     " smaller than dilated kernel span " + std::to_string(span));
  }
  return (in + 2 * padding - span) / stride + 1;
}

void MacCounter::reset() { g_macs = 0; }
void MacCounter::add(std::int64_t macs) { g_macs += macs; }
std::int64_t MacCounter::value() { return g_macs; }

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options) {
  if (options.stride < 1) throw ArgumentError("conv2d: stride must be positive");
  if (options.dilation < 1) throw ArgumentError("conv2d: dilation must be positive");
  if (options.padding < 0) throw ArgumentError("conv2d: padding must be non-negative");
  if (input.rank() != 4 || weight.rank() != 4)
    throw ShapeError("conv2d: expected rank-4 input and weight, got " + shape_str(input.shape()) +
                     " and " + shape_str(weight.shape()));
  const Index n = input.dim(0), cout = weight.dim(0);
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.dim(1)) +
                     " do not match weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv2d: bias size mismatch");

  ConvGeometry g{};
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = options.stride;
  g.pad = options.padding;
  g.dil = options.dilation;
  g.ho = conv_output_size(g.h, g.kh, g.stride, g.pad, g.dil);
  g.wo = conv_output_size(g.w, g.kw, g.stride, g.pad, g.dil);

  const Index k = g.patch();
  const Index p = g.pixels();
  MacCounter::add(n * cout * p * k);

  std::vector<T> out(static_cast<std::size_t>(n * cout * p));
  std::vector<T> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(k * p));
  Eigen::Map<const RowMat<T>> wmat(weight.data().data(), cout, k);
  for (Index b = 0; b < n; ++b) {
    const T* img = input.data().data() + b * g.cin * g.h * g.w;
    const T* colp = img;
    if (!g.is_pointwise()) {
      im2col(img, g, cols.data());
      colp = cols.data();
    }
    Eigen::Map<const RowMat<T>> cmat(colp, k, p);
    Eigen::Map<RowMat<T>> omat(out.data() + b * cout * p, cout, p);
    omat.noalias() = wmat * cmat;
    if (bias.defined()) {
      for (Index o = 0; o < cout; ++o) omat.row(o).array() += bias[o];
    }
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      Shape{n, cout, g.ho, g.wo}, std::move(out), inputs, "conv2d",
      [g, n, cout](std::span<const T> grad, std::span<const ImplPtr<T>> in) {
        const auto& ix = in[0];
        const auto& iw = in[1];
        const Index k = g.patch();
        const Index p = g.pixels();
        Eigen::Map<const RowMat<T>> wmat(iw->data.data(), cout, k);
        std::vector<T> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(k * p));
        T* gw = iw->requires_grad ? iw->grad_buffer().data() : nullptr;
        T* gx = ix->requires_grad ? ix->grad_buffer().data() : nullptr;
        for (Index b = 0; b < n; ++b) {
          Eigen::Map<const RowMat<T>> gout(grad.data() + b * cout * p, cout, p);
          const Index img_size = g.cin * g.h * g.w;
          if (gw) {
            const T* colp = ix->data.data() + b * img_size;
            if (!g.is_pointwise()) {
              im2col(colp, g, cols.data());
              colp = cols.data();
            }
            Eigen::Map<const RowMat<T>> cmat(colp, k, p);
            Eigen::Map<RowMat<T>> gwmat(gw, cout, k);
            gwmat.noalias() += gout * cmat.transpose();
          }
          if (gx) {
            if (g.is_pointwise()) {
              Eigen::Map<RowMat<T>> gxmat(gx + b * img_size, k, p);
              gxmat.noalias() += wmat.transpose() * gout;
            } else {
              Eigen::Map<RowMat<T>> cmat(cols.data(), k, p);
              cmat.noalias() = wmat.transpose() * gout;
              col2im_add(cols.data(), g, gx + b * img_size);
            }
          }
        }
        if (in.size() > 2 && in[2]->requires_grad) {
          auto& gb = in[2]->grad_buffer();
          for (Index b = 0; b < n; ++b)
            for (Index o = 0; o < cout; ++o) {
              const T* row = grad.data() + (b * cout + o) * p;
              T acc = T(0);
              for (Index i = 0; i < p; ++i) acc += row[i];
              gb[o] += acc;
            }
        }
      });
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              Conv2dOptions);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&,
                               const Tensor<double>&, Conv2dOptions);

}  // namespace detectlab
