// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "detectlab/ops.hpp"

namespace detectlab {

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

// Broadcast geometry for two rank-4 operands that differ only in H/W
// singleton dimensions.
struct Broadcast4 {
  Index n, c, h, w;
  Index a_h, a_w, b_h, b_w;

  Index a_index(Index nc, Index y, Index x) const {
    return nc * a_h * a_w + (a_h == 1 ? 0 : y) * a_w + (a_w == 1 ? 0 : x);
  }
  Index b_index(Index nc, Index y, Index x) const {
    return nc * b_h * b_w + (b_h == 1 ? 0 : y) * b_w + (b_w == 1 ? 0 : x);
  }
};

Broadcast4 broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  auto fail = [&] {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                     " are not broadcastable");
  };
  if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[1] != b[1]) fail();
  auto merge = [&](Index x, Index y) {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    fail();
    return Index{0};
  };
  return Broadcast4{a[0], a[1], merge(a[2], b[2]), merge(a[3], b[3]), a[2], a[3], b[2], b[3]};
}

enum class BinaryOp { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryOp kind, const char* name) {
  const auto fa = [kind](T x, T y) {
    switch (kind) {
      case BinaryOp::kAdd: return x + y;
      case BinaryOp::kSub: return x - y;
      case BinaryOp::kMul: return x * y;
    }
    return T(0);
  };
  if (a.shape() == b.shape()) {
    std::vector<T> out(a.data().size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fa(ad[i], bd[i]);
    return make_result<T>(
        a.shape(), std::move(out), {&a, &b}, name,
        [kind](std::span<const T> g, std::span<const ImplPtr<T>> in) {
          const auto& ia = in[0];
          const auto& ib = in[1];
          if (ia->requires_grad) {
            auto& ga = ia->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
              ga[i] += kind == BinaryOp::kMul ? g[i] * ib->data[i] : g[i];
          }
          if (ib->requires_grad) {
            auto& gb = ib->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
              gb[i] += kind == BinaryOp::kMul   ? g[i] * ia->data[i]
                       : kind == BinaryOp::kSub ? -g[i]
                                                : g[i];
            }
          }
        });
  }

  const Broadcast4 bc = broadcast_shapes(a.shape(), b.shape(), name);
  std::vector<T> out(static_cast<std::size_t>(bc.n * bc.c * bc.h * bc.w));
  auto ad = a.data();
  auto bd = b.data();
  std::size_t o = 0;
  for (Index nc = 0; nc < bc.n * bc.c; ++nc)
    for (Index y = 0; y < bc.h; ++y)
      for (Index x = 0; x < bc.w; ++x, ++o)
        out[o] = fa(ad[static_cast<std::size_t>(bc.a_index(nc, y, x))],
                    bd[static_cast<std::size_t>(bc.b_index(nc, y, x))]);
  return make_result<T>(
      Shape{bc.n, bc.c, bc.h, bc.w}, std::move(out), {&a, &b}, name,
      [kind, bc](std::span<const T> g, std::span<const ImplPtr<T>> in) {
        const auto& ia = in[0];
        const auto& ib = in[1];
        T* ga = ia->requires_grad ? ia->grad_buffer().data() : nullptr;
        T* gb = ib->requires_grad ? ib->grad_buffer().data() : nullptr;
        std::size_t o = 0;
        for (Index nc = 0; nc < bc.n * bc.c; ++nc)
          for (Index y = 0; y < bc.h; ++y)
            for (Index x = 0; x < bc.w; ++x, ++o) {
              const Index ai = bc.a_index(nc, y, x);
              const Index bi = bc.b_index(nc, y, x);
              if (ga) ga[ai] += kind == BinaryOp::kMul ? g[o] * ib->data[bi] : g[o];
              if (gb) {
                gb[bi] += kind == BinaryOp::kMul   ? g[o] * ia->data[ai]
                          : kind == BinaryOp::kSub ? -g[o]
                                                   : g[o];
              }
            }
      });
}

// Pointwise op whose derivative is expressed through input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* name, Fwd fwd, Deriv deriv) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  std::vector<T> y_saved = out;
  return make_result<T>(
      x.shape(), std::move(out), {&x}, name,
      [deriv, y = std::move(y_saved)](std::span<const T> g, std::span<const ImplPtr<T>> in) {
        const auto& ix = in[0];
        if (!ix->requires_grad) return;
        auto& gx = ix->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(ix->data[i], y[i]);
      });
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryOp::kAdd, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryOp::kSub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryOp::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, "sigmoid", stable_sigmoid<T>, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, "silu", [](T v) { return v * stable_sigmoid(v); },
      [](T v, T) {
        const T s = stable_sigmoid(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return make_result<T>(Shape{}, {static_cast<T>(acc)}, {&x}, "sum",
                        [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
                          if (!in[0]->requires_grad) return;
                          for (T& v : in[0]->grad_buffer()) v += g[0];
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const auto n = static_cast<double>(x.numel());
  if (n == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return make_result<T>(Shape{}, {static_cast<T>(acc / n)}, {&x}, "mean",
                        [n](std::span<const T> g, std::span<const ImplPtr<T>> in) {
                          if (!in[0]->requires_grad) return;
                          const T share = static_cast<T>(static_cast<double>(g[0]) / n);
                          for (T& v : in[0]->grad_buffer()) v += share;
                        });
}

template <typename T>
Tensor<T> pool_avg_h(const Tensor<T>& input) {
  require_rank(input.shape(), 4, "pool_avg_h");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 1 || w < 1) throw ShapeError("pool_avg_h: empty spatial extent");
  std::vector<T> out(static_cast<std::size_t>(n * c * h));
  auto xd = input.data();
  for (Index row = 0; row < n * c * h; ++row) {
    double acc = 0.0;
    for (Index x = 0; x < w; ++x) acc += static_cast<double>(xd[row * w + x]);
    out[row] = static_cast<T>(acc / static_cast<double>(w));
  }
  return make_result<T>(Shape{n, c, h, 1}, std::move(out), {&input}, "pool_avg_h",
                        [w](std::span<const T> g, std::span<const ImplPtr<T>> in) {
                          if (!in[0]->requires_grad) return;
                          auto& gx = in[0]->grad_buffer();
                          const T inv = T(1) / static_cast<T>(w);
                          for (std::size_t row = 0; row < g.size(); ++row)
                            for (Index x = 0; x < w; ++x) gx[row * w + x] += g[row] * inv;
                        });
}

template <typename T>
Tensor<T> pool_avg_w(const Tensor<T>& input) {
  require_rank(input.shape(), 4, "pool_avg_w");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 1 || w < 1) throw ShapeError("pool_avg_w: empty spatial extent");
  std::vector<T> out(static_cast<std::size_t>(n * c * w));
  auto xd = input.data();
  for (Index nc = 0; nc < n * c; ++nc) {
    for (Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (Index y = 0; y < h; ++y) acc += static_cast<double>(xd[(nc * h + y) * w + x]);
      out[nc * w + x] = static_cast<T>(acc / static_cast<double>(h));
    }
  }
  return make_result<T>(Shape{n, c, 1, w}, std::move(out), {&input}, "pool_avg_w",
                        [h, w, nc_total = n * c](std::span<const T> g,
                                                 std::span<const ImplPtr<T>> in) {
                          if (!in[0]->requires_grad) return;
                          auto& gx = in[0]->grad_buffer();
                          const T inv = T(1) / static_cast<T>(h);
                          for (Index nc = 0; nc < nc_total; ++nc)
                            for (Index y = 0; y < h; ++y)
                              for (Index x = 0; x < w; ++x)
                                gx[(nc * h + y) * w + x] += g[nc * w + x] * inv;
                        });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, Index kernel, Index stride, Index padding) {
  require_rank(input.shape(), 4, "max_pool2d");
  if (kernel < 1 || stride < 1 || padding < 0)
    throw ArgumentError("max_pool2d: kernel and stride must be positive, padding non-negative");
  if (2 * padding > kernel) throw ArgumentError("max_pool2d: padding exceeds half the kernel");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (kernel > h + 2 * padding || kernel > w + 2 * padding)
    throw ArgumentError("max_pool2d: kernel larger than padded input");
  const Index ho = (h + 2 * padding - kernel) / stride + 1;
  const Index wo = (w + 2 * padding - kernel) / stride + 1;
  std::vector<T> out(static_cast<std::size_t>(n * c * ho * wo));
  std::vector<Index> argmax(out.size());
  auto xd = input.data();
  std::size_t o = 0;
  for (Index nc = 0; nc < n * c; ++nc) {
    const Index base = nc * h * w;
    for (Index oy = 0; oy < ho; ++oy) {
      const Index y0 = std::max<Index>(oy * stride - padding, 0);
      const Index y1 = std::min<Index>(oy * stride - padding + kernel, h);
      for (Index ox = 0; ox < wo; ++ox, ++o) {
        const Index x0 = std::max<Index>(ox * stride - padding, 0);
        const Index x1 = std::min<Index>(ox * stride - padding + kernel, w);
        T best = -std::numeric_limits<T>::infinity();
        Index best_i = base + y0 * w + x0;
        for (Index y = y0; y < y1; ++y)
          for (Index x = x0; x < x1; ++x) {
            const Index i = base + y * w + x;
            if (xd[i] > best) {
              best = xd[i];
              best_i = i;
            }
          }
        out[o] = best;
        argmax[o] = best_i;
      }
    }
  }
  return make_result<T>(Shape{n, c, ho, wo}, std::move(out), {&input}, "max_pool2d",
                        [argmax = std::move(argmax)](std::span<const T> g,
                                                     std::span<const ImplPtr<T>> in) {
                          if (!in[0]->requires_grad) return;
                          auto& gx = in[0]->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& tensors, int axis) {
  if (tensors.empty()) throw ArgumentError("concat: no tensors");
  const Shape& first = tensors.front().shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
  Index outer = 1, inner = 1, total = 0;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (int d = axis + 1; d < rank; ++d) inner *= first[d];
  std::vector<Index> extents;
  for (const auto& t : tensors) {
    const Shape& s = t.shape();
    if (static_cast<int>(s.size()) != rank) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat: " + shape_str(s) + " vs " + shape_str(first) +
                         " differ off the concat axis");
      }
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<T> out(static_cast<std::size_t>(outer * total * inner));
  for (Index o = 0; o < outer; ++o) {
    Index offset = 0;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const Index block = extents[k] * inner;
      auto src = tensors[k].data();
      std::copy_n(src.begin() + o * block, block, out.begin() + (o * total + offset) * inner);
      offset += extents[k];
    }
  }
  return make_result<T>(
      std::move(out_shape), std::move(out), tensors, "concat",
      [outer, inner, total, extents](std::span<const T> g, std::span<const ImplPtr<T>> in) {
        for (Index o = 0; o < outer; ++o) {
          Index offset = 0;
          for (std::size_t k = 0; k < in.size(); ++k) {
            const Index block = extents[k] * inner;
            if (in[k]->requires_grad) {
              auto& gk = in[k]->grad_buffer();
              const T* src = g.data() + (o * total + offset) * inner;
              for (Index i = 0; i < block; ++i) gk[o * block + i] += src[i];
            }
            offset += extents[k];
          }
        }
      });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<Index>& sizes, int axis) {
  const Shape& shape = x.shape();
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("split: axis out of range");
  if (std::accumulate(sizes.begin(), sizes.end(), Index{0}) != shape[axis])
    throw ShapeError("split: sizes do not sum to extent of " + shape_str(shape));
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= shape[d];
  const Index total = shape[axis];
  std::vector<Tensor<T>> parts;
  Index offset = 0;
  auto xd = x.data();
  for (Index extent : sizes) {
    Shape s = shape;
    s[axis] = extent;
    const Index block = extent * inner;
    std::vector<T> out(static_cast<std::size_t>(outer * block));
    for (Index o = 0; o < outer; ++o)
      std::copy_n(xd.begin() + (o * total + offset) * inner, block, out.begin() + o * block);
    parts.push_back(make_result<T>(
        std::move(s), std::move(out), {&x}, "split",
        [outer, inner, total, offset, block](std::span<const T> g,
                                             std::span<const ImplPtr<T>> in) {
          if (!in[0]->requires_grad) return;
          auto& gx = in[0]->grad_buffer();
          for (Index o = 0; o < outer; ++o)
            for (Index i = 0; i < block; ++i) gx[(o * total + offset) * inner + i] += g[o * block + i];
        }));
    offset += extent;
  }
  return parts;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&x}, "reshape",
                        [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
                          if (!in[0]->requires_grad) return;
                          auto& gx = in[0]->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        });
}

template <typename T>
Tensor<T> nchw_to_nhwc(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "nchw_to_nhwc");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  auto xd = x.data();
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < h * w; ++p) out[(b * h * w + p) * c + ch] = xd[(b * c + ch) * h * w + p];
  return make_result<T>(Shape{n, h, w, c}, std::move(out), {&x}, "nchw_to_nhwc",
                        [n, c, hw = h * w](std::span<const T> g, std::span<const ImplPtr<T>> in) {
                          if (!in[0]->requires_grad) return;
                          auto& gx = in[0]->grad_buffer();
                          for (Index b = 0; b < n; ++b)
                            for (Index ch = 0; ch < c; ++ch)
                              for (Index p = 0; p < hw; ++p)
                                gx[(b * c + ch) * hw + p] += g[(b * hw + p) * c + ch];
                        });
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::from(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
  if (GradMode::enabled() && x.requires_grad()) {
    auto node = std::make_shared<Node<T>>();
    node->op = "detach";
    node->inputs.push_back(x.impl());
    node->detached = true;
    out.impl()->node = std::move(node);
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, BatchNormOptions options) {
  require_rank(x.shape(), 4, "batch_norm");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const Tensor<T>* p : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (p->numel() != c) throw ShapeError("batch_norm: parameter size does not match channels");
  }
  const Index count = n * hw;
  if (count == 0) throw ShapeError("batch_norm: empty input");
  auto xd = x.data();
  std::vector<double> mean_c(static_cast<std::size_t>(c)), invstd_c(static_cast<std::size_t>(c));
  for (Index ch = 0; ch < c; ++ch) {
    if (options.training) {
      double s = 0.0;
      for (Index b = 0; b < n; ++b)
        for (Index p = 0; p < hw; ++p) s += static_cast<double>(xd[(b * c + ch) * hw + p]);
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (Index b = 0; b < n; ++b)
        for (Index p = 0; p < hw; ++p) {
          const double d = static_cast<double>(xd[(b * c + ch) * hw + p]) - m;
          v += d * d;
        }
      const double var = v / static_cast<double>(count);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
      mean_c[ch] = m;
      invstd_c[ch] = 1.0 / std::sqrt(var + options.eps);
      const double mom = options.momentum;
      running_mean[ch] = static_cast<T>((1.0 - mom) * running_mean[ch] + mom * m);
      running_var[ch] = static_cast<T>((1.0 - mom) * running_var[ch] + mom * unbiased);
    } else {
      mean_c[ch] = static_cast<double>(running_mean[ch]);
      invstd_c[ch] = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + options.eps);
    }
  }
  std::vector<T> out(xd.size());
  std::vector<T> xhat(xd.size());
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < hw; ++p) {
        const Index i = (b * c + ch) * hw + p;
        const double xh = (static_cast<double>(xd[i]) - mean_c[ch]) * invstd_c[ch];
        xhat[i] = static_cast<T>(xh);
        out[i] = static_cast<T>(static_cast<double>(gamma[ch]) * xh + static_cast<double>(beta[ch]));
      }
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta}, "batch_norm",
      [n, c, hw, count, training = options.training, invstd_c, xhat = std::move(xhat)](
          std::span<const T> g, std::span<const ImplPtr<T>> in) {
        const auto& ix = in[0];
        const auto& igamma = in[1];
        const auto& ibeta = in[2];
        for (Index ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (Index b = 0; b < n; ++b)
            for (Index p = 0; p < hw; ++p) {
              const Index i = (b * c + ch) * hw + p;
              sum_g += static_cast<double>(g[i]);
              sum_gx += static_cast<double>(g[i]) * static_cast<double>(xhat[i]);
            }
          if (igamma->requires_grad) igamma->grad_buffer()[ch] += static_cast<T>(sum_gx);
          if (ibeta->requires_grad) ibeta->grad_buffer()[ch] += static_cast<T>(sum_g);
          if (!ix->requires_grad) continue;
          auto& gx = ix->grad_buffer();
          const double gam = static_cast<double>(igamma->data[ch]);
          const double k = gam * invstd_c[ch];
          const double inv_count = 1.0 / static_cast<double>(count);
          for (Index b = 0; b < n; ++b)
            for (Index p = 0; p < hw; ++p) {
              const Index i = (b * c + ch) * hw + p;
              double d = static_cast<double>(g[i]);
              if (training) {
                d = d - inv_count * sum_g - static_cast<double>(xhat[i]) * inv_count * sum_gx;
              }
              gx[i] += static_cast<T>(k * d);
            }
        }
      });
}

#define DETECTLAB_INSTANTIATE(T)                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> sigmoid(const Tensor<T>&);                                             \
  template Tensor<T> silu(const Tensor<T>&);                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                \
  template Tensor<T> exp(const Tensor<T>&);                                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                \
  template Tensor<T> pool_avg_h(const Tensor<T>&);                                          \
  template Tensor<T> pool_avg_w(const Tensor<T>&);                                          \
  template Tensor<T> max_pool2d(const Tensor<T>&, Index, Index, Index);                     \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                            \
  template std::vector<Tensor<T>> split(const Tensor<T>&, const std::vector<Index>&, int);  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                      \
  template Tensor<T> nchw_to_nhwc(const Tensor<T>&);                                        \
  template Tensor<T> detach(const Tensor<T>&);                                              \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                Tensor<T>&, Tensor<T>&, BatchNormOptions);

DETECTLAB_INSTANTIATE(float)
DETECTLAB_INSTANTIATE(double)
#undef DETECTLAB_INSTANTIATE

}  // namespace detectlab
