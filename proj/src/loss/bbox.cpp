// SPDX-License-Identifier: Apache-2.0
#include "detectlab/loss/bbox.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "detectlab/errors.hpp"

namespace detectlab::loss {

namespace {

constexpr double kDiagFloor = 1e-12;

// Forward-mode number carrying derivatives with respect to the four
// predicted box coordinates. Every loss here is a scalar function of four
// inputs, so one forward pass yields the whole gradient.
struct Dual {
  double v = 0.0;
  std::array<double, 4> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: constants promote implicitly
  static Dual variable(double value, int slot) {
    Dual x(value);
    x.d[static_cast<std::size_t>(slot)] = 1.0;
    return x;
  }
};

Dual operator+(const Dual& a, const Dual& b) {
  Dual r(a.v + b.v);
  for (std::size_t i = 0; i < 4; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
Dual operator-(const Dual& a, const Dual& b) {
  Dual r(a.v - b.v);
  for (std::size_t i = 0; i < 4; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
Dual operator*(const Dual& a, const Dual& b) {
  Dual r(a.v * b.v);
  for (std::size_t i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r(a.v / b.v);
  for (std::size_t i = 0; i < 4; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) / b.v;
  return r;
}
Dual exp(const Dual& a) {
  Dual r(std::exp(a.v));
  for (std::size_t i = 0; i < 4; ++i) r.d[i] = r.v * a.d[i];
  return r;
}
Dual atan(const Dual& a) {
  Dual r(std::atan(a.v));
  const double s = 1.0 / (1.0 + a.v * a.v);
  for (std::size_t i = 0; i < 4; ++i) r.d[i] = s * a.d[i];
  return r;
}

double atan(double x) { return std::atan(x); }

double value_of(const Dual& x) { return x.v; }

// min/max pick a branch by value; the derivative follows the chosen branch.
template <typename S>
S min_of(const S& a, const S& b) {
  return value_of(a) <= value_of(b) ? a : b;
}
template <typename S>
S max_of(const S& a, const S& b) {
  return value_of(a) >= value_of(b) ? a : b;
}

template <typename S>
struct Geometry {
  S iou;
  S enclose_w;
  S enclose_h;
  S center_dist2;
};

template <typename S>
Geometry<S> geometry(const S& cx, const S& cy, const S& w, const S& h, const BBox& g) {
  const S half_w = S(0.5) * w;
  const S half_h = S(0.5) * h;
  const S px1 = cx - half_w, px2 = cx + half_w;
  const S py1 = cy - half_h, py2 = cy + half_h;
  const S gx1 = g.x1(), gx2 = g.x2(), gy1 = g.y1(), gy2 = g.y2();

  const S iw = max_of(S(0.0), min_of(px2, gx2) - max_of(px1, gx1));
  const S ih = max_of(S(0.0), min_of(py2, gy2) - max_of(py1, gy1));
  const S inter = iw * ih;
  const S uni = w * h + S(g.area()) - inter;

  Geometry<S> out;
  out.iou = inter / uni;
  out.enclose_w = max_of(px2, gx2) - min_of(px1, gx1);
  out.enclose_h = max_of(py2, gy2) - min_of(py1, gy1);
  const S dx = cx - S(g.cx);
  const S dy = cy - S(g.cy);
  out.center_dist2 = dx * dx + dy * dy;
  return out;
}

template <typename S>
S aspect_term(const S& w, const S& h, const BBox& g) {
  const double k = 4.0 / (std::numbers::pi * std::numbers::pi);
  const S diff = atan(S(g.w) / S(g.h)) - atan(w / h);
  return S(k) * diff * diff;
}

template <typename S>
S evaluate(BoxLoss kind, const S& cx, const S& cy, const S& w, const S& h, const BBox& g,
           const DetachedTerms& terms) {
  const Geometry<S> geo = geometry(cx, cy, w, h, g);
  const S l = S(1.0) - geo.iou;
  switch (kind) {
    case BoxLoss::kWiou1:
    case BoxLoss::kWiou3: {
      const S r = exp(geo.center_dist2 / S(terms.enclose_diag2));
      return S(terms.gain) * r * l;
    }
    case BoxLoss::kCiou: {
      const S c2 = geo.enclose_w * geo.enclose_w + geo.enclose_h * geo.enclose_h;
      return l + geo.center_dist2 / c2 + S(terms.ciou_alpha) * aspect_term(w, h, g);
    }
  }
  return S(0.0);
}

void require_valid(const BBox& pred, const BBox& gt) {
  pred.validate();
  gt.validate();
}

}  // namespace

void BBox::validate() const {
  if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(cx) || !std::isfinite(cy) ||
      !std::isfinite(w) || !std::isfinite(h))
    throw ArgumentError("degenerate box: w and h must be positive and finite");
}

PairGeometry pair_geometry(const BBox& a, const BBox& b) {
  require_valid(a, b);
  PairGeometry g;
  g.inter_w = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  g.inter_h = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = g.inter_w * g.inter_h;
  g.iou = inter / (a.area() + b.area() - inter);
  g.enclose_w = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
  g.enclose_h = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
  const double dx = a.cx - b.cx;
  const double dy = a.cy - b.cy;
  g.center_dist2 = dx * dx + dy * dy;
  return g;
}

double iou(const BBox& a, const BBox& b) { return pair_geometry(a, b).iou; }

double l_iou(const BBox& a, const BBox& b) { return 1.0 - iou(a, b); }

double r_wiou(const BBox& pred, const BBox& gt) {
  const PairGeometry g = pair_geometry(pred, gt);
  const double diag2 =
      std::max(kDiagFloor, g.enclose_w * g.enclose_w + g.enclose_h * g.enclose_h);
  return std::exp(g.center_dist2 / diag2);
}

double wiou_v1(const BBox& pred, const BBox& gt) {
  return box_loss_grad(BoxLoss::kWiou1, pred, gt, nullptr).value;
}

void update_focus(FocusState& state, double batch_mean_l_iou) {
  if (!std::isfinite(batch_mean_l_iou) || batch_mean_l_iou < 0.0)
    throw ArgumentError("update_focus: batch mean must be finite and non-negative");
  if (state.frozen) return;
  if (state.steps == 0)
    state.ema = batch_mean_l_iou;
  else
    state.ema = state.momentum * state.ema + (1.0 - state.momentum) * batch_mean_l_iou;
  ++state.steps;
}

double outlier_degree(double l_iou_value, const FocusState& state) {
  if (!state.initialized() || !(state.ema > 0.0))
    throw StateError("outlier_degree: focus state has no positive running mean yet");
  return l_iou_value / state.ema;
}

void WIoUParams::validate() const {
  if (!(alpha > 0.0) || alpha == 1.0) throw ArgumentError("WIoU alpha must be > 0 and != 1");
  if (!(delta > 0.0)) throw ArgumentError("WIoU delta must be > 0");
}

double gradient_gain(double beta, const WIoUParams& params) {
  params.validate();
  return beta / (params.delta * std::pow(params.alpha, beta - params.delta));
}

double wiou_v3(const BBox& pred, const BBox& gt, const FocusState& state,
               const WIoUParams& params) {
  return box_loss_grad(BoxLoss::kWiou3, pred, gt, &state, params).value;
}

double ciou(const BBox& pred, const BBox& gt) {
  return box_loss_grad(BoxLoss::kCiou, pred, gt, nullptr).value;
}

BoxLoss parse_box_loss(std::string_view name) {
  if (name == "ciou") return BoxLoss::kCiou;
  if (name == "wiou1") return BoxLoss::kWiou1;
  if (name == "wiou3") return BoxLoss::kWiou3;
  throw ConfigError("unknown box loss '" + std::string(name) + "' (ciou|wiou1|wiou3)");
}

std::string_view box_loss_name(BoxLoss kind) {
  switch (kind) {
    case BoxLoss::kCiou: return "ciou";
    case BoxLoss::kWiou1: return "wiou1";
    case BoxLoss::kWiou3: return "wiou3";
  }
  return "?";
}

DetachedTerms detached_terms(BoxLoss kind, const BBox& pred, const BBox& gt,
                             const FocusState* state, const WIoUParams& params) {
  const PairGeometry g = pair_geometry(pred, gt);
  DetachedTerms t;
  t.enclose_diag2 =
      std::max(kDiagFloor, g.enclose_w * g.enclose_w + g.enclose_h * g.enclose_h);
  if (kind == BoxLoss::kWiou3) {
    if (state == nullptr) throw StateError("WIoU v3 requires a focus state");
    t.gain = gradient_gain(outlier_degree(1.0 - g.iou, *state), params);
  }
  if (kind == BoxLoss::kCiou) {
    const double v = aspect_term(pred.w, pred.h, gt);
    const double denom = v + 1.0 - g.iou;
    t.ciou_alpha = denom > 0.0 ? v / denom : 0.0;
  }
  return t;
}

LossGrad box_loss_grad(BoxLoss kind, const BBox& pred, const BBox& gt,
                       const DetachedTerms& terms) {
  require_valid(pred, gt);
  const Dual y = evaluate(kind, Dual::variable(pred.cx, 0), Dual::variable(pred.cy, 1),
                          Dual::variable(pred.w, 2), Dual::variable(pred.h, 3), gt, terms);
  return {y.v, y.d};
}

LossGrad box_loss_grad(BoxLoss kind, const BBox& pred, const BBox& gt,
                       const FocusState* state, const WIoUParams& params) {
  return box_loss_grad(kind, pred, gt, detached_terms(kind, pred, gt, state, params));
}

LossGrad r_wiou_grad(const BBox& pred, const BBox& gt) {
  const DetachedTerms terms = detached_terms(BoxLoss::kWiou1, pred, gt, nullptr);
  const Dual dx = Dual::variable(pred.cx, 0) - Dual(gt.cx);
  const Dual dy = Dual::variable(pred.cy, 1) - Dual(gt.cy);
  const Dual r = exp((dx * dx + dy * dy) / Dual(terms.enclose_diag2));
  return {r.v, r.d};
}

template <typename T>
std::vector<BBox> boxes_from_tensor(const Tensor<T>& t) {
  if (t.rank() != 2 || t.dim(1) != 4)
    throw ShapeError("expected boxes of shape [P,4], got " + shape_str(t.shape()));
  std::vector<BBox> out(static_cast<std::size_t>(t.dim(0)));
  auto d = t.data();
  for (std::size_t p = 0; p < out.size(); ++p)
    out[p] = {static_cast<double>(d[4 * p]), static_cast<double>(d[4 * p + 1]),
              static_cast<double>(d[4 * p + 2]), static_cast<double>(d[4 * p + 3])};
  return out;
}

template <typename T>
Tensor<T> box_losses(const Tensor<T>& pred, std::span<const BBox> gt, BoxLoss kind,
                     std::span<const DetachedTerms> terms) {
  const std::vector<BBox> boxes = boxes_from_tensor(pred);
  if (boxes.size() != gt.size() || terms.size() != gt.size())
    throw ShapeError("box_losses: pred, gt and terms must have equal length");
  std::vector<T> values(boxes.size());
  std::vector<double> grads(4 * boxes.size());
  for (std::size_t p = 0; p < boxes.size(); ++p) {
    const LossGrad lg = box_loss_grad(kind, boxes[p], gt[p], terms[p]);
    values[p] = static_cast<T>(lg.value);
    std::copy(lg.grad.begin(), lg.grad.end(), grads.begin() + static_cast<std::ptrdiff_t>(4 * p));
  }
  const Index count = static_cast<Index>(boxes.size());
  return make_result<T>(
      Shape{count}, std::move(values), {&pred}, "box_loss",
      [grads = std::move(grads)](std::span<const T> g, std::span<const ImplPtr<T>> in) {
        auto& gp = in[0]->grad_buffer();
        for (std::size_t p = 0; p < g.size(); ++p)
          for (std::size_t k = 0; k < 4; ++k)
            gp[4 * p + k] += static_cast<T>(static_cast<double>(g[p]) * grads[4 * p + k]);
      });
}

template <typename T>
Tensor<T> box_losses(const Tensor<T>& pred, std::span<const BBox> gt, BoxLoss kind,
                     const FocusState* state, const WIoUParams& params) {
  const std::vector<BBox> boxes = boxes_from_tensor(pred);
  if (boxes.size() != gt.size()) throw ShapeError("box_losses: pred and gt lengths differ");
  std::vector<DetachedTerms> terms(boxes.size());
  for (std::size_t p = 0; p < boxes.size(); ++p)
    terms[p] = detached_terms(kind, boxes[p], gt[p], state, params);
  return box_losses(pred, gt, kind, std::span<const DetachedTerms>(terms));
}

#define DETECTLAB_INSTANTIATE(T)                                                           \
  template std::vector<BBox> boxes_from_tensor(const Tensor<T>&);                          \
  template Tensor<T> box_losses(const Tensor<T>&, std::span<const BBox>, BoxLoss,          \
                                std::span<const DetachedTerms>);                           \
  template Tensor<T> box_losses(const Tensor<T>&, std::span<const BBox>, BoxLoss,          \
                                const FocusState*, const WIoUParams&);

DETECTLAB_INSTANTIATE(float)
DETECTLAB_INSTANTIATE(double)
#undef DETECTLAB_INSTANTIATE

}  // namespace detectlab::loss
