// SPDX-License-Identifier: Apache-2.0
//
// IoU-family bounding-box losses: L_IoU, the WIoU distance factor R_WIoU,
// WIoU v1, WIoU v3 with its dynamic focusing gain, and CIoU as a baseline.
//
// Boxes are (cx, cy, w, h) in pixels. Every loss is differentiable with
// respect to the predicted box only; ground truth is a constant.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "detectlab/tensor.hpp"

namespace detectlab::loss {

struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
  void validate() const;  // ArgumentError unless w > 0 and h > 0 (and finite)
};

struct PairGeometry {
  double iou = 0.0;
  double inter_w = 0.0;     // W_i
  double inter_h = 0.0;     // H_i
  double enclose_w = 0.0;   // W_g
  double enclose_h = 0.0;   // H_g
  double center_dist2 = 0.0;
};

PairGeometry pair_geometry(const BBox& a, const BBox& b);

double iou(const BBox& a, const BBox& b);
double l_iou(const BBox& a, const BBox& b);

/// exp(center_dist2 / (W_g^2 + H_g^2)); the denominator carries no gradient
/// and is floored at 1e-12.
double r_wiou(const BBox& pred, const BBox& gt);
double wiou_v1(const BBox& pred, const BBox& gt);

/// Running mean of L_IoU used as the reference point of the outlier degree.
struct FocusState {
  double ema = 0.0;
  double momentum = 0.99;
  std::int64_t steps = 0;  // number of updates applied
  bool frozen = false;

  bool initialized() const { return steps > 0; }
};

/// ema <- m * ema + (1 - m) * batch_mean; the first update sets ema directly.
/// No-op when frozen.
void update_focus(FocusState& state, double batch_mean_l_iou);

/// beta = l_iou / ema. Throws StateError before the first update.
double outlier_degree(double l_iou_value, const FocusState& state);

struct WIoUParams {
  double alpha = 1.9;
  double delta = 3.0;
  void validate() const;  // ArgumentError unless alpha > 0, alpha != 1, delta > 0
};

/// r = beta / (delta * alpha^(beta - delta))
double gradient_gain(double beta, const WIoUParams& params);

double wiou_v3(const BBox& pred, const BBox& gt, const FocusState& state,
               const WIoUParams& params = {});

/// 1 - IoU + rho^2 / c^2 + alpha_v * v, with the trade-off weight alpha_v
/// excluded from differentiation.
double ciou(const BBox& pred, const BBox& gt);

enum class BoxLoss { kCiou, kWiou1, kWiou3 };

BoxLoss parse_box_loss(std::string_view name);  // "ciou" | "wiou1" | "wiou3"
std::string_view box_loss_name(BoxLoss kind);

/// The quantities a loss treats as constants, evaluated at one (pred, gt).
/// Holding them fixed while perturbing pred reproduces the analytic
/// gradient by finite differences.
struct DetachedTerms {
  double enclose_diag2 = 1.0;  // floored W_g^2 + H_g^2
  double gain = 1.0;           // r(beta); 1 unless the loss is WIoU v3
  double ciou_alpha = 0.0;     // alpha_v; 0 unless the loss is CIoU
};

/// `state` is consulted only for WIoU v3 and must then be initialized.
DetachedTerms detached_terms(BoxLoss kind, const BBox& pred, const BBox& gt,
                             const FocusState* state, const WIoUParams& params = {});

struct LossGrad {
  double value = 0.0;
  std::array<double, 4> grad{};  // d value / d (cx, cy, w, h) of pred
};

LossGrad box_loss_grad(BoxLoss kind, const BBox& pred, const BBox& gt,
                       const DetachedTerms& terms);

/// R_WIoU with its gradient; only the center coordinates receive gradient.
LossGrad r_wiou_grad(const BBox& pred, const BBox& gt);

/// Convenience: detached_terms followed by box_loss_grad.
LossGrad box_loss_grad(BoxLoss kind, const BBox& pred, const BBox& gt,
                       const FocusState* state, const WIoUParams& params = {});

/// Per-pair losses as a graph op. `pred` is [P,4] in (cx, cy, w, h) order;
/// the result is [P]. `terms` must hold one entry per pair.
template <typename T>
Tensor<T> box_losses(const Tensor<T>& pred, std::span<const BBox> gt, BoxLoss kind,
                     std::span<const DetachedTerms> terms);

/// As above, with the detached terms computed from the current `pred`.
template <typename T>
Tensor<T> box_losses(const Tensor<T>& pred, std::span<const BBox> gt, BoxLoss kind,
                     const FocusState* state, const WIoUParams& params = {});

/// Reads the rows of a [P,4] tensor as boxes (no validation).
template <typename T>
std::vector<BBox> boxes_from_tensor(const Tensor<T>& t);

}  // namespace detectlab::loss
