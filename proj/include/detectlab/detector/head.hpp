// SPDX-License-Identifier: Apache-2.0
//
// Grid head semantics: target assignment, the training loss, and decoding
// of raw predictions into detections.
#pragma once

#include <array>
#include <span>
#include <vector>

#include "detectlab/data/synth.hpp"
#include "detectlab/detector/config.hpp"
#include "detectlab/metrics/eval.hpp"

namespace detectlab::detector {

/// Bounds applied to tw, th before exponentiation.
inline constexpr double kLogSizeMin = -8.0;
inline constexpr double kLogSizeMax = 4.0;

/// Per-image targets. Cell (row, col) is index row * S + col.
struct TargetGrid {
  Index grid = 0;
  std::vector<int> cls;             // class per cell, -1 for negatives
  std::vector<loss::BBox> box;      // ground truth box per positive cell

  Index positives() const;
};

/// The cell containing a ground-truth center (floor(coord / cell), clamped
/// to the grid) is positive for it; when two centers share a cell the
/// larger box wins, and the earlier one on equal area.
TargetGrid assign_targets(std::span<const data::Annotation> gts, const DetectorConfig& config);

/// Predicted box of one cell from its raw (tx, ty, tw, th).
loss::BBox decode_cell(std::span<const double> t, Index row, Index col, double cell_size);

/// Inverse of decode_cell for a box whose center lies strictly inside the cell.
std::array<double, 4> encode_cell(const loss::BBox& box, Index row, Index col, double cell_size);

struct LossBreakdown {
  double box = 0.0;
  double obj = 0.0;
  double cls = 0.0;
  double total = 0.0;
  Index positives = 0;
  double mean_l_iou = 0.0;  // over positives; 0 when there are none
};

template <typename T>
struct DetectorLoss {
  LossBreakdown parts;
  Tensor<T> total;  // scalar; backward reaches `pred`
};

/// `pred` is [N, S, S, 5 + K] and `targets` holds N grids.
///   box: chosen IoU-family loss averaged over positives
///   obj: BCE on logits averaged over all N * S * S cells
///   cls: BCE on logits averaged over positives * K
///   total = w_box * box + w_obj * obj + w_cls * cls
/// For WIoU v3, `focus` must be given; when `update_focus` is set it first
/// absorbs this batch's mean L_IoU over positives. Throws NumericError when
/// any component is not finite.
template <typename T>
DetectorLoss<T> detector_loss(const Tensor<T>& pred, std::span<const TargetGrid> targets,
                              const DetectorConfig& config, loss::FocusState* focus,
                              bool update_focus);

/// Greedy per-class non-maximum suppression in ranking order; a detection is
/// dropped when its IoU with a kept same-class detection exceeds `iou_thresh`.
std::vector<metrics::Detection> nms(std::vector<metrics::Detection> dets, double iou_thresh);

/// One detection per cell: class = argmax of class probabilities, confidence
/// = sigmoid(obj) * that probability; cells below `conf_thresh` are dropped,
/// then NMS. Returns one list per image; `image` fields are left empty.
std::vector<std::vector<metrics::Detection>> decode(const TensorF& pred,
                                                    const DetectorConfig& config,
                                                    double conf_thresh, double nms_iou);

}  // namespace detectlab::detector
