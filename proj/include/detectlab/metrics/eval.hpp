// SPDX-License-Identifier: Apache-2.0
//
// Detection evaluation: greedy IoU matching, all-point interpolated AP,
// mAP over IoU thresholds 0.50:0.05:0.95, and precision/recall at the
// best-F1 operating point.
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "detectlab/loss/bbox.hpp"

namespace detectlab::metrics {

using loss::BBox;

struct Detection {
  std::string image;
  int cls = 0;
  BBox box;
  double conf = 0.0;
};

struct GroundTruth {
  std::string image;
  int cls = 0;
  BBox box;
};

/// {0.50, 0.55, ..., 0.95}
std::vector<double> coco_thresholds();

/// Ranking used everywhere: confidence descending, then smaller box area,
/// then image, class and coordinates, so equal-confidence detections are
/// ordered independently of their input order.
bool ranks_before(const Detection& a, const Detection& b);

/// Indices of `dets` in ranking order.
std::vector<std::size_t> rank_detections(std::span<const Detection> dets);

/// TP flags aligned with the input order of `dets`. Each detection, in
/// ranking order, claims the unmatched same-image same-class ground truth
/// with the highest IoU (lowest index on ties) when that IoU >= iou_thresh.
std::vector<bool> match_detections(std::span<const Detection> dets,
                                   std::span<const GroundTruth> gts, double iou_thresh);

/// All-point AP from ranked TP flags:
///   sum_k (r_k - r_{k-1}) * max_{j >= k} precision_j
/// Returns nullopt when there is nothing to score (no GT and no detections)
/// and 0 when num_gt == 0 but detections exist.
std::optional<double> average_precision(const std::vector<bool>& ranked_flags, std::size_t num_gt);

struct ThresholdStats {
  double iou_thresh = 0.0;
  double ap = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct ClassResult {
  int cls = 0;
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
  std::vector<ThresholdStats> per_threshold;
  double precision = 0.0;  // at the best-F1 confidence cut, IoU 0.5
  double recall = 0.0;
  double best_f1_conf = 0.0;
  double ap50 = 0.0;
  double ap5095 = 0.0;
};

struct EvalResult {
  std::vector<double> thresholds;
  std::vector<ClassResult> classes;  // sorted by class id
  // Means over classes that have ground truth.
  std::vector<double> map_per_threshold;
  double precision = 0.0;
  double recall = 0.0;
  double map50 = 0.0;
  double map5095 = 0.0;
  std::size_t num_gt = 0;
};

/// The operating point for precision/recall is taken at the threshold equal
/// to 0.5 (or the first threshold when 0.5 is absent).
EvalResult evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                    const std::vector<double>& thresholds = coco_thresholds());

// JSON-lines I/O: {"image": str, "class": int, "cx", "cy", "w", "h", "conf"?}
std::vector<Detection> read_detections(const std::filesystem::path& path);
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, std::span<const Detection> dets);
void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruth> gts);

/// EvalResult as a JSON document.
std::string to_json(const EvalResult& result, const std::vector<std::string>& class_names = {});

/// Text table with columns Type, Labels, P, R, mAP50, mAP50-95 (percent).
std::string format_table(const EvalResult& result,
                         const std::vector<std::string>& class_names = {});

}  // namespace detectlab::metrics
