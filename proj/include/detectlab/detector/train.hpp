// SPDX-License-Identifier: Apache-2.0
//
// Training loop, optimizer and model evaluation for the grid detector.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "detectlab/data/synth.hpp"
#include "detectlab/detector/checkpoint.hpp"
#include "detectlab/detector/head.hpp"
#include "detectlab/detector/model.hpp"
#include "detectlab/metrics/eval.hpp"

namespace detectlab::detector {

/// An image held in memory with its annotations.
struct Sample {
  std::string id;   // image path relative to the dataset directory
  TensorF image;    // [3, H, W]
  std::vector<data::Annotation> annotations;
};

std::vector<Sample> load_samples(const std::filesystem::path& dataset_dir, const std::string& split);

/// Stacks images into [N, 3, H, W].
TensorF stack_images(const std::vector<const Sample*>& batch);

/// SGD with momentum: v <- mu * v + g + wd * w (weight decay on weights of
/// rank >= 2 only), w <- w - lr * v.
class Sgd {
 public:
  Sgd(nn::ParamStore<float>& store, double momentum, double weight_decay);
  void step(double lr);

  /// Velocities as "opt.<param name>" tensors, and the inverse.
  std::vector<std::pair<std::string, TensorF>> state() const;
  void load_state(const Checkpoint& ckpt);

 private:
  nn::ParamStore<float>& store_;
  double momentum_;
  double weight_decay_;
  std::vector<TensorF> velocity_;
};

/// Cosine decay from lr to lr * lr_final_fraction over the run, with a linear
/// ramp across the first warmup_epochs.
double learning_rate(const DetectorConfig& config, Index epoch, Index iter, Index iters_per_epoch);

/// Reads DETECTLAB_THREADS; 1 when unset or invalid.
int worker_threads();

struct ModelEval {
  metrics::EvalResult result;
  std::vector<metrics::Detection> detections;
  std::vector<metrics::GroundTruth> ground_truth;
};

/// Forwards one image at a time in inference mode, decodes and scores.
/// Images are split across `threads` workers; results do not depend on it.
ModelEval evaluate_model(Detector& model, const std::vector<Sample>& samples, double conf_thresh,
                         double nms_iou, int threads = 1);

/// Mean wall time of a single-image inference forward, in milliseconds.
double measure_speed_ms(Detector& model, Index warmups = 5, Index iterations = 50);

struct TrainOptions {
  std::filesystem::path out_dir;                  // receives train.csv and checkpoint.dlck
  std::optional<std::filesystem::path> resume;    // continue from this checkpoint
  std::optional<Index> stop_after;                // stop once this many epochs are complete
  std::function<void(const EpochLog&)> on_epoch;  // progress callback
};

struct TrainResult {
  std::vector<EpochLog> history;
  Index epochs_completed = 0;
  std::filesystem::path checkpoint;
  std::filesystem::path csv;
};

/// Trains on the dataset's train split and scores the val split after every
/// epoch. Deterministic given the configuration; a run interrupted with
/// stop_after and resumed produces the same files as one uninterrupted run.
TrainResult train(const DetectorConfig& config, const std::filesystem::path& dataset_dir,
                  const TrainOptions& options);

inline constexpr const char* kCsvHeader = "epoch,box,obj,cls,total,precision,recall,map50,map5095";

std::string format_csv_row(const EpochLog& row);

}  // namespace detectlab::detector
