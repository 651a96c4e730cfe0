// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "detectlab/loss/bbox.hpp"
#include "detectlab/tensor.hpp"

namespace detectlab::detector {

enum class Neck { kSppcspc, kRfb };
enum class Attention { kNone, kCa };

/// Every knob of a training run. Serialized as a flat JSON object whose keys
/// are the field names below; unknown keys are rejected.
struct DetectorConfig {
  Index input_size = 128;
  Index grid = 8;
  Index classes = 3;
  Index base_channels = 16;
  Index stage_depth = 2;  // CBS layers per downsampling stage (first one strided)
  Neck neck = Neck::kRfb;
  Attention attention = Attention::kCa;
  loss::BoxLoss box_loss = loss::BoxLoss::kWiou3;
  Index ca_reduction = 8;

  double w_box = 5.0;
  double w_obj = 1.0;
  double w_cls = 1.0;
  double wiou_alpha = 1.9;
  double wiou_delta = 3.0;
  double focus_momentum = 0.99;

  double lr = 0.01;
  double lr_final_fraction = 0.01;  // cosine decay floor, as a fraction of lr
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Index warmup_epochs = 1;
  Index epochs = 30;
  Index batch_size = 8;
  std::uint64_t seed = 7;

  double eval_conf = 0.001;
  double nms_iou = 0.5;

  Index cell_size() const { return input_size / grid; }
  loss::WIoUParams wiou_params() const { return {wiou_alpha, wiou_delta}; }
  void validate() const;  // ConfigError
};

std::string neck_name(Neck n);
std::string attention_name(Attention a);

DetectorConfig config_from_json(const std::string& text);
std::string config_to_json(const DetectorConfig& config);

}  // namespace detectlab::detector
