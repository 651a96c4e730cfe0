// SPDX-License-Identifier: Apache-2.0
//
// Miniature single-scale grid detector:
//   4 stages of CBS(3x3, stride 2) + (stage_depth - 1) x CBS(3x3) -> neck (SPPCSPC or RFB) -> optional coordinate
//   attention -> 1x1 head conv to 5 + K channels -> [N, S, S, 5 + K]
// Channel layout of the head: tx, ty, tw, th, objectness, K class logits.
#pragma once

#include <optional>
#include <vector>

#include "detectlab/detector/config.hpp"
#include "detectlab/nn/blocks.hpp"

namespace detectlab::detector {

struct ForwardOutput {
  TensorF grid;                     // [N, S, S, 5 + K]
  std::optional<nn::CaOutput<float>> attention;
};

class Detector {
 public:
  explicit Detector(const DetectorConfig& config);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  /// `images` is [N, 3, input, input]. Training mode uses batch statistics
  /// and updates the running statistics of every batch norm.
  ForwardOutput forward(const TensorF& images, bool training);

  const DetectorConfig& config() const { return config_; }
  nn::ParamStore<float>& store() { return store_; }
  const nn::ParamStore<float>& store() const { return store_; }
  Index param_count() const { return store_.param_count(); }

 private:
  DetectorConfig config_;
  nn::ParamStore<float> store_;
  std::vector<nn::Cbs<float>> stages_;
  std::optional<nn::Sppcspc<float>> sppcspc_;
  std::optional<nn::Rfb<float>> rfb_;
  std::optional<nn::CoordAttention<float>> ca_;
  nn::Conv<float> head_;
};

/// Multiply-accumulate count of one single-image forward pass.
std::int64_t forward_macs(Detector& model);

}  // namespace detectlab::detector
