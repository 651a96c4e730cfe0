// SPDX-License-Identifier: Apache-2.0
#include "detectlab/detector/model.hpp"

#include <cmath>
#include <string>

#include "detectlab/errors.hpp"
#include "detectlab/rng.hpp"

namespace detectlab::detector {

namespace {

// Objectness prior: roughly two objects among S*S cells.
float objectness_prior_bias(Index grid) {
  const double p = std::min(0.5, 2.0 / static_cast<double>(grid * grid));
  return static_cast<float>(std::log(p / (1.0 - p)));
}

}  // namespace

Detector::Detector(const DetectorConfig& config) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(config_.seed, 0x1417));
  const Index c = config_.base_channels;
  Index in = 3;
  for (int s = 0; s < 4; ++s) {
    const Index out = c << s;
    for (Index d = 0; d < config_.stage_depth; ++d) {
      const std::string name = "stage" + std::to_string(s) + "." + std::to_string(d);
      stages_.emplace_back(store_, name, nn::CbsSpec{in, out, 3, d == 0 ? 2 : 1, 1}, rng);
      in = out;
    }
  }
  if (config_.neck == Neck::kRfb)
    rfb_.emplace(store_, "neck", nn::RfbConfig::make_default(in, in), rng);
  else
    sppcspc_.emplace(store_, "neck", nn::SppcspcConfig{in, in}, rng);
  if (config_.attention == Attention::kCa)
    ca_.emplace(store_, "ca", nn::CaConfig{in, config_.ca_reduction}, rng);
  head_ = nn::Conv<float>(store_, "head", nn::CbsSpec{in, 5 + config_.classes, 1, 1, 1}, true, rng);
  store_.get("head.bias")[4] = objectness_prior_bias(config_.grid);
}

ForwardOutput Detector::forward(const TensorF& images, bool training) {
  const Index size = config_.input_size;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != size || images.dim(3) != size)
    throw ShapeError("detector input must be [N,3," + std::to_string(size) + "," +
                     std::to_string(size) + "], got " + shape_str(images.shape()));
  TensorF x = images;
  for (auto& stage : stages_) x = stage.forward(x, training);
  x = rfb_ ? rfb_->forward(x, training) : sppcspc_->forward(x, training);
  ForwardOutput out;
  if (ca_) {
    out.attention = ca_->forward(x, training);
    x = out.attention->y;
  }
  out.grid = nchw_to_nhwc(head_.forward(x));
  return out;
}

std::int64_t forward_macs(Detector& model) {
  NoGradGuard no_grad;
  const Index s = model.config().input_size;
  MacCounter::reset();
  model.forward(TensorF::zeros({1, 3, s, s}), false);
  return MacCounter::value();
}

}  // namespace detectlab::detector
