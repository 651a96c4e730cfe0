// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (little endian):
//   "DLCK" | u8 version (1) | u32 json length | json bytes |
//   u32 record count | per record: u32 name length | name | TNSR record
// The JSON block holds the configuration, the focus state, the training
// position and the per-epoch log. Records hold the model parameters and
// buffers under their registry names, and optimizer velocities as "opt.<name>".
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "detectlab/detector/config.hpp"
#include "detectlab/detector/model.hpp"
#include "detectlab/loss/bbox.hpp"

namespace detectlab::detector {

/// One row of the per-epoch training log.
struct EpochLog {
  Index epoch = 0;  // 1-based
  double box = 0.0;
  double obj = 0.0;
  double cls = 0.0;
  double total = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double map50 = 0.0;
  double map5095 = 0.0;
};

struct Checkpoint {
  DetectorConfig config;
  loss::FocusState focus;
  Index epoch = 0;  // completed epochs
  Index step = 0;   // completed optimizer steps
  std::vector<EpochLog> history;
  std::vector<std::pair<std::string, TensorF>> tensors;

  const TensorF* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);  // FormatError

/// Snapshot of a model's parameters and buffers (values are copied).
std::vector<std::pair<std::string, TensorF>> model_tensors(const Detector& model);

/// Copies every parameter and buffer of `model` from `ckpt`; a missing name
/// or shape mismatch raises FormatError.
void load_model_tensors(Detector& model, const Checkpoint& ckpt);

/// Builds the model described by the checkpoint and loads its weights.
std::unique_ptr<Detector> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace detectlab::detector
