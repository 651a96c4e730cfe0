// SPDX-License-Identifier: Apache-2.0
//
// Synthetic insulator scenes. Each scene holds one to three insulator
// strings (a core rod carrying a row of elliptical discs). A string is
// annotated once: class 0 boxes the whole string, class 1 boxes the gap left
// by missing discs, class 2 boxes a single disc with a wedge-shaped notch.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "detectlab/loss/bbox.hpp"
#include "detectlab/tensor.hpp"

namespace detectlab::data {

using loss::BBox;

enum class ClassId : int { kNormal = 0, kSelfExplosion = 1, kDamage = 2 };
inline constexpr int kNumClasses = 3;
const std::vector<std::string>& class_names();

enum class Background { kFlat, kGradient, kNoise };

struct SceneSpec {
  Index canvas = 128;
  // Empty means "pick uniformly among all modes per scene".
  std::vector<Background> backgrounds;
  int min_strings = 1;
  int max_strings = 3;
  int min_discs = 4;
  int max_discs = 10;
  // Disc semi-axes: `disc_along` along the string axis, `disc_across` across it.
  double disc_along_min = 2.5;
  double disc_along_max = 3.5;
  double disc_across_min = 6.0;
  double disc_across_max = 8.5;
  double spacing = 1.6;           // extra gap between neighbouring discs, pixels
  double max_tilt_degrees = 12.0;  // jitter around the horizontal/vertical axis
  double p_self_explosion = 1.0 / 3.0;
  double p_damage = 1.0 / 3.0;
  double pixel_noise = 0.02;

  void validate() const;  // ConfigError
};

/// Flat JSON object using the field names above; unknown keys are errors.
/// "backgrounds" is a list of "flat" | "gradient" | "noise".
SceneSpec scene_spec_from_json(const std::string& text);
std::string scene_spec_to_json(const SceneSpec& spec);

struct Annotation {
  BBox box;
  int cls = 0;
};

struct Scene {
  TensorF image;  // [3, canvas, canvas], values in [0, 1]
  std::vector<Annotation> annotations;
};

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec = {});

struct SampleRecord {
  std::string image;  // path relative to the dataset directory
  std::vector<Annotation> annotations;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// 6:2:2 counts: round(0.6 n), round(0.2 n), remainder.
SplitCounts split_counts(std::size_t n);

/// Writes images/NNNNNN.tnsr, train.jsonl, val.jsonl, test.jsonl and
/// dataset.json under `out_dir`. Scene i uses derive_seed(seed, i); the
/// split orders indices by a seeded 64-bit hash.
void build_dataset(const SceneSpec& spec, std::size_t n, const std::filesystem::path& out_dir,
                   std::uint64_t seed);

/// Reads a manifest and groups annotations by image in first-seen order.
std::vector<SampleRecord> load_split(const std::filesystem::path& dataset_dir,
                                     const std::string& split);

}  // namespace detectlab::data
