// SPDX-License-Identifier: Apache-2.0
#include "detectlab/data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "detectlab/errors.hpp"
#include "detectlab/metrics/eval.hpp"
#include "detectlab/rng.hpp"
#include "detectlab/tensor_io.hpp"

namespace detectlab::data {

namespace {

using Color = std::array<double, 3>;

struct Canvas {
  Index size;
  std::vector<double> rgb;  // planar [3][size][size]

  explicit Canvas(Index s) : size(s), rgb(static_cast<std::size_t>(3 * s * s), 0.0) {}
  double& at(int c, Index y, Index x) {
    return rgb[static_cast<std::size_t>((c * size + y) * size + x)];
  }
  void blend(Index y, Index x, const Color& color, double coverage) {
    if (y < 0 || x < 0 || y >= size || x >= size || coverage <= 0.0) return;
    for (int c = 0; c < 3; ++c) at(c, y, x) += coverage * (color[c] - at(c, y, x));
  }
};

double color_distance(const Color& a, const Color& b) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s);
}

Color random_color(Rng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

// Two material palettes: bluish-green glass and glazed porcelain (either
// off-white or brown).
Color disc_color(Rng& rng) {
  if (rng.bernoulli(0.5))
    return {rng.uniform(0.20, 0.35), rng.uniform(0.50, 0.68), rng.uniform(0.55, 0.75)};
  if (rng.bernoulli(0.5))
    return {rng.uniform(0.80, 0.92), rng.uniform(0.78, 0.90), rng.uniform(0.72, 0.85)};
  return {rng.uniform(0.50, 0.62), rng.uniform(0.28, 0.36), rng.uniform(0.16, 0.24)};
}

// Background colours are resampled until they stay clear of every disc colour.
Color background_color(Rng& rng, const std::vector<Color>& avoid) {
  for (;;) {
    const Color c = random_color(rng, 0.05, 0.95);
    bool ok = true;
    for (const Color& a : avoid) ok = ok && color_distance(a, c) >= 0.35;
    if (ok) return c;
  }
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Bilinear value noise on a lattice with spacing `cell` pixels.
std::vector<double> value_noise(Rng& rng, Index size, Index cell) {
  const Index n = size / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(n * n));
  for (double& v : lattice) v = rng.uniform();
  std::vector<double> out(static_cast<std::size_t>(size * size));
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double fy = static_cast<double>(y) / static_cast<double>(cell);
      const double fx = static_cast<double>(x) / static_cast<double>(cell);
      const Index iy = static_cast<Index>(fy), ix = static_cast<Index>(fx);
      const double ty = smoothstep(fy - static_cast<double>(iy));
      const double tx = smoothstep(fx - static_cast<double>(ix));
      auto l = [&](Index a, Index b) { return lattice[static_cast<std::size_t>(a * n + b)]; };
      const double top = l(iy, ix) + tx * (l(iy, ix + 1) - l(iy, ix));
      const double bot = l(iy + 1, ix) + tx * (l(iy + 1, ix + 1) - l(iy + 1, ix));
      out[static_cast<std::size_t>(y * size + x)] = top + ty * (bot - top);
    }
  return out;
}

void paint_background(Canvas& canvas, Background mode, Rng& rng, const std::vector<Color>& avoid) {
  const Color c0 = background_color(rng, avoid);
  const Color c1 = background_color(rng, avoid);
  const Index s = canvas.size;
  std::vector<double> t(static_cast<std::size_t>(s * s), 0.0);
  if (mode == Background::kGradient) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ux = std::cos(angle), uy = std::sin(angle);
    const double half = 0.5 * static_cast<double>(s);
    const double reach = half * (std::abs(ux) + std::abs(uy));
    for (Index y = 0; y < s; ++y)
      for (Index x = 0; x < s; ++x) {
        const double proj = (static_cast<double>(x) - half) * ux + (static_cast<double>(y) - half) * uy;
        t[static_cast<std::size_t>(y * s + x)] = 0.5 + 0.5 * proj / reach;
      }
  } else if (mode == Background::kNoise) {
    const auto coarse = value_noise(rng, s, 32);
    const auto fine = value_noise(rng, s, 8);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.7 * coarse[i] + 0.3 * fine[i];
  }
  for (Index y = 0; y < s; ++y)
    for (Index x = 0; x < s; ++x) {
      const double w = t[static_cast<std::size_t>(y * s + x)];
      for (int c = 0; c < 3; ++c) canvas.at(c, y, x) = c0[c] + w * (c1[c] - c0[c]);
    }
}

struct Disc {
  double cx, cy;
  bool present = true;
  bool notched = false;
  double notch_dir = 0.0;    // radians, in the disc frame
  double notch_half = 0.0;   // half-width of the wedge, radians
};

struct StringGeom {
  double cx, cy, angle;       // axis direction (cos angle, sin angle)
  double along, across;       // disc semi-axes
  double pitch;
  Color color;
  Color rod;
  std::vector<Disc> discs;
};

// Axis-aligned half extents of an ellipse with semi-axes (a along u, b across).
std::pair<double, double> ellipse_half_extent(double a, double b, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {std::sqrt(a * a * c * c + b * b * s * s), std::sqrt(a * a * s * s + b * b * c * c)};
}

BBox box_of_discs(const StringGeom& g, std::size_t first, std::size_t last) {
  const auto [hx, hy] = ellipse_half_extent(g.along, g.across, g.angle);
  double x1 = 1e300, y1 = 1e300, x2 = -1e300, y2 = -1e300;
  for (std::size_t i = first; i <= last; ++i) {
    x1 = std::min(x1, g.discs[i].cx - hx);
    x2 = std::max(x2, g.discs[i].cx + hx);
    y1 = std::min(y1, g.discs[i].cy - hy);
    y2 = std::max(y2, g.discs[i].cy + hy);
  }
  return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

BBox clip_to_canvas(const BBox& b, double size) {
  const double x1 = std::clamp(b.x1(), 0.0, size), x2 = std::clamp(b.x2(), 0.0, size);
  const double y1 = std::clamp(b.y1(), 0.0, size), y2 = std::clamp(b.y2(), 0.0, size);
  return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

void paint_rod(Canvas& canvas, const StringGeom& g) {
  const double ux = std::cos(g.angle), uy = std::sin(g.angle);
  const double half_len = 0.5 * g.pitch * static_cast<double>(g.discs.size() - 1) + g.along;
  const double half_width = 1.0;
  const double reach = half_len + 2.0;
  const Index x0 = static_cast<Index>(std::floor(g.cx - reach)), x1 = static_cast<Index>(std::ceil(g.cx + reach));
  const Index y0 = static_cast<Index>(std::floor(g.cy - reach)), y1 = static_cast<Index>(std::ceil(g.cy + reach));
  for (Index y = y0; y <= y1; ++y)
    for (Index x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double px = static_cast<double>(x) + 0.25 + 0.5 * sx - g.cx;
          const double py = static_cast<double>(y) + 0.25 + 0.5 * sy - g.cy;
          const double along = px * ux + py * uy;
          const double across = -px * uy + py * ux;
          hits += (std::abs(along) <= half_len && std::abs(across) <= half_width) ? 1 : 0;
        }
      canvas.blend(y, x, g.rod, hits / 4.0);
    }
}

void paint_disc(Canvas& canvas, const StringGeom& g, const Disc& d) {
  const auto [hx, hy] = ellipse_half_extent(g.along, g.across, g.angle);
  const double ux = std::cos(g.angle), uy = std::sin(g.angle);
  const Color edge{0.6 * g.color[0], 0.6 * g.color[1], 0.6 * g.color[2]};
  for (Index y = static_cast<Index>(std::floor(d.cy - hy)); y <= static_cast<Index>(std::ceil(d.cy + hy)); ++y)
    for (Index x = static_cast<Index>(std::floor(d.cx - hx)); x <= static_cast<Index>(std::ceil(d.cx + hx)); ++x) {
      Color acc{0.0, 0.0, 0.0};
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double px = static_cast<double>(x) + 0.25 + 0.5 * sx - d.cx;
          const double py = static_cast<double>(y) + 0.25 + 0.5 * sy - d.cy;
          const double a = (px * ux + py * uy) / g.along;
          const double b = (-px * uy + py * ux) / g.across;
          const double rho2 = a * a + b * b;
          if (rho2 > 1.0) continue;
          if (d.notched && rho2 > 0.09) {
            double diff = std::atan2(b, a) - d.notch_dir;
            diff = std::remainder(diff, 2.0 * std::numbers::pi);
            if (std::abs(diff) <= d.notch_half) continue;
          }
          const double shade = 1.08 - 0.25 * rho2;
          for (int c = 0; c < 3; ++c)
            acc[c] += rho2 > 0.72 ? edge[c] : std::min(1.0, g.color[c] * shade);
          ++hits;
        }
      if (hits == 0) continue;
      for (int c = 0; c < 3; ++c) acc[c] /= hits;
      canvas.blend(y, x, acc, hits / 4.0);
    }
}

const char* background_name(Background b) {
  switch (b) {
    case Background::kFlat: return "flat";
    case Background::kGradient: return "gradient";
    case Background::kNoise: return "noise";
  }
  return "?";
}

Background parse_background(const std::string& name) {
  if (name == "flat") return Background::kFlat;
  if (name == "gradient") return Background::kGradient;
  if (name == "noise") return Background::kNoise;
  throw ConfigError("unknown background '" + name + "' (flat|gradient|noise)");
}

}  // namespace

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names{"normal", "self-explosion", "damage"};
  return names;
}

void SceneSpec::validate() const {
  if (canvas < 32) throw ConfigError("canvas must be at least 32 pixels");
  if (min_strings < 1 || max_strings < min_strings || max_strings > 4)
    throw ConfigError("string count range must satisfy 1 <= min <= max <= 4");
  if (min_discs < 4 || max_discs < min_discs)
    throw ConfigError("disc count range must satisfy 4 <= min <= max");
  if (!(disc_along_min > 0.5) || disc_along_max < disc_along_min || !(disc_across_min > 0.5) ||
      disc_across_max < disc_across_min)
    throw ConfigError("disc semi-axis ranges must be positive and ordered");
  if (spacing < 0.0) throw ConfigError("spacing must be non-negative");
  if (max_tilt_degrees < 0.0 || max_tilt_degrees > 45.0)
    throw ConfigError("max_tilt_degrees must lie in [0, 45]");
  if (p_self_explosion < 0.0 || p_damage < 0.0 || p_self_explosion + p_damage > 1.0)
    throw ConfigError("defect probabilities must be non-negative with sum <= 1");
  if (pixel_noise < 0.0) throw ConfigError("pixel_noise must be non-negative");
  // The largest string has to fit the canvas along its axis.
  const double min_len = (min_discs - 1) * (2 * disc_along_max + spacing) + 2 * disc_along_max;
  const double band = static_cast<double>(canvas) / max_strings;
  if (min_len > static_cast<double>(canvas) - 8.0 || 2 * disc_across_max + 4.0 > band)
    throw ConfigError("disc geometry does not fit the canvas");
}

SceneSpec scene_spec_from_json(const std::string& text) {
  SceneSpec s;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("scene spec must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "canvas") s.canvas = value.get<Index>();
      else if (key == "min_strings") s.min_strings = value.get<int>();
      else if (key == "max_strings") s.max_strings = value.get<int>();
      else if (key == "min_discs") s.min_discs = value.get<int>();
      else if (key == "max_discs") s.max_discs = value.get<int>();
      else if (key == "disc_along_min") s.disc_along_min = value.get<double>();
      else if (key == "disc_along_max") s.disc_along_max = value.get<double>();
      else if (key == "disc_across_min") s.disc_across_min = value.get<double>();
      else if (key == "disc_across_max") s.disc_across_max = value.get<double>();
      else if (key == "spacing") s.spacing = value.get<double>();
      else if (key == "max_tilt_degrees") s.max_tilt_degrees = value.get<double>();
      else if (key == "p_self_explosion") s.p_self_explosion = value.get<double>();
      else if (key == "p_damage") s.p_damage = value.get<double>();
      else if (key == "pixel_noise") s.pixel_noise = value.get<double>();
      else if (key == "backgrounds") {
        s.backgrounds.clear();
        for (const auto& b : value) s.backgrounds.push_back(parse_background(b.get<std::string>()));
      } else {
        throw ConfigError("unknown scene spec key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::string scene_spec_to_json(const SceneSpec& s) {
  nlohmann::json j = {{"canvas", s.canvas},
                      {"min_strings", s.min_strings},
                      {"max_strings", s.max_strings},
                      {"min_discs", s.min_discs},
                      {"max_discs", s.max_discs},
                      {"disc_along_min", s.disc_along_min},
                      {"disc_along_max", s.disc_along_max},
                      {"disc_across_min", s.disc_across_min},
                      {"disc_across_max", s.disc_across_max},
                      {"spacing", s.spacing},
                      {"max_tilt_degrees", s.max_tilt_degrees},
                      {"p_self_explosion", s.p_self_explosion},
                      {"p_damage", s.p_damage},
                      {"pixel_noise", s.pixel_noise}};
  j["backgrounds"] = nlohmann::json::array();
  for (Background b : s.backgrounds) j["backgrounds"].push_back(background_name(b));
  return j.dump(2);
}

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  Rng rng(seed);
  const double size = static_cast<double>(spec.canvas);
  const int n_strings = static_cast<int>(rng.range(spec.min_strings, spec.max_strings));
  const bool vertical = rng.bernoulli(0.5);
  const double band = size / n_strings;

  std::vector<StringGeom> strings;
  std::vector<Color> colors;
  for (int s = 0; s < n_strings; ++s) {
    StringGeom g;
    g.along = rng.uniform(spec.disc_along_min, spec.disc_along_max);
    g.across = rng.uniform(spec.disc_across_min, spec.disc_across_max);
    g.pitch = 2.0 * g.along + spec.spacing;
    const int max_fit = static_cast<int>((size - 8.0 - 2.0 * g.along) / g.pitch) + 1;
    const int k = static_cast<int>(rng.range(spec.min_discs, std::max(spec.min_discs, std::min(spec.max_discs, max_fit))));
    const double half_len = 0.5 * g.pitch * (k - 1) + g.along;

    // Limit the tilt so the string stays inside its band.
    double tilt = rng.uniform(-1.0, 1.0) * spec.max_tilt_degrees * std::numbers::pi / 180.0;
    const double room = 0.5 * band - 2.0;
    while (std::abs(tilt) > 1e-3 &&
           half_len * std::abs(std::sin(tilt)) + g.across * std::cos(tilt) > room)
      tilt *= 0.8;
    g.angle = tilt + (vertical ? 0.5 * std::numbers::pi : 0.0);

    const auto [hx, hy] = ellipse_half_extent(half_len, g.across, g.angle);
    const double span_along = vertical ? hy : hx;
    const double span_across = vertical ? hx : hy;
    const double slack_along = std::max(0.0, 0.5 * size - span_along - 3.0);
    const double slack_across = std::max(0.0, 0.5 * band - span_across - 1.0);
    const double c_along = 0.5 * size + rng.uniform(-1.0, 1.0) * slack_along;
    const double c_across = band * (s + 0.5) + rng.uniform(-1.0, 1.0) * slack_across;
    g.cx = vertical ? c_across : c_along;
    g.cy = vertical ? c_along : c_across;

    g.color = disc_color(rng);
    g.rod = {rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3)};
    const double ux = std::cos(g.angle), uy = std::sin(g.angle);
    for (int i = 0; i < k; ++i) {
      const double offset = (i - 0.5 * (k - 1)) * g.pitch;
      g.discs.push_back({g.cx + offset * ux, g.cy + offset * uy});
    }
    colors.push_back(g.color);
    colors.push_back(g.rod);
    strings.push_back(std::move(g));
  }

  Canvas canvas(spec.canvas);
  const std::vector<Background> modes = spec.backgrounds.empty()
                                            ? std::vector<Background>{Background::kFlat, Background::kGradient, Background::kNoise}
                                            : spec.backgrounds;
  paint_background(canvas, modes[rng.below(modes.size())], rng, colors);

  Scene scene;
  for (StringGeom& g : strings) {
    const std::size_t k = g.discs.size();
    const double u = rng.uniform();
    Annotation ann;
    if (u < spec.p_self_explosion) {
      // Remove one disc (sometimes two adjacent ones) away from the ends.
      const std::size_t count = (k >= 6 && rng.bernoulli(0.25)) ? 2 : 1;
      const std::size_t first = 1 + rng.below(k - 1 - count);
      for (std::size_t i = first; i < first + count; ++i) g.discs[i].present = false;
      ann = {box_of_discs(g, first, first + count - 1), static_cast<int>(ClassId::kSelfExplosion)};
    } else if (u < spec.p_self_explosion + spec.p_damage) {
      const std::size_t idx = rng.below(k);
      Disc& d = g.discs[idx];
      d.notched = true;
      // Bite into one of the long flanks, where the notch stays visible.
      d.notch_dir = (rng.bernoulli(0.5) ? 0.5 : -0.5) * std::numbers::pi + rng.uniform(-0.5, 0.5);
      d.notch_half = rng.uniform(0.6, 0.95);
      ann = {box_of_discs(g, idx, idx), static_cast<int>(ClassId::kDamage)};
    } else {
      ann = {box_of_discs(g, 0, k - 1), static_cast<int>(ClassId::kNormal)};
    }
    ann.box = clip_to_canvas(ann.box, size);
    scene.annotations.push_back(ann);

    paint_rod(canvas, g);
    for (const Disc& d : g.discs)
      if (d.present) paint_disc(canvas, g, d);
  }

  std::vector<float> pixels(canvas.rgb.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = canvas.rgb[i] + spec.pixel_noise * rng.normal();
    pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  scene.image = TensorF::from({3, spec.canvas, spec.canvas}, std::move(pixels));
  return scene;
}

SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
  c.val = std::min(n - c.train, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
  c.test = n - c.train - c.val;
  return c;
}

void build_dataset(const SceneSpec& spec, std::size_t n, const std::filesystem::path& out_dir,
                   std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw ConfigError("dataset size must be positive");
  std::filesystem::create_directories(out_dir / "images");

  std::vector<std::vector<metrics::GroundTruth>> per_image(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Scene scene = generate_scene(derive_seed(seed, i), spec);
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.tnsr", i);
    save_tnsr(out_dir / name, scene.image);
    for (const Annotation& a : scene.annotations) per_image[i].push_back({name, a.cls, a.box});
  }

  // Order by a seeded hash of the index; ties are impossible in practice but
  // fall back to the index.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::uint64_t salt = derive_seed(seed, 0x5D1CE5ULL);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = mix64(salt ^ a), hb = mix64(salt ^ b);
    return ha != hb ? ha < hb : a < b;
  });
  const SplitCounts counts = split_counts(n);
  const std::pair<const char*, std::pair<std::size_t, std::size_t>> splits[] = {
      {"train", {0, counts.train}},
      {"val", {counts.train, counts.train + counts.val}},
      {"test", {counts.train + counts.val, n}}};
  for (const auto& [split, range] : splits) {
    std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(range.first),
                                     order.begin() + static_cast<std::ptrdiff_t>(range.second));
    std::sort(members.begin(), members.end());
    std::vector<metrics::GroundTruth> rows;
    for (std::size_t i : members) rows.insert(rows.end(), per_image[i].begin(), per_image[i].end());
    metrics::write_ground_truth(out_dir / (std::string(split) + ".jsonl"), rows);
  }

  nlohmann::json meta = {{"seed", seed},
                         {"n", n},
                         {"split", {counts.train, counts.val, counts.test}},
                         {"classes", class_names()},
                         {"spec", nlohmann::json::parse(scene_spec_to_json(spec))}};
  std::ofstream(out_dir / "dataset.json") << meta.dump(2) << '\n';
}

std::vector<SampleRecord> load_split(const std::filesystem::path& dataset_dir,
                                     const std::string& split) {
  const auto rows = metrics::read_ground_truth(dataset_dir / (split + ".jsonl"));
  std::vector<SampleRecord> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    auto [it, inserted] = index.emplace(r.image, out.size());
    if (inserted) out.push_back({r.image, {}});
    out[it->second].annotations.push_back({r.box, r.cls});
  }
  return out;
}

}  // namespace detectlab::data
