// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "detectlab/metrics/eval.hpp"
#include "detectlab/rng.hpp"

using namespace detectlab;
using namespace detectlab::metrics;

namespace {

double corner_iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) -
                                      std::max(a.cx - a.w / 2, b.cx - b.w / 2));
  const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) -
                                      std::max(a.cy - a.h / 2, b.cy - b.h / 2));
  return ix * iy / (a.w * a.h + b.w * b.h - ix * iy);
}

// Exhaustive evaluator: per class, per threshold, a full scan of every GT
// for every detection, and an O(n^2) precision envelope.
struct OracleResult {
  std::map<int, std::vector<double>> ap;  // class -> AP per threshold
  std::vector<double> map;
};

OracleResult oracle_evaluate(const std::vector<Detection>& dets,
                             const std::vector<GroundTruth>& gts,
                             const std::vector<double>& thresholds) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.cls);
  for (const auto& d : dets) classes.insert(d.cls);
  OracleResult out;
  out.map.assign(thresholds.size(), 0.0);
  int gt_classes = 0;
  for (int c : classes) {
    std::vector<Detection> mine;
    for (const auto& d : dets)
      if (d.cls == c) mine.push_back(d);
    std::sort(mine.begin(), mine.end(), [](const Detection& a, const Detection& b) {
      auto key = [](const Detection& d) {
        return std::make_tuple(-d.conf, d.box.w * d.box.h, d.image, d.cls, d.box.cx, d.box.cy,
                               d.box.w, d.box.h);
      };
      return key(a) < key(b);
    });
    std::size_t n = 0;
    for (const auto& g : gts) n += g.cls == c ? 1 : 0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::vector<bool> used(gts.size(), false);
      std::vector<int> tp_flags;
      for (const auto& d : mine) {
        int best = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (used[g] || gts[g].cls != c || gts[g].image != d.image) continue;
          const double v = corner_iou(d.box, gts[g].box);
          if (v > best_iou) best_iou = v, best = static_cast<int>(g);
        }
        const bool tp = best >= 0 && best_iou >= thresholds[t];
        if (tp) used[static_cast<std::size_t>(best)] = true;
        tp_flags.push_back(tp ? 1 : 0);
      }
      double ap = 0.0;
      if (n > 0) {
        for (std::size_t k = 0; k < tp_flags.size(); ++k) {
          if (!tp_flags[k]) continue;
          double envelope = 0.0;
          for (std::size_t j = k; j < tp_flags.size(); ++j) {
            int tp_count = 0;
            for (std::size_t q = 0; q <= j; ++q) tp_count += tp_flags[q];
            envelope = std::max(envelope, static_cast<double>(tp_count) / static_cast<double>(j + 1));
          }
          ap += (1.0 / static_cast<double>(n)) * envelope;
        }
      }
      out.ap[c].push_back(ap);
      if (n > 0) out.map[t] += ap;
    }
    if (n > 0) ++gt_classes;
  }
  if (gt_classes > 0)
    for (double& m : out.map) m /= gt_classes;
  return out;
}

BBox small_box(Rng& rng) {
  return {rng.uniform(4.0, 12.0), rng.uniform(4.0, 12.0), rng.uniform(2.0, 8.0),
          rng.uniform(2.0, 8.0)};
}

void random_instance(Rng& rng, std::vector<Detection>& dets, std::vector<GroundTruth>& gts) {
  dets.clear();
  gts.clear();
  const std::string images[2] = {"a", "b"};
  const auto n_gt = rng.below(6), n_det = rng.below(9);
  for (std::uint64_t i = 0; i < n_gt; ++i)
    gts.push_back({images[rng.below(2)], static_cast<int>(rng.below(2)), small_box(rng)});
  for (std::uint64_t i = 0; i < n_det; ++i) {
    Detection d{images[rng.below(2)], static_cast<int>(rng.below(2)), small_box(rng),
                static_cast<double>(rng.below(5)) / 4.0};
    if (!gts.empty() && rng.bernoulli(0.6)) {  // perturb a GT so matches happen
      const GroundTruth& g = gts[rng.below(gts.size())];
      d.image = g.image;
      d.cls = rng.bernoulli(0.85) ? g.cls : 1 - g.cls;
      d.box = {g.box.cx + rng.uniform(-1, 1), g.box.cy + rng.uniform(-1, 1),
               g.box.w * rng.uniform(0.7, 1.3), g.box.h * rng.uniform(0.7, 1.3)};
    }
    dets.push_back(d);
  }
}

const GroundTruth kGt{"img", 0, {10, 10, 10, 10}};

}  // namespace

TEST(Match, SingleTruePositive) {
  // 10x10 vs 10x6 sharing the center: IoU 0.6.
  const std::vector<Detection> dets{{"img", 0, {10, 10, 10, 6}, 0.9}};
  EXPECT_EQ(match_detections(dets, std::vector{kGt}, 0.5), std::vector<bool>{true});
}

TEST(Match, DuplicateIsFalsePositive) {
  const std::vector<Detection> dets{{"img", 0, {10, 10, 10, 10}, 0.8},
                                    {"img", 0, {10, 10, 10, 10}, 0.9}};
  EXPECT_EQ(match_detections(dets, std::vector{kGt}, 0.5), (std::vector<bool>{false, true}));
}

TEST(Match, WrongClassOrImageIsFalsePositive) {
  const std::vector<Detection> dets{{"img", 1, {10, 10, 10, 10}, 0.9},
                                    {"other", 0, {10, 10, 10, 10}, 0.9}};
  EXPECT_EQ(match_detections(dets, std::vector{kGt}, 0.5), (std::vector<bool>{false, false}));
}

TEST(Match, EqualConfidenceSmallerBoxRanksFirst) {
  const std::vector<Detection> dets{{"img", 0, {10, 10, 12, 12}, 0.5},
                                    {"img", 0, {10, 10, 9, 9}, 0.5}};
  EXPECT_EQ(rank_detections(dets), (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(match_detections(dets, std::vector{kGt}, 0.5), (std::vector<bool>{false, true}));
}

TEST(AveragePrecision, WorkedExample) {
  EXPECT_NEAR(average_precision({true, false, true}, 2).value(), 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(average_precision({true, false, true}, 2).value(), 0.8333, 1e-4);
}

TEST(AveragePrecision, EdgeCases) {
  EXPECT_EQ(average_precision({true, true}, 2).value(), 1.0);
  EXPECT_EQ(average_precision({}, 3).value(), 0.0);
  EXPECT_EQ(average_precision({false}, 0).value(), 0.0);
  EXPECT_FALSE(average_precision({}, 0).has_value());
}

TEST(Evaluate, PerfectPredictions) {
  const std::vector<GroundTruth> gts{kGt, {"img", 1, {30, 30, 6, 8}}, {"img2", 2, {5, 5, 4, 4}}};
  std::vector<Detection> dets;
  for (const auto& g : gts) dets.push_back({g.image, g.cls, g.box, 0.9});
  const EvalResult r = evaluate(dets, gts);
  EXPECT_EQ(r.map50, 1.0);
  EXPECT_EQ(r.map5095, 1.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  for (const auto& c : r.classes)
    for (const auto& t : c.per_threshold) EXPECT_EQ(t.ap, 1.0);
}

TEST(Evaluate, IouExactlyHalfOnlyCountsAtFirstThreshold) {
  // Detection covers exactly half of the GT: IoU = 50 / 100.
  const std::vector<Detection> dets{{"img", 0, {12.5, 10, 5, 10}, 0.7}};
  EXPECT_EQ(corner_iou(dets[0].box, kGt.box), 0.5);
  const EvalResult r = evaluate(dets, std::vector{kGt});
  EXPECT_EQ(r.map50, 1.0);
  EXPECT_EQ(r.classes[0].per_threshold[1].ap, 0.0);
  EXPECT_NEAR(r.map5095, r.map50 / 10.0, 1e-15);
}

TEST(Evaluate, ClassWithoutGroundTruthIsExcludedFromMean) {
  const std::vector<Detection> dets{{"img", 0, kGt.box, 0.9}, {"img", 5, {1, 1, 1, 1}, 0.9}};
  const EvalResult r = evaluate(dets, std::vector{kGt});
  ASSERT_EQ(r.classes.size(), 2u);
  EXPECT_EQ(r.classes[1].ap50, 0.0);
  EXPECT_EQ(r.map50, 1.0);
}

TEST(Evaluate, OperatingPointCutsOnlyAtConfidenceGroupEnds) {
  const std::vector<Detection> dets{{"img", 0, kGt.box, 0.5}, {"img", 0, {40, 40, 2, 2}, 0.5}};
  const EvalResult r = evaluate(dets, std::vector{kGt});
  EXPECT_EQ(r.precision, 0.5);
  EXPECT_EQ(r.recall, 1.0);
}

TEST(Evaluate, MatchesExhaustiveOracle) {
  Rng rng(31);
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
  const auto thresholds = coco_thresholds();
  for (int trial = 0; trial < 200; ++trial) {
    random_instance(rng, dets, gts);
    const EvalResult r = evaluate(dets, gts);
    const OracleResult o = oracle_evaluate(dets, gts, thresholds);
    ASSERT_EQ(r.classes.size(), o.ap.size());
    for (const auto& c : r.classes)
      for (std::size_t t = 0; t < thresholds.size(); ++t)
        ASSERT_EQ(c.per_threshold[t].ap, o.ap.at(c.cls)[t]) << "trial " << trial;
    for (std::size_t t = 0; t < thresholds.size(); ++t)
      ASSERT_EQ(r.map_per_threshold[t], o.map[t]) << "trial " << trial;
  }
}

TEST(Evaluate, InvariantsOnRandomInstances) {
  Rng rng(32);
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
  for (int trial = 0; trial < 200; ++trial) {
    random_instance(rng, dets, gts);
    const EvalResult r = evaluate(dets, gts);

    double mean = 0.0;
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      mean += r.map_per_threshold[t];
      if (t > 0) {
        EXPECT_LE(r.map_per_threshold[t], r.map_per_threshold[t - 1]);
      }
    }
    EXPECT_NEAR(r.map5095, mean / 10.0, 1e-12);
    for (const auto& c : r.classes) {
      for (double v : {c.precision, c.recall, c.ap50, c.ap5095}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }

    std::vector<Detection> shuffled = dets;
    for (std::size_t i = shuffled.size(); i > 1; --i)
      std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    const EvalResult rs = evaluate(shuffled, gts);
    EXPECT_EQ(rs.map_per_threshold, r.map_per_threshold);

    std::vector<Detection> squashed = dets;
    for (auto& d : squashed) d.conf = std::sqrt(d.conf) * 0.5;
    const EvalResult rq = evaluate(squashed, gts);
    EXPECT_EQ(rq.map_per_threshold, r.map_per_threshold);
  }
}

TEST(Evaluate, RejectsInvalidInput) {
  EXPECT_THROW(evaluate(std::vector<Detection>{{"i", 0, {1, 1, 1, 1}, 1.5}}, {}), ArgumentError);
  EXPECT_THROW(evaluate({}, std::vector<GroundTruth>{{"i", 0, {1, 1, 0, 1}}}), ArgumentError);
}

TEST(JsonLines, RoundTripAndReport) {
  const auto dir = std::filesystem::temp_directory_path() / "detectlab_metrics_test";
  std::filesystem::create_directories(dir);
  const std::vector<GroundTruth> gts{kGt, {"img", 2, {3.25, 4.5, 2, 1}}};
  const std::vector<Detection> dets{{"img", 0, {10, 10, 10, 9}, 0.875}};
  write_ground_truth(dir / "gt.jsonl", gts);
  write_detections(dir / "det.jsonl", dets);
  const auto gts2 = read_ground_truth(dir / "gt.jsonl");
  const auto dets2 = read_detections(dir / "det.jsonl");
  ASSERT_EQ(gts2.size(), 2u);
  EXPECT_EQ(gts2[1].box.cx, 3.25);
  EXPECT_EQ(gts2[1].cls, 2);
  ASSERT_EQ(dets2.size(), 1u);
  EXPECT_EQ(dets2[0].conf, 0.875);

  const EvalResult r = evaluate(dets2, gts2);
  const std::string table = format_table(r, {"normal", "self-explosion", "damage"});
  EXPECT_NE(table.find("All"), std::string::npos);
  EXPECT_NE(table.find("damage"), std::string::npos);
  EXPECT_NE(to_json(r).find("\"map5095\""), std::string::npos);

  std::ofstream(dir / "bad.jsonl") << "{\"image\": \"x\", \"class\": 0}\n";
  EXPECT_THROW(read_ground_truth(dir / "bad.jsonl"), FormatError);
  std::filesystem::remove_all(dir);
}
