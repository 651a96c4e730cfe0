// SPDX-License-Identifier: Apache-2.0
#include "detectlab/metrics/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "detectlab/errors.hpp"

namespace detectlab::metrics {

namespace {

using Key = std::pair<std::string, int>;  // (image, class)

std::map<Key, std::vector<std::size_t>> group_ground_truth(std::span<const GroundTruth> gts) {
  std::map<Key, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < gts.size(); ++i) groups[{gts[i].image, gts[i].cls}].push_back(i);
  return groups;
}

// Ranked TP flags for every detection, computed once per IoU threshold.
std::vector<bool> ranked_flags(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                               const std::vector<std::size_t>& order, double iou_thresh) {
  const auto groups = group_ground_truth(gts);
  std::vector<bool> taken(gts.size(), false);
  std::vector<bool> flags(order.size(), false);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Detection& d = dets[order[r]];
    auto it = groups.find({d.image, d.cls});
    if (it == groups.end()) continue;
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t g : it->second) {
      if (taken[g]) continue;
      const double v = loss::iou(d.box, gts[g].box);
      if (v > best) best = v, best_idx = g;  // strict: lowest index wins ties
    }
    if (best >= iou_thresh) {
      taken[best_idx] = true;
      flags[r] = true;
    }
  }
  return flags;
}

struct OperatingPoint {
  double precision = 0.0;
  double recall = 0.0;
  double conf = 0.0;
};

// Best F1 over cuts placed only at the end of equal-confidence groups, since
// a confidence threshold cannot separate detections that share a score.
OperatingPoint best_f1(const std::vector<bool>& flags, const std::vector<double>& confs,
                       std::size_t num_gt) {
  OperatingPoint best;
  if (num_gt == 0) return best;
  double best_f1 = -1.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < flags.size(); ++k) {
    tp += flags[k] ? 1 : 0;
    if (k + 1 < flags.size() && confs[k + 1] == confs[k]) continue;
    const double p = static_cast<double>(tp) / static_cast<double>(k + 1);
    const double r = static_cast<double>(tp) / static_cast<double>(num_gt);
    const double f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    if (f1 > best_f1) {
      best_f1 = f1;
      best = {p, r, confs[k]};
    }
  }
  return best;
}

nlohmann::json box_record(const std::string& image, int cls, const BBox& b) {
  return {{"image", image}, {"class", cls}, {"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}};
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void parse_common(const nlohmann::json& j, std::string& image, int& cls, BBox& box) {
  image = j.at("image").get<std::string>();
  cls = j.at("class").get<int>();
  if (cls < 0) throw ArgumentError("negative class id");
  box = {j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("w").get<double>(),
         j.at("h").get<double>()};
  box.validate();
}

std::string class_label(int cls, const std::vector<std::string>& names) {
  if (cls >= 0 && static_cast<std::size_t>(cls) < names.size()) return names[cls];
  return std::to_string(cls);
}

}  // namespace

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50.0 + 5.0 * i) / 100.0);
  return t;
}

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.conf != b.conf) return a.conf > b.conf;
  const double area_a = a.box.area(), area_b = b.box.area();
  if (area_a != area_b) return area_a < area_b;
  return std::tie(a.image, a.cls, a.box.cx, a.box.cy, a.box.w, a.box.h) <
         std::tie(b.image, b.cls, b.box.cx, b.box.cy, b.box.w, b.box.h);
}

std::vector<std::size_t> rank_detections(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ranks_before(dets[a], dets[b]); });
  return order;
}

std::vector<bool> match_detections(std::span<const Detection> dets,
                                   std::span<const GroundTruth> gts, double iou_thresh) {
  const auto order = rank_detections(dets);
  const auto ranked = ranked_flags(dets, gts, order, iou_thresh);
  std::vector<bool> flags(dets.size(), false);
  for (std::size_t r = 0; r < order.size(); ++r) flags[order[r]] = ranked[r];
  return flags;
}

std::optional<double> average_precision(const std::vector<bool>& ranked_flags, std::size_t num_gt) {
  if (num_gt == 0) return ranked_flags.empty() ? std::nullopt : std::optional<double>(0.0);
  const std::size_t n = ranked_flags.size();
  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += ranked_flags[k] ? 1 : 0;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  // Recall only moves at true positives, by 1/num_gt each time.
  const double step = 1.0 / static_cast<double>(num_gt);
  double ap = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (ranked_flags[k]) ap += step * precision[k];
  return ap;
}

EvalResult evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                    const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ArgumentError("evaluate: no IoU thresholds");
  for (const Detection& d : dets) {
    d.box.validate();
    if (!(d.conf >= 0.0 && d.conf <= 1.0)) throw ArgumentError("confidence outside [0,1]");
  }
  for (const GroundTruth& g : gts) g.box.validate();

  EvalResult result;
  result.thresholds = thresholds;
  result.num_gt = gts.size();
  const auto half = std::find(thresholds.begin(), thresholds.end(), 0.5);
  const std::size_t op_index =
      half == thresholds.end() ? 0 : static_cast<std::size_t>(half - thresholds.begin());

  std::set<int> classes;
  std::map<int, std::size_t> gt_count, det_count;
  for (const GroundTruth& g : gts) classes.insert(g.cls), ++gt_count[g.cls];
  for (const Detection& d : dets) classes.insert(d.cls), ++det_count[d.cls];

  const auto order = rank_detections(dets);
  std::vector<std::vector<bool>> flags_at;  // per threshold, ranked
  for (double thr : thresholds) flags_at.push_back(ranked_flags(dets, gts, order, thr));

  result.map_per_threshold.assign(thresholds.size(), 0.0);
  std::size_t classes_with_gt = 0;
  for (int cls : classes) {
    ClassResult cr;
    cr.cls = cls;
    cr.num_gt = gt_count[cls];
    cr.num_det = det_count[cls];
    std::vector<double> confs;
    for (std::size_t r = 0; r < order.size(); ++r)
      if (dets[order[r]].cls == cls) confs.push_back(dets[order[r]].conf);

    double ap_sum = 0.0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::vector<bool> flags;
      for (std::size_t r = 0; r < order.size(); ++r)
        if (dets[order[r]].cls == cls) flags.push_back(flags_at[t][r]);
      ThresholdStats ts;
      ts.iou_thresh = thresholds[t];
      ts.tp = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
      ts.fp = flags.size() - ts.tp;
      ts.fn = cr.num_gt - ts.tp;
      ts.ap = average_precision(flags, cr.num_gt).value_or(0.0);
      ap_sum += ts.ap;
      cr.per_threshold.push_back(ts);
      if (t == op_index) {
        const OperatingPoint op = best_f1(flags, confs, cr.num_gt);
        cr.precision = op.precision;
        cr.recall = op.recall;
        cr.best_f1_conf = op.conf;
        cr.ap50 = ts.ap;
      }
    }
    cr.ap5095 = ap_sum / static_cast<double>(thresholds.size());

    if (cr.num_gt > 0) {
      ++classes_with_gt;
      for (std::size_t t = 0; t < thresholds.size(); ++t)
        result.map_per_threshold[t] += cr.per_threshold[t].ap;
      result.precision += cr.precision;
      result.recall += cr.recall;
    }
    result.classes.push_back(std::move(cr));
  }

  if (classes_with_gt > 0) {
    const double n = static_cast<double>(classes_with_gt);
    for (double& m : result.map_per_threshold) m /= n;
    result.precision /= n;
    result.recall /= n;
    result.map50 = result.map_per_threshold[op_index];
    double s = 0.0;
    for (double m : result.map_per_threshold) s += m;
    result.map5095 = s / static_cast<double>(thresholds.size());
  }
  return result;
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::vector<Detection> out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    Detection d;
    parse_common(j, d.image, d.cls, d.box);
    d.conf = j.at("conf").get<double>();
    if (!(d.conf >= 0.0 && d.conf <= 1.0)) throw ArgumentError("confidence outside [0,1]");
    out.push_back(std::move(d));
  });
  return out;
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
  std::vector<GroundTruth> out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    GroundTruth g;
    parse_common(j, g.image, g.cls, g.box);
    out.push_back(std::move(g));
  });
  return out;
}

void write_detections(const std::filesystem::path& path, std::span<const Detection> dets) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const Detection& d : dets) {
    nlohmann::json j = box_record(d.image, d.cls, d.box);
    j["conf"] = d.conf;
    out << j.dump() << '\n';
  }
}

void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruth> gts) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const GroundTruth& g : gts) out << box_record(g.image, g.cls, g.box).dump() << '\n';
}

std::string to_json(const EvalResult& result, const std::vector<std::string>& class_names) {
  nlohmann::json j;
  j["thresholds"] = result.thresholds;
  j["all"] = {{"labels", result.num_gt},         {"precision", result.precision},
              {"recall", result.recall},         {"map50", result.map50},
              {"map5095", result.map5095},       {"map_per_threshold", result.map_per_threshold}};
  j["classes"] = nlohmann::json::array();
  for (const ClassResult& c : result.classes) {
    nlohmann::json per = nlohmann::json::array();
    for (const ThresholdStats& t : c.per_threshold)
      per.push_back({{"iou", t.iou_thresh}, {"ap", t.ap}, {"tp", t.tp}, {"fp", t.fp}, {"fn", t.fn}});
    j["classes"].push_back({{"class", c.cls},
                            {"name", class_label(c.cls, class_names)},
                            {"labels", c.num_gt},
                            {"detections", c.num_det},
                            {"precision", c.precision},
                            {"recall", c.recall},
                            {"best_f1_conf", c.best_f1_conf},
                            {"ap50", c.ap50},
                            {"ap5095", c.ap5095},
                            {"per_threshold", per}});
  }
  return j.dump(2);
}

std::string format_table(const EvalResult& result, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %8s %10s %10s %10s %12s\n", "Type", "Labels",
                "P (%)", "R (%)", "mAP50 (%)", "mAP50-95 (%)");
  os << line;
  auto row = [&](const std::string& name, std::size_t labels, double p, double r, double m50,
                 double m5095) {
    std::snprintf(line, sizeof line, "%-16s %8zu %10.1f %10.1f %10.1f %12.1f\n", name.c_str(),
                  labels, 100 * p, 100 * r, 100 * m50, 100 * m5095);
    os << line;
  };
  row("All", result.num_gt, result.precision, result.recall, result.map50, result.map5095);
  for (const ClassResult& c : result.classes)
    row(class_label(c.cls, class_names), c.num_gt, c.precision, c.recall, c.ap50, c.ap5095);
  return os.str();
}

}  // namespace detectlab::metrics
