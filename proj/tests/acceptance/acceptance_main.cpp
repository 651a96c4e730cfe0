// SPDX-License-Identifier: Apache-2.0
//
// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Usage: acceptance [--only N[,M...]] [--work DIR]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "detectlab/cli/commands.hpp"
#include "detectlab/cli/suites.hpp"
#include "detectlab/data/synth.hpp"
#include "detectlab/detector/train.hpp"
#include "detectlab/loss/bbox.hpp"
#include "detectlab/metrics/eval.hpp"
#include "detectlab/nn/blocks.hpp"
#include "detectlab/rng.hpp"

using namespace detectlab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Floors for criterion 7, frozen from the calibration runs recorded in the
// README (test mAP50 0.0048 baseline, 0.0092 full) at about 85% of the
// measured value to absorb floating-point drift across machines.
constexpr double kBaselineMap50Floor = 0.004;
constexpr double kFullMap50Floor = 0.008;
constexpr double kTrainBudgetSeconds = 20 * 60;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// ------------------------------------------------------------------ oracles

struct Corners {
  double x1, y1, x2, y2;
};

Corners corners(const loss::BBox& b) { return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2}; }

double overlap(double a1, double a2, double b1, double b2) { return std::max(0.0, std::min(a2, b2) - std::max(a1, b1)); }

double oracle_wiou_v1(const loss::BBox& p, const loss::BBox& g) {
  const Corners a = corners(p), b = corners(g);
  const double inter = overlap(a.x1, a.x2, b.x1, b.x2) * overlap(a.y1, a.y2, b.y1, b.y2);
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  const double wg = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double hg = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double dx = (a.x1 + a.x2) / 2 - (b.x1 + b.x2) / 2;
  const double dy = (a.y1 + a.y2) / 2 - (b.y1 + b.y2) / 2;
  return std::exp((dx * dx + dy * dy) / (wg * wg + hg * hg)) * (1.0 - inter / uni);
}

double oracle_iou(const loss::BBox& p, const loss::BBox& g) {
  const Corners a = corners(p), b = corners(g);
  const double inter = overlap(a.x1, a.x2, b.x1, b.x2) * overlap(a.y1, a.y2, b.y1, b.y2);
  return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

// Brute-force evaluator: rank, greedy match by full scan, then the precision
// envelope by a scan over all later ranks.
std::map<int, std::vector<double>> oracle_ap(const std::vector<metrics::Detection>& dets,
                                             const std::vector<metrics::GroundTruth>& gts,
                                             const std::vector<double>& thresholds) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.cls);
  for (const auto& d : dets) classes.insert(d.cls);
  std::map<int, std::vector<double>> out;
  for (int c : classes) {
    std::vector<metrics::Detection> ranked;
    std::copy_if(dets.begin(), dets.end(), std::back_inserter(ranked), [c](const auto& d) { return d.cls == c; });
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return std::make_tuple(-a.conf, a.box.w * a.box.h, a.image, a.box.cx, a.box.cy, a.box.w, a.box.h) <
             std::make_tuple(-b.conf, b.box.w * b.box.h, b.image, b.box.cx, b.box.cy, b.box.w, b.box.h);
    });
    const auto n = static_cast<double>(std::count_if(gts.begin(), gts.end(), [c](const auto& g) { return g.cls == c; }));
    for (double thr : thresholds) {
      std::vector<char> taken(gts.size(), 0);
      std::vector<int> tp;
      for (const auto& d : ranked) {
        int best = -1;
        double best_iou = -1;
        for (std::size_t g = 0; g < gts.size(); ++g)
          if (!taken[g] && gts[g].cls == c && gts[g].image == d.image && oracle_iou(d.box, gts[g].box) > best_iou)
            best_iou = oracle_iou(d.box, gts[g].box), best = static_cast<int>(g);
        const bool hit = best >= 0 && best_iou >= thr;
        if (hit) taken[static_cast<std::size_t>(best)] = 1;
        tp.push_back(hit);
      }
      double ap = 0;
      if (n > 0)
        for (std::size_t k = 0; k < tp.size(); ++k) {
          if (!tp[k]) continue;
          double env = 0;
          for (std::size_t j = k; j < tp.size(); ++j) {
            double hits = 0;
            for (std::size_t q = 0; q <= j; ++q) hits += tp[q];
            env = std::max(env, hits / static_cast<double>(j + 1));
          }
          ap += (1.0 / n) * env;
        }
      out[c].push_back(ap);
    }
  }
  return out;
}

// ------------------------------------------------------------------ criteria

Outcome criterion1() {
  const auto start = Clock::now();
  Rng rng(2024);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const loss::BBox g{rng.uniform(10, 90), rng.uniform(10, 90), rng.uniform(2, 40), rng.uniform(2, 40)};
    const loss::BBox p{g.cx + rng.uniform(-25, 25), g.cy + rng.uniform(-25, 25), rng.uniform(2, 40), rng.uniform(2, 40)};
    worst = std::max(worst, std::abs(loss::wiou_v1(p, g) - oracle_wiou_v1(p, g)));
  }
  const double worked = loss::wiou_v1({1, 1, 2, 2}, {2, 2, 2, 2});
  const double expected = 6.0 / 7.0 * std::exp(1.0 / 9.0);
  const double elapsed = seconds_since(start);
  return {worst <= 1e-6 && std::abs(worked - 0.95788) <= 1e-5 && std::abs(worked - expected) <= 1e-12 && elapsed < 1.0,
          fmt("max |wiou_v1 - oracle| = %.2e over 1000 pairs; worked pair = %.6f; %.3f s", worst, worked, elapsed)};
}

Outcome criterion2() {
  const auto start = Clock::now();
  std::string detail;
  bool pass = true;
  for (const auto& m : cli::gradcheck_modules()) {
    const auto r = cli::module_gradcheck(m, 17, 1e-4);
    pass = pass && r.pass;
    detail += fmt("%s %.1e; ", m.c_str(), r.max_rel_err);
  }
  // Detach semantics: v3 gradient is the gain times the v1 gradient.
  Rng rng(5);
  loss::FocusState focus;
  loss::update_focus(focus, 0.45);
  double worst = 0;
  for (int i = 0; i < 500; ++i) {
    const loss::BBox g{rng.uniform(20, 80), rng.uniform(20, 80), rng.uniform(4, 30), rng.uniform(4, 30)};
    const loss::BBox p{g.cx + rng.uniform(-10, 10), g.cy + rng.uniform(-10, 10), rng.uniform(4, 30), rng.uniform(4, 30)};
    const double r = loss::gradient_gain(loss::outlier_degree(loss::l_iou(p, g), focus), {});
    const auto v1 = loss::box_loss_grad(loss::BoxLoss::kWiou1, p, g, &focus);
    const auto v3 = loss::box_loss_grad(loss::BoxLoss::kWiou3, p, g, &focus);
    for (int k = 0; k < 4; ++k) worst = std::max(worst, std::abs(v3.grad[k] - r * v1.grad[k]));
  }
  const double elapsed = seconds_since(start);
  pass = pass && worst <= 1e-10 && elapsed < 120;
  return {pass, detail + fmt("|g3 - r*g1| max %.1e; %.1f s", worst, elapsed)};
}

Outcome criterion3() {
  const auto start = Clock::now();
  const loss::WIoUParams p{1.9, 3.0};
  const bool at_delta = loss::gradient_gain(3.0, p) == 1.0;
  const bool at_zero = loss::gradient_gain(0.0, p) == 0.0;
  const double beta_star = 1.0 / std::log(1.9);
  double best_beta = 0, best_r = -1;
  bool unimodal = true;
  double prev = -1;
  for (int i = 0; i <= 200000; ++i) {
    const double beta = i * 1e-4;  // [0, 20]
    const double r = loss::gradient_gain(beta, p);
    if (r > best_r) best_r = r, best_beta = beta;
    if (beta > beta_star + 1e-4 && r > prev) unimodal = false;
    if (beta < beta_star - 1e-4 && prev >= 0 && r < prev) unimodal = false;
    prev = r;
  }
  const double elapsed = seconds_since(start);
  return {at_delta && at_zero && unimodal && std::abs(best_beta - beta_star) <= 1e-4 && elapsed < 1.0,
          fmt("r(3)=%g r(0)=%g argmax=%.4f (1/ln 1.9=%.6f) unimodal=%d; %.3f s", loss::gradient_gain(3.0, p),
              loss::gradient_gain(0.0, p), best_beta, beta_star, unimodal, elapsed)};
}

Outcome criterion4() {
  const auto start = Clock::now();
  Rng rng(77);
  const auto thresholds = metrics::coco_thresholds();
  bool equal = true;
  for (int trial = 0; trial < 200 && equal; ++trial) {
    std::vector<metrics::GroundTruth> gts;
    std::vector<metrics::Detection> dets;
    const char* images[] = {"p", "q"};
    auto box = [&] { return loss::BBox{rng.uniform(4, 12), rng.uniform(4, 12), rng.uniform(2, 8), rng.uniform(2, 8)}; };
    for (auto i = rng.below(6); i > 0; --i) gts.push_back({images[rng.below(2)], static_cast<int>(rng.below(2)), box()});
    for (auto i = rng.below(9); i > 0; --i) {
      metrics::Detection d{images[rng.below(2)], static_cast<int>(rng.below(2)), box(), rng.below(4) / 3.0};
      if (!gts.empty() && rng.bernoulli(0.6)) {
        const auto& g = gts[rng.below(gts.size())];
        d.image = g.image;
        d.cls = g.cls;
        d.box = {g.box.cx + rng.uniform(-1, 1), g.box.cy + rng.uniform(-1, 1), g.box.w * rng.uniform(0.7, 1.3),
                 g.box.h * rng.uniform(0.7, 1.3)};
      }
      dets.push_back(d);
    }
    const auto r = metrics::evaluate(dets, gts);
    const auto o = oracle_ap(dets, gts, thresholds);
    if (r.classes.size() != o.size()) equal = false;
    for (const auto& c : r.classes)
      for (std::size_t t = 0; t < thresholds.size(); ++t)
        if (c.per_threshold[t].ap != o.at(c.cls)[t]) equal = false;
  }
  const auto ap = metrics::average_precision(std::vector<bool>{true, false, true}, 2);
  const bool worked = ap && std::abs(*ap - 0.8333333333333334) <= 1e-9;
  const double elapsed = seconds_since(start);
  return {equal && worked && elapsed < 10,
          fmt("200 instances equal to oracle: %s; worked AP = %.10f; %.3f s", equal ? "yes" : "no", ap.value_or(-1), elapsed)};
}

Outcome criterion5() {
  const auto start = Clock::now();
  bool pass = true;
  std::string detail;
  for (Index c : {64, 128, 256}) {
    Rng rng(1);
    nn::ParamStore<float> spp_store, rfb_store, ca_store;
    nn::Sppcspc<float> spp(spp_store, "neck", {c, c}, rng);
    nn::Rfb<float> rfb(rfb_store, "neck", nn::RfbConfig::make_default(c, c), rng);
    nn::CoordAttention<float> ca(ca_store, "ca", {c, 8}, rng);
    const Index s = spp_store.param_count(), r = rfb_store.param_count(), a = ca_store.param_count();
    pass = pass && r < s && a > 0 && r + a > r;
    detail += fmt("C=%lld spp %lld rfb %lld (+ca %lld); ", static_cast<long long>(c), static_cast<long long>(s),
                  static_cast<long long>(r), static_cast<long long>(r + a));
  }
  // The same direction on whole models.
  detector::DetectorConfig cfg;
  cfg.attention = detector::Attention::kNone;
  cfg.neck = detector::Neck::kSppcspc;
  const Index m_spp = detector::Detector(cfg).param_count();
  cfg.neck = detector::Neck::kRfb;
  const Index m_rfb = detector::Detector(cfg).param_count();
  cfg.attention = detector::Attention::kCa;
  const Index m_rfb_ca = detector::Detector(cfg).param_count();
  pass = pass && m_rfb < m_spp && m_rfb_ca > m_rfb;
  const double elapsed = seconds_since(start);
  return {pass && elapsed < 1.0,
          detail + fmt("detector %lld/%lld/%lld; %.3f s", static_cast<long long>(m_spp), static_cast<long long>(m_rfb),
                       static_cast<long long>(m_rfb_ca), elapsed)};
}

Outcome criterion6(const fs::path& work) {
  const auto start = Clock::now();
  std::string detail;
  bool pass = true;
  for (std::uint64_t seed : {42, 43, 44, 45, 46}) {
    cli::LossBenchOptions o;
    o.seed = seed;
    o.steps = 500;
    const auto r = cli::run_loss_bench(o);
    std::ofstream csv(work / ("loss_bench_seed" + std::to_string(seed) + ".csv"));
    cli::write_loss_bench_csv(csv, r);
    const auto ciou = cli::first_step_below(r.curves[0], 0.2);
    const auto wiou3 = cli::first_step_below(r.curves[2], 0.2);
    const bool ok = wiou3 && (!ciou || *wiou3 <= *ciou);
    if (seed == 42) pass = ok;  // the criterion; other seeds are reported
    detail += fmt("seed %llu: wiou3 %lld ciou %lld%s; ", static_cast<unsigned long long>(seed),
                  static_cast<long long>(wiou3.value_or(-1)), static_cast<long long>(ciou.value_or(-1)), ok ? "" : " (inverted)");
  }
  const double elapsed = seconds_since(start);
  return {pass && elapsed < 30, detail + fmt("%.2f s", elapsed)};
}

struct RunSummary {
  double seconds = 0;
  std::vector<detector::EpochLog> history;
  metrics::EvalResult test;
};

RunSummary train_and_score(const fs::path& data, const fs::path& out, const std::string& config_json) {
  fs::create_directories(out);
  const fs::path config_path = out / "config.json";
  std::ofstream(config_path) << config_json;
  const auto start = Clock::now();
  const int code = cli::run_cli({"detectlab", "train", "--config", config_path.string(), "--data", data.string(),
                                 "--out", (out / "run").string(), "--quiet"});
  RunSummary s;
  s.seconds = seconds_since(start);
  if (code != 0) throw std::runtime_error("train exited with " + std::to_string(code));
  const auto ckpt = detector::load_checkpoint(out / "run" / "checkpoint.dlck");
  s.history = ckpt.history;
  auto model = detector::model_from_checkpoint(ckpt);
  s.test = detector::evaluate_model(*model, detector::load_samples(data, "test"), ckpt.config.eval_conf,
                                    ckpt.config.nms_iou, detector::worker_threads())
               .result;
  return s;
}

fs::path dataset_300(const fs::path& work) {
  const fs::path data = work / "synth300";
  if (!fs::exists(data / "dataset.json")) {
    if (cli::run_cli({"detectlab", "synth", "--out", data.string(), "--n", "300", "--seed", "7"}) != 0)
      throw std::runtime_error("synth failed");
  }
  return data;
}

Outcome criterion7(const fs::path& work) {
  const fs::path data = dataset_300(work);
  const auto baseline = train_and_score(data, work / "c7_baseline",
                                        R"({"neck": "sppcspc", "attention": "none", "box_loss": "ciou", "epochs": 30, "seed": 7})");
  const auto full = train_and_score(data, work / "c7_full",
                                    R"({"neck": "rfb", "attention": "ca", "box_loss": "wiou3", "epochs": 30, "seed": 7})");
  bool decreasing = full.history.size() >= 5;
  for (std::size_t e = 1; e < 5 && decreasing; ++e) decreasing = full.history[e].total < full.history[e - 1].total;
  const bool pass = decreasing && full.seconds <= kTrainBudgetSeconds && full.test.map50 >= kFullMap50Floor &&
                    baseline.test.map50 >= kBaselineMap50Floor;
  std::string losses;
  for (std::size_t e = 0; e < std::min<std::size_t>(5, full.history.size()); ++e)
    losses += fmt("%.4f ", full.history[e].total);
  return {pass, fmt("full: %.1f s, loss[0..4] %s(strictly decreasing: %s), test mAP50 %.4f (floor %.3f), mAP50-95 %.4f; "
                    "baseline: %.1f s, test mAP50 %.4f (floor %.3f), mAP50-95 %.4f",
                    full.seconds, losses.c_str(), decreasing ? "yes" : "no", full.test.map50, kFullMap50Floor,
                    full.test.map5095, baseline.seconds, baseline.test.map50, kBaselineMap50Floor, baseline.test.map5095)};
}

Outcome criterion8(const fs::path& work) {
  const fs::path data = dataset_300(work);
  const fs::path a = work / "c8_a", b = work / "c8_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto cfg = R"({"epochs": 3, "seed": 11})";
  train_and_score(data, a, cfg);
  train_and_score(data, b, cfg);
  const bool same_ckpt = file_bytes(a / "run" / "checkpoint.dlck") == file_bytes(b / "run" / "checkpoint.dlck");
  const bool same_csv = file_bytes(a / "run" / "train.csv") == file_bytes(b / "run" / "train.csv");
  return {same_ckpt && same_csv, fmt("checkpoints identical: %s; CSV logs identical: %s", same_ckpt ? "yes" : "no",
                                     same_csv ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path work = fs::current_path() / "acceptance_work";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
    } else if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only N[,M...]] [--work DIR]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, criterion5},
      {6, [&] { return criterion6(work); }},
      {7, [&] { return criterion7(work); }},
      {8, [&] { return criterion8(work); }},
  };
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
