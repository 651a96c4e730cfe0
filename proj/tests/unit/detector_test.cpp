// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "detectlab/detector/train.hpp"
#include "detectlab/grad_check.hpp"
#include "detectlab/rng.hpp"

using namespace detectlab;
using namespace detectlab::detector;
namespace fs = std::filesystem;

namespace {

DetectorConfig tiny_config() {
  DetectorConfig c;
  c.input_size = 64;
  c.grid = 4;
  c.base_channels = 4;
  c.stage_depth = 1;
  c.ca_reduction = 4;
  c.epochs = 3;
  c.batch_size = 4;
  return c;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("detectlab_detector_test_" + name);
  fs::remove_all(dir);
  return dir;
}

// A 64x64 dataset, shared by the training tests.
const fs::path& tiny_dataset() {
  static const fs::path dir = [] {
    const fs::path d = scratch("data");
    data::SceneSpec spec;
    spec.canvas = 64;
    spec.min_strings = 1;
    spec.max_strings = 1;
    spec.min_discs = 4;
    spec.max_discs = 5;
    data::build_dataset(spec, 20, d, 42);
    return d;
  }();
  return dir;
}

// Predictions holding one value per channel everywhere.
TensorD constant_grid(const DetectorConfig& c, Index n, double obj, double cls) {
  const Index ch = 5 + c.classes;
  TensorD t = TensorD::zeros({n, c.grid, c.grid, ch});
  for (Index cell = 0; cell < n * c.grid * c.grid; ++cell) {
    t[cell * ch + 4] = obj;
    for (Index k = 0; k < c.classes; ++k) t[cell * ch + 5 + k] = cls;
  }
  return t;
}

TensorD random_grid(const DetectorConfig& c, Index n, std::uint64_t seed) {
  Rng rng(seed);
  TensorD t = TensorD::zeros({n, c.grid, c.grid, 5 + c.classes});
  for (auto& v : t.data()) v = rng.uniform(-1.5, 1.5);
  return t;
}

std::vector<TargetGrid> some_targets(const DetectorConfig& c) {
  const std::vector<data::Annotation> a{{{20, 12, 10, 18}, 0}, {{45, 50, 14, 6}, 2}};
  const std::vector<data::Annotation> b{{{33, 30, 20, 24}, 1}};
  return {assign_targets(a, c), assign_targets(b, c)};
}

}  // namespace

TEST(DetectorModel, OutputShapeForEveryConfiguration) {
  for (auto neck : {Neck::kSppcspc, Neck::kRfb})
    for (auto att : {Attention::kNone, Attention::kCa}) {
      DetectorConfig c = tiny_config();
      c.neck = neck;
      c.attention = att;
      Detector m(c);
      NoGradGuard no_grad;
      const auto out = m.forward(TensorF::zeros({2, 3, 64, 64}), false);
      EXPECT_EQ(out.grid.shape(), (Shape{2, 4, 4, 8}));
      EXPECT_EQ(out.attention.has_value(), att == Attention::kCa);
    }
}

TEST(DetectorModel, RejectsWrongInputShape) {
  Detector m(tiny_config());
  EXPECT_THROW(m.forward(TensorF::zeros({1, 3, 32, 32}), false), ShapeError);
}

TEST(DetectorModel, NeckAndAttentionParameterDirection) {
  for (Index base : {4, 8, 16}) {
    DetectorConfig c = tiny_config();
    c.base_channels = base;
    c.attention = Attention::kNone;
    c.neck = Neck::kSppcspc;
    const Index spp = Detector(c).param_count();
    c.neck = Neck::kRfb;
    const Index rfb = Detector(c).param_count();
    c.attention = Attention::kCa;
    const Index rfb_ca = Detector(c).param_count();
    EXPECT_LT(rfb, spp);
    EXPECT_GT(rfb_ca, rfb);
  }
}

TEST(DetectorModel, ObjectnessPriorBias) {
  Detector m(DetectorConfig{});
  // p = 2 / 64 objects per cell.
  EXPECT_NEAR(m.store().get("head.bias")[4], std::log((2.0 / 64) / (1 - 2.0 / 64)), 1e-6);
}

TEST(Targets, CenterOfImageFallsInCellFourFour) {
  const DetectorConfig c;
  const std::vector<data::Annotation> gts{{{64, 64, 10, 10}, 1}};
  const auto t = assign_targets(gts, c);
  EXPECT_EQ(t.positives(), 1);
  EXPECT_EQ(t.cls[4 * 8 + 4], 1);
}

TEST(Targets, HalfOpenCellsAndClamping) {
  const DetectorConfig c;
  const std::vector<data::Annotation> gts{{{15.999, 16.0, 4, 4}, 0}, {{128.0, 127.0, 4, 4}, 2}};
  const auto t = assign_targets(gts, c);
  EXPECT_EQ(t.cls[1 * 8 + 0], 0);
  EXPECT_EQ(t.cls[7 * 8 + 7], 2);
}

TEST(Targets, NoGroundTruthMeansNoPositives) {
  const auto t = assign_targets({}, DetectorConfig{});
  EXPECT_EQ(t.positives(), 0);
}

TEST(Targets, LargerBoxWinsSharedCell) {
  const DetectorConfig c;
  const std::vector<data::Annotation> gts{{{20, 20, 4, 4}, 1}, {{22, 21, 10, 12}, 2}, {{18, 18, 6, 6}, 0}};
  const auto t = assign_targets(gts, c);
  EXPECT_EQ(t.positives(), 1);
  EXPECT_EQ(t.cls[1 * 8 + 1], 2);
  EXPECT_EQ(t.box[1 * 8 + 1].w, 10);
}

TEST(Targets, RejectsBadClass) {
  const std::vector<data::Annotation> gts{{{20, 20, 4, 4}, 3}};
  EXPECT_THROW(assign_targets(gts, DetectorConfig{}), ArgumentError);
}

TEST(DetectorLossTest, ZeroPositivesLeavesOnlyObjectness) {
  const DetectorConfig c = tiny_config();
  const std::vector<TargetGrid> targets{assign_targets({}, c)};
  loss::FocusState focus;
  loss::update_focus(focus, 0.5);
  const auto l = detector_loss(random_grid(c, 1, 3), targets, c, &focus, true);
  EXPECT_EQ(l.parts.box, 0.0);
  EXPECT_EQ(l.parts.cls, 0.0);
  EXPECT_GT(l.parts.obj, 0.0);
  EXPECT_EQ(l.parts.total, c.w_obj * l.parts.obj);
  EXPECT_EQ(focus.steps, 1);  // nothing to absorb without positives
}

TEST(DetectorLossTest, ObjectnessIsMeanBinaryCrossEntropy) {
  DetectorConfig c = tiny_config();
  c.box_loss = loss::BoxLoss::kCiou;
  const std::vector<TargetGrid> targets{assign_targets({}, c)};
  const auto l = detector_loss(constant_grid(c, 1, 0.3, 0.0), targets, c, nullptr, false);
  // Target 0 everywhere: -log(1 - sigmoid(0.3)) = log(1 + e^0.3).
  EXPECT_NEAR(l.parts.obj, std::log(1 + std::exp(0.3)), 1e-12);
}

TEST(DetectorLossTest, PerfectPredictionDrivesLossToZero) {
  for (auto kind : {loss::BoxLoss::kCiou, loss::BoxLoss::kWiou1, loss::BoxLoss::kWiou3}) {
    DetectorConfig c = tiny_config();
    c.box_loss = kind;
    const auto targets = some_targets(c);
    TensorD pred = constant_grid(c, 2, -30.0, -30.0);
    const double cs = static_cast<double>(c.cell_size());
    for (Index i = 0; i < 2; ++i)
      for (Index cell = 0; cell < c.grid * c.grid; ++cell) {
        const auto& tg = targets[static_cast<std::size_t>(i)];
        if (tg.cls[cell] < 0) continue;
        const Index base = (i * c.grid * c.grid + cell) * 8;
        const auto t = encode_cell(tg.box[cell], cell / c.grid, cell % c.grid, cs);
        for (int k = 0; k < 4; ++k) pred[base + k] = t[k];
        pred[base + 4] = 30.0;
        pred[base + 5 + tg.cls[cell]] = 30.0;
      }
    loss::FocusState focus;
    const auto l = detector_loss(pred, targets, c, &focus, true);
    EXPECT_EQ(l.parts.positives, 3);
    EXPECT_LT(l.parts.box, 1e-9);
    EXPECT_LT(l.parts.total, 1e-9);
  }
}

TEST(DetectorLossTest, TotalIsExactWeightedSum) {
  DetectorConfig c = tiny_config();
  c.w_box = 2.5;
  c.w_obj = 0.7;
  c.w_cls = 1.3;
  loss::FocusState focus;
  const auto l = detector_loss(random_grid(c, 2, 4), some_targets(c), c, &focus, true);
  EXPECT_EQ(l.parts.total, c.w_box * l.parts.box + c.w_obj * l.parts.obj + c.w_cls * l.parts.cls);
  EXPECT_EQ(l.total.item(), l.parts.total);
}

TEST(DetectorLossTest, SwitchingBoxLossChangesOnlyTheBoxTerm) {
  DetectorConfig c = tiny_config();
  const TensorD pred = random_grid(c, 2, 5);
  const auto targets = some_targets(c);
  c.box_loss = loss::BoxLoss::kCiou;
  const auto a = detector_loss(pred, targets, c, nullptr, false);
  c.box_loss = loss::BoxLoss::kWiou1;
  const auto b = detector_loss(pred, targets, c, nullptr, false);
  EXPECT_NE(a.parts.box, b.parts.box);
  EXPECT_EQ(a.parts.obj, b.parts.obj);
  EXPECT_EQ(a.parts.cls, b.parts.cls);
}

TEST(DetectorLossTest, WiouV3NeedsFocusStateAndUpdatesIt) {
  DetectorConfig c = tiny_config();
  const TensorD pred = random_grid(c, 2, 6);
  const auto targets = some_targets(c);
  EXPECT_THROW(detector_loss(pred, targets, c, nullptr, true), ArgumentError);
  loss::FocusState focus;
  EXPECT_THROW(detector_loss(pred, targets, c, &focus, false), StateError);
  const auto l = detector_loss(pred, targets, c, &focus, true);
  EXPECT_EQ(focus.steps, 1);
  EXPECT_EQ(focus.ema, l.parts.mean_l_iou);
}

TEST(DetectorLossTest, NonFiniteInputAborts) {
  DetectorConfig c = tiny_config();
  c.box_loss = loss::BoxLoss::kWiou1;
  TensorD pred = random_grid(c, 2, 7);
  pred[4] = std::nan("");
  EXPECT_THROW(detector_loss(pred, some_targets(c), c, nullptr, false), NumericError);
}

TEST(DetectorLossTest, ObjectnessAndClassGradientsMatchFiniteDifferences) {
  DetectorConfig c = tiny_config();
  c.w_box = 0.0;
  c.box_loss = loss::BoxLoss::kCiou;
  const auto targets = some_targets(c);
  auto f = [&](const std::vector<TensorD>& in) { return detector_loss(in[0], targets, c, nullptr, false).total; };
  const GradCheckOptions opts{.step = 1e-5, .tol = 1e-6, .max_coords = 256, .seed = 1};
  const auto report = grad_check(f, {random_grid(c, 2, 8)}, opts);
  EXPECT_TRUE(report.pass) << report.worst;
}

TEST(DetectorLossTest, BoxGradientFollowsTheDecodeChainRule) {
  for (auto kind : {loss::BoxLoss::kCiou, loss::BoxLoss::kWiou1, loss::BoxLoss::kWiou3}) {
    DetectorConfig c = tiny_config();
    c.box_loss = kind;
    c.w_obj = 0.0;
    c.w_cls = 0.0;
    const auto targets = some_targets(c);
    TensorD pred = random_grid(c, 2, 9);
    pred.set_requires_grad(true);
    loss::FocusState focus;
    loss::update_focus(focus, 0.6);
    const auto l = detector_loss(pred, targets, c, &focus, false);
    l.total.backward();

    // Independent route: numeric Jacobian of the decode times the per-pair
    // loss gradient, scaled by w_box / positives.
    const double cs = static_cast<double>(c.cell_size());
    const double h = 1e-6;
    for (Index i = 0; i < 2; ++i)
      for (Index cell = 0; cell < c.grid * c.grid; ++cell) {
        const auto& tg = targets[static_cast<std::size_t>(i)];
        const Index base = (i * c.grid * c.grid + cell) * 8;
        const Index r = cell / c.grid, q = cell % c.grid;
        std::array<double, 4> t{pred[base], pred[base + 1], pred[base + 2], pred[base + 3]};
        if (tg.cls[cell] < 0) {
          for (int k = 0; k < 4; ++k) EXPECT_EQ(pred.grad()[base + k], 0.0);
          continue;
        }
        const auto box = decode_cell(t, r, q, cs);
        const auto lg = loss::box_loss_grad(kind, box, tg.box[cell], &focus);
        for (int k = 0; k < 4; ++k) {
          auto tp = t, tm = t;
          tp[k] += h;
          tm[k] -= h;
          const auto bp = decode_cell(tp, r, q, cs), bm = decode_cell(tm, r, q, cs);
          const std::array<double, 4> dbox{(bp.cx - bm.cx) / (2 * h), (bp.cy - bm.cy) / (2 * h),
                                           (bp.w - bm.w) / (2 * h), (bp.h - bm.h) / (2 * h)};
          double expect = 0.0;
          for (int j = 0; j < 4; ++j) expect += lg.grad[j] * dbox[j];
          expect *= c.w_box / 3.0;
          EXPECT_LE(relative_error(pred.grad()[base + k], expect), 1e-6)
              << loss::box_loss_name(kind) << " cell " << cell << " coord " << k;
        }
      }
  }
}

TEST(Decode, ZeroOffsetsLandOnCellMidpoint) {
  const std::array<double, 4> t{0, 0, 0, 0};
  const auto b = decode_cell(t, 2, 5, 16);
  EXPECT_EQ(b.cx, 5.5 * 16);
  EXPECT_EQ(b.cy, 2.5 * 16);
  EXPECT_EQ(b.w, 16);
  EXPECT_EQ(b.h, 16);
}

TEST(Decode, CenterStaysInCellForExtremeLogits) {
  for (double v : {-50.0, -5.0, 5.0, 50.0}) {
    const std::array<double, 4> t{v, -v, v, -v};
    const auto b = decode_cell(t, 1, 1, 16);
    EXPECT_GE(b.cx, 16);
    EXPECT_LE(b.cx, 32);
    EXPECT_GT(b.w, 0);
    EXPECT_GT(b.h, 0);
  }
}

TEST(Decode, EncodeDecodeRoundTrip) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const loss::BBox box{rng.uniform(0.5, 127.5), rng.uniform(0.5, 127.5), rng.uniform(2, 60), rng.uniform(2, 60)};
    const Index r = static_cast<Index>(box.cy / 16), q = static_cast<Index>(box.cx / 16);
    const auto t = encode_cell(box, r, q, 16);
    const auto back = decode_cell(t, r, q, 16);
    EXPECT_NEAR(back.cx, box.cx, 1e-4);
    EXPECT_NEAR(back.cy, box.cy, 1e-4);
    EXPECT_NEAR(back.w, box.w, 1e-4);
    EXPECT_NEAR(back.h, box.h, 1e-4);
  }
}

TEST(Decode, VeryNegativeObjectnessYieldsNothing) {
  const DetectorConfig c;
  TensorF pred = tensor_cast<float>(constant_grid(c, 1, -40.0, 5.0));
  EXPECT_TRUE(decode(pred, c, 0.25, 0.5).front().empty());
}

TEST(Decode, ConfidenceIsObjectnessTimesBestClass) {
  const DetectorConfig c;
  TensorF pred = tensor_cast<float>(constant_grid(c, 1, -40.0, -40.0));
  const Index base = (3 * 8 + 6) * 8;
  pred[base + 4] = 1.0f;
  pred[base + 5] = 0.2f;
  pred[base + 6] = 2.0f;
  const auto dets = decode(pred, c, 0.25, 0.5).front();
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].cls, 1);
  EXPECT_NEAR(dets[0].conf, 1 / (1 + std::exp(-1.0)) / (1 + std::exp(-2.0)), 1e-7);
  EXPECT_EQ(dets[0].box.cx, 6.5 * 16);
  EXPECT_EQ(dets[0].box.cy, 3.5 * 16);
}

TEST(Nms, IdenticalBoxesKeepOne) {
  const loss::BBox b{30, 30, 10, 10};
  const auto kept = nms({{"a", 0, b, 0.6}, {"a", 0, b, 0.9}}, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].conf, 0.9);
}

TEST(Nms, IsPerClassAndRespectsThreshold) {
  const loss::BBox a{30, 30, 10, 10}, shifted{33, 30, 10, 10}, far{33, 30, 10, 10};
  // IoU(a, shifted) = 7/13 > 0.5; a different class is never suppressed.
  const auto kept = nms({{"x", 0, a, 0.9}, {"x", 0, shifted, 0.8}, {"x", 1, far, 0.7}}, 0.5);
  EXPECT_EQ(kept.size(), 2u);
  EXPECT_EQ(nms({{"x", 0, a, 0.9}, {"x", 0, shifted, 0.8}}, 0.6).size(), 2u);
}

TEST(Schedule, WarmupThenCosineToFloor) {
  DetectorConfig c;
  c.lr = 0.1;
  c.lr_final_fraction = 0.05;
  c.warmup_epochs = 2;
  c.epochs = 10;
  EXPECT_NEAR(learning_rate(c, 0, 0, 10), 0.1 / 20, 1e-15);
  EXPECT_NEAR(learning_rate(c, 1, 9, 10), 0.1 * (0.05 + 0.95 * 0.5 * (1 + std::cos(M_PI * 0.1))), 1e-15);
  EXPECT_NEAR(learning_rate(c, 5, 3, 10), 0.1 * (0.05 + 0.95 * 0.5), 1e-15);
  for (Index e = 3; e < 10; ++e) EXPECT_LT(learning_rate(c, e, 0, 10), learning_rate(c, e - 1, 0, 10));
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  DetectorConfig c = tiny_config();
  c.neck = Neck::kSppcspc;
  c.box_loss = loss::BoxLoss::kCiou;
  c.lr = 0.0375;
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_THROW(config_from_json(R"({"lr": 0.1, "momentun": 0.9})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"neck": "fpn"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"input_size": 100})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"classes": 0})"), ConfigError);
  EXPECT_THROW(config_from_json("[1,2]"), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = scratch("ckpt");
  fs::create_directories(dir);
  Detector m(tiny_config());
  Checkpoint ck;
  ck.config = m.config();
  ck.focus.ema = 0.123456789;
  ck.focus.steps = 17;
  ck.epoch = 2;
  ck.step = 40;
  ck.history.push_back({1, 0.1, 0.2, 0.3, 1.0 / 3.0, 0.5, 0.25, 0.125, 0.0625});
  ck.tensors = model_tensors(m);
  save_checkpoint(dir / "a.dlck", ck);
  const auto back = load_checkpoint(dir / "a.dlck");
  save_checkpoint(dir / "b.dlck", back);
  EXPECT_EQ(file_bytes(dir / "a.dlck"), file_bytes(dir / "b.dlck"));
  EXPECT_EQ(back.focus.ema, ck.focus.ema);
  EXPECT_EQ(back.history[0].total, 1.0 / 3.0);

  Detector other(tiny_config());
  load_model_tensors(other, back);
  for (const auto& [name, t] : m.store().params())
    for (Index i = 0; i < t.numel(); ++i) EXPECT_EQ(other.store().get(name)[i], t[i]) << name;
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const fs::path dir = scratch("corrupt");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.dlck") << "NOPE";
  EXPECT_THROW(load_checkpoint(dir / "bad.dlck"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.dlck"), FormatError);
}

TEST(Training, OneEpochSmokeRunIsFinite) {
  DetectorConfig c = tiny_config();
  c.epochs = 1;
  TrainOptions o;
  o.out_dir = scratch("smoke");
  const auto r = train(c, tiny_dataset(), o);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.history[0].total));
  EXPECT_TRUE(fs::exists(r.checkpoint));
  std::ifstream csv(r.csv);
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "epoch,box,obj,cls,total,precision,recall,map50,map5095");
}

TEST(Training, LossDecreasesOverFiveEpochs) {
  DetectorConfig c = tiny_config();
  c.epochs = 6;
  c.seed = 42;
  c.lr = 0.02;
  TrainOptions o;
  o.out_dir = scratch("decrease");
  const auto r = train(c, tiny_dataset(), o);
  EXPECT_LT(r.history[5].total, r.history[0].total);
}

TEST(Training, IdenticalRunsAreBitIdentical) {
  const DetectorConfig c = tiny_config();
  TrainOptions a, b;
  a.out_dir = scratch("det_a");
  b.out_dir = scratch("det_b");
  train(c, tiny_dataset(), a);
  train(c, tiny_dataset(), b);
  EXPECT_EQ(file_bytes(a.out_dir / "checkpoint.dlck"), file_bytes(b.out_dir / "checkpoint.dlck"));
  EXPECT_EQ(file_bytes(a.out_dir / "train.csv"), file_bytes(b.out_dir / "train.csv"));
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  const DetectorConfig c = tiny_config();
  TrainOptions full, part, rest;
  full.out_dir = scratch("full");
  part.out_dir = scratch("part");
  part.stop_after = 1;
  train(c, tiny_dataset(), full);
  const auto first = train(c, tiny_dataset(), part);
  EXPECT_EQ(first.epochs_completed, 1);
  rest.out_dir = part.out_dir;
  rest.resume = first.checkpoint;
  const auto second = train(c, tiny_dataset(), rest);
  EXPECT_EQ(second.epochs_completed, 3);
  EXPECT_EQ(file_bytes(full.out_dir / "checkpoint.dlck"), file_bytes(part.out_dir / "checkpoint.dlck"));
  EXPECT_EQ(file_bytes(full.out_dir / "train.csv"), file_bytes(part.out_dir / "train.csv"));
}

TEST(Training, ResumeRejectsDifferentConfig) {
  DetectorConfig c = tiny_config();
  c.epochs = 1;
  TrainOptions o;
  o.out_dir = scratch("mismatch");
  const auto r = train(c, tiny_dataset(), o);
  c.lr = 0.5;
  o.resume = r.checkpoint;
  EXPECT_THROW(train(c, tiny_dataset(), o), ConfigError);
}

TEST(Evaluation, ThreadCountDoesNotChangeResults) {
  Detector m(tiny_config());
  const auto samples = load_samples(tiny_dataset(), "train");
  const auto one = evaluate_model(m, samples, 0.001, 0.5, 1);
  const auto four = evaluate_model(m, samples, 0.001, 0.5, 4);
  ASSERT_EQ(one.detections.size(), four.detections.size());
  for (std::size_t i = 0; i < one.detections.size(); ++i) EXPECT_EQ(one.detections[i].conf, four.detections[i].conf);
  EXPECT_EQ(one.result.map5095, four.result.map5095);
}
