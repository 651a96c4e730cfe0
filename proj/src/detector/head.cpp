// SPDX-License-Identifier: Apache-2.0
#include "detectlab/detector/head.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "detectlab/errors.hpp"

namespace detectlab::detector {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Binary cross-entropy on a logit, stable for large |x|.
double bce_logit(double x, double target) {
  return std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
}

Index cell_of(double coord, double cell_size, Index grid) {
  const auto c = static_cast<Index>(std::floor(coord / cell_size));
  return std::clamp<Index>(c, 0, grid - 1);
}

}  // namespace

Index TargetGrid::positives() const {
  return static_cast<Index>(std::count_if(cls.begin(), cls.end(), [](int c) { return c >= 0; }));
}

TargetGrid assign_targets(std::span<const data::Annotation> gts, const DetectorConfig& config) {
  const Index s = config.grid;
  const auto cs = static_cast<double>(config.cell_size());
  TargetGrid t;
  t.grid = s;
  t.cls.assign(static_cast<std::size_t>(s * s), -1);
  t.box.assign(static_cast<std::size_t>(s * s), loss::BBox{});
  for (const auto& gt : gts) {
    gt.box.validate();
    if (gt.cls < 0 || gt.cls >= config.classes)
      throw ArgumentError("ground-truth class " + std::to_string(gt.cls) + " out of range");
    const Index row = cell_of(gt.box.cy, cs, s);
    const Index col = cell_of(gt.box.cx, cs, s);
    const auto k = static_cast<std::size_t>(row * s + col);
    if (t.cls[k] >= 0 && t.box[k].area() >= gt.box.area()) continue;
    t.cls[k] = gt.cls;
    t.box[k] = gt.box;
  }
  return t;
}

loss::BBox decode_cell(std::span<const double> t, Index row, Index col, double cell_size) {
  loss::BBox b;
  b.cx = (static_cast<double>(col) + sigmoid(t[0])) * cell_size;
  b.cy = (static_cast<double>(row) + sigmoid(t[1])) * cell_size;
  b.w = std::exp(std::clamp(t[2], kLogSizeMin, kLogSizeMax)) * cell_size;
  b.h = std::exp(std::clamp(t[3], kLogSizeMin, kLogSizeMax)) * cell_size;
  return b;
}

std::array<double, 4> encode_cell(const loss::BBox& box, Index row, Index col, double cell_size) {
  const double fx = box.cx / cell_size - static_cast<double>(col);
  const double fy = box.cy / cell_size - static_cast<double>(row);
  if (!(fx > 0.0 && fx < 1.0 && fy > 0.0 && fy < 1.0))
    throw ArgumentError("encode_cell: box center is not strictly inside the cell");
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  return {logit(fx), logit(fy), std::log(box.w / cell_size), std::log(box.h / cell_size)};
}

template <typename T>
DetectorLoss<T> detector_loss(const Tensor<T>& pred, std::span<const TargetGrid> targets,
                              const DetectorConfig& config, loss::FocusState* focus,
                              bool update_focus) {
  const Index s = config.grid;
  const Index k = config.classes;
  const Index ch = 5 + k;
  if (pred.rank() != 4 || pred.dim(1) != s || pred.dim(2) != s || pred.dim(3) != ch)
    throw ShapeError("detector_loss: expected [N," + std::to_string(s) + "," + std::to_string(s) +
                     "," + std::to_string(ch) + "], got " + shape_str(pred.shape()));
  const Index n = pred.dim(0);
  if (static_cast<Index>(targets.size()) != n)
    throw ShapeError("detector_loss: one target grid per image is required");
  if (config.box_loss == loss::BoxLoss::kWiou3 && focus == nullptr)
    throw ArgumentError("detector_loss: WIoU v3 needs a focus state");
  const auto cs = static_cast<double>(config.cell_size());
  const auto x = pred.data();

  struct Positive {
    Index base;
    loss::BBox pred;
    loss::BBox gt;
    int cls;
  };
  std::vector<Positive> positives;
  for (Index i = 0; i < n; ++i) {
    const auto& tg = targets[static_cast<std::size_t>(i)];
    if (tg.grid != s) throw ShapeError("detector_loss: target grid size mismatch");
    for (Index r = 0; r < s; ++r) {
      for (Index c = 0; c < s; ++c) {
        const auto cell = static_cast<std::size_t>(r * s + c);
        if (tg.cls[cell] < 0) continue;
        const Index base = ((i * s + r) * s + c) * ch;
        const std::array<double, 4> t{x[base], x[base + 1], x[base + 2], x[base + 3]};
        positives.push_back({base, decode_cell(t, r, c, cs), tg.box[cell], tg.cls[cell]});
      }
    }
  }

  const auto num_pos = static_cast<Index>(positives.size());
  const Index cells = n * s * s;
  std::vector<double> grad(x.size(), 0.0);
  LossBreakdown parts;
  parts.positives = num_pos;

  // Objectness over every cell.
  std::vector<char> is_pos(static_cast<std::size_t>(cells), 0);
  for (const auto& p : positives) is_pos[static_cast<std::size_t>(p.base / ch)] = 1;
  for (Index cell = 0; cell < cells; ++cell) {
    const double o = x[cell * ch + 4];
    const double t = is_pos[static_cast<std::size_t>(cell)] ? 1.0 : 0.0;
    parts.obj += bce_logit(o, t);
    grad[cell * ch + 4] = config.w_obj * (sigmoid(o) - t) / static_cast<double>(cells);
  }
  parts.obj /= static_cast<double>(cells);

  if (num_pos > 0) {
    double sum_l_iou = 0.0;
    for (const auto& p : positives) sum_l_iou += loss::l_iou(p.pred, p.gt);
    parts.mean_l_iou = sum_l_iou / static_cast<double>(num_pos);
    if (config.box_loss == loss::BoxLoss::kWiou3 && update_focus)
      loss::update_focus(*focus, parts.mean_l_iou);

    const double box_scale = config.w_box / static_cast<double>(num_pos);
    const double cls_scale = config.w_cls / static_cast<double>(num_pos * k);
    const auto params = config.wiou_params();
    // A zero running mean (every box so far exact) leaves beta undefined; the
    // gain tends to 0 from both sides (r(0) = 0 and r -> 0 as beta -> inf).
    const bool zero_mean = config.box_loss == loss::BoxLoss::kWiou3 && focus->initialized() && focus->ema <= 0.0;
    for (const auto& p : positives) {
      loss::DetachedTerms terms;
      if (zero_mean) {
        terms = loss::detached_terms(loss::BoxLoss::kWiou1, p.pred, p.gt, nullptr, params);
        terms.gain = 0.0;
      } else {
        terms = loss::detached_terms(config.box_loss, p.pred, p.gt, focus, params);
      }
      const auto lg = loss::box_loss_grad(config.box_loss, p.pred, p.gt, terms);
      parts.box += lg.value;
      // Chain rule through the decode: d cx / d tx = sigmoid'(tx) * cell, and
      // d w / d tw = w inside the clamp range.
      const double sx = sigmoid(x[p.base]);
      const double sy = sigmoid(x[p.base + 1]);
      grad[p.base] = box_scale * lg.grad[0] * sx * (1.0 - sx) * cs;
      grad[p.base + 1] = box_scale * lg.grad[1] * sy * (1.0 - sy) * cs;
      const double tw = x[p.base + 2];
      const double th = x[p.base + 3];
      grad[p.base + 2] = (tw > kLogSizeMin && tw < kLogSizeMax) ? box_scale * lg.grad[2] * p.pred.w : 0.0;
      grad[p.base + 3] = (th > kLogSizeMin && th < kLogSizeMax) ? box_scale * lg.grad[3] * p.pred.h : 0.0;

      for (Index j = 0; j < k; ++j) {
        const double z = x[p.base + 5 + j];
        const double t = (j == p.cls) ? 1.0 : 0.0;
        parts.cls += bce_logit(z, t);
        grad[p.base + 5 + j] = cls_scale * (sigmoid(z) - t);
      }
    }
    parts.box /= static_cast<double>(num_pos);
    parts.cls /= static_cast<double>(num_pos * k);
  }
  parts.total = config.w_box * parts.box + config.w_obj * parts.obj + config.w_cls * parts.cls;

  if (!std::isfinite(parts.box) || !std::isfinite(parts.obj) || !std::isfinite(parts.cls)) {
    std::ostringstream msg;
    msg << "non-finite detector loss: box=" << parts.box << " obj=" << parts.obj
        << " cls=" << parts.cls << " positives=" << num_pos;
    throw NumericError(msg.str());
  }

  DetectorLoss<T> out;
  out.parts = parts;
  out.total = make_result<T>(
      Shape{}, std::vector<T>{static_cast<T>(parts.total)}, {&pred}, "detector_loss",
      [grad = std::move(grad)](std::span<const T> g, std::span<const ImplPtr<T>> in) {
        auto& gp = in[0]->grad_buffer();
        const double scale = static_cast<double>(g[0]);
        for (std::size_t i = 0; i < grad.size(); ++i) gp[i] += static_cast<T>(scale * grad[i]);
      });
  return out;
}

template DetectorLoss<float> detector_loss(const Tensor<float>&, std::span<const TargetGrid>,
                                           const DetectorConfig&, loss::FocusState*, bool);
template DetectorLoss<double> detector_loss(const Tensor<double>&, std::span<const TargetGrid>,
                                            const DetectorConfig&, loss::FocusState*, bool);

std::vector<metrics::Detection> nms(std::vector<metrics::Detection> dets, double iou_thresh) {
  std::sort(dets.begin(), dets.end(), metrics::ranks_before);
  std::vector<metrics::Detection> kept;
  for (auto& d : dets) {
    bool suppressed = false;
    for (const auto& q : kept) {
      if (q.image == d.image && q.cls == d.cls && loss::iou(q.box, d.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

std::vector<std::vector<metrics::Detection>> decode(const TensorF& pred,
                                                    const DetectorConfig& config,
                                                    double conf_thresh, double nms_iou) {
  const Index s = config.grid;
  const Index k = config.classes;
  const Index ch = 5 + k;
  if (pred.rank() != 4 || pred.dim(1) != s || pred.dim(2) != s || pred.dim(3) != ch)
    throw ShapeError("decode: unexpected prediction shape " + shape_str(pred.shape()));
  const auto cs = static_cast<double>(config.cell_size());
  const auto x = pred.data();
  std::vector<std::vector<metrics::Detection>> out(static_cast<std::size_t>(pred.dim(0)));
  for (Index i = 0; i < pred.dim(0); ++i) {
    std::vector<metrics::Detection> dets;
    for (Index r = 0; r < s; ++r) {
      for (Index c = 0; c < s; ++c) {
        const Index base = ((i * s + r) * s + c) * ch;
        int best = 0;
        for (Index j = 1; j < k; ++j)
          if (x[base + 5 + j] > x[base + 5 + best]) best = static_cast<int>(j);
        const double conf = sigmoid(x[base + 4]) * sigmoid(x[base + 5 + best]);
        if (conf < conf_thresh) continue;
        const std::array<double, 4> t{x[base], x[base + 1], x[base + 2], x[base + 3]};
        dets.push_back({"", best, decode_cell(t, r, c, cs), conf});
      }
    }
    out[static_cast<std::size_t>(i)] = nms(std::move(dets), nms_iou);
  }
  return out;
}

}  // namespace detectlab::detector
