// SPDX-License-Identifier: Apache-2.0
#include "detectlab/cli/suites.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <ostream>

#include "detectlab/errors.hpp"
#include "detectlab/nn/blocks.hpp"
#include "detectlab/ops.hpp"
#include "detectlab/rng.hpp"

namespace detectlab::cli {

namespace {

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from(std::move(shape), std::move(v));
}

// A fixed positive weighting keeps every output coordinate in play.
TensorD weighted_sum(const TensorD& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng, 0.5, 1.5)));
}

std::vector<TensorD> with_params(const TensorD& x, const nn::ParamStore<double>& store) {
  std::vector<TensorD> all{x};
  for (const auto& [name, t] : store.params()) all.push_back(t);
  return all;
}

template <typename Block>
GradCheckReport check_block(Block& block, nn::ParamStore<double>& store, const TensorD& x,
                            const GradCheckOptions& opts) {
  auto f = [&](const std::vector<TensorD>& in) {
    if constexpr (std::is_same_v<Block, nn::CoordAttention<double>>)
      return weighted_sum(block.forward(in[0], true).y, opts.seed + 1);
    else
      return weighted_sum(block.forward(in[0], true), opts.seed + 1);
  };
  return grad_check(f, with_params(x, store), opts);
}

loss::BBox random_box(Rng& rng) {
  return {rng.uniform(20.0, 80.0), rng.uniform(20.0, 80.0), rng.uniform(6.0, 30.0), rng.uniform(6.0, 30.0)};
}

GradCheckReport check_box_loss(loss::BoxLoss kind, Rng& rng, const GradCheckOptions& opts) {
  std::vector<loss::BBox> preds, gts;
  for (int i = 0; i < 32; ++i) {
    const loss::BBox gt = random_box(rng);
    preds.push_back({gt.cx + rng.uniform(-8.0, 8.0), gt.cy + rng.uniform(-8.0, 8.0),
                     gt.w * rng.uniform(0.6, 1.6), gt.h * rng.uniform(0.6, 1.6)});
    gts.push_back(gt);
  }
  loss::FocusState focus;
  loss::update_focus(focus, 0.5);
  std::vector<loss::DetachedTerms> frozen;
  for (std::size_t i = 0; i < preds.size(); ++i)
    frozen.push_back(loss::detached_terms(kind, preds[i], gts[i], &focus));
  std::vector<double> flat;
  for (const auto& b : preds) flat.insert(flat.end(), {b.cx, b.cy, b.w, b.h});
  const TensorD pred = TensorD::from({static_cast<Index>(preds.size()), 4}, flat);
  auto f = [&](const std::vector<TensorD>& in) { return sum(loss::box_losses(in[0], gts, kind, &focus)); };
  auto surrogate = [&](const std::vector<TensorD>& in) {
    return sum(loss::box_losses(in[0], gts, kind, std::span<const loss::DetachedTerms>(frozen)));
  };
  return grad_check(f, {pred}, opts, surrogate);
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"conv", "cbs", "ca", "rfb", "sppcspc", "ciou", "wiou1", "wiou3"};
  return names;
}

GradCheckReport module_gradcheck(const std::string& module, std::uint64_t seed, double tol) {
  const GradCheckOptions opts{.step = 1e-5, .tol = tol, .max_coords = 128, .seed = seed};
  Rng rng(derive_seed(seed, 0x6C));
  nn::ParamStore<double> store;
  if (module == "conv") {
    // Dilation 3 with "same" padding on a 9x9 map.
    nn::Conv<double> conv(store, "conv", {3, 4, 3, 1, 3}, true, rng);
    const TensorD x = random_tensor({2, 3, 9, 9}, rng);
    auto f = [&](const std::vector<TensorD>& in) { return weighted_sum(conv.forward(in[0]), seed + 1); };
    return grad_check(f, with_params(x, store), opts);
  }
  if (module == "cbs") {
    nn::Cbs<double> cbs(store, "cbs", {3, 4, 3, 2, 1}, rng);
    return check_block(cbs, store, random_tensor({2, 3, 6, 6}, rng), opts);
  }
  if (module == "ca") {
    nn::CoordAttention<double> ca(store, "ca", {8, 2}, rng);
    return check_block(ca, store, random_tensor({2, 8, 5, 4}, rng), opts);
  }
  if (module == "rfb") {
    nn::Rfb<double> rfb(store, "rfb", nn::RfbConfig::make_default(4, 6), rng);
    return check_block(rfb, store, random_tensor({2, 4, 6, 6}, rng), opts);
  }
  if (module == "sppcspc") {
    nn::Sppcspc<double> spp(store, "spp", {3, 4}, rng);
    return check_block(spp, store, random_tensor({2, 3, 5, 5}, rng), opts);
  }
  if (module == "ciou" || module == "wiou1" || module == "wiou3")
    return check_box_loss(loss::parse_box_loss(module), rng, opts);
  throw ArgumentError("unknown gradcheck module '" + module + "'");
}

LossBenchResult run_loss_bench(const LossBenchOptions& options) {
  if (options.steps < 0 || options.pairs < 1 || !(options.step_size > 0.0))
    throw ArgumentError("loss bench: steps >= 0, pairs >= 1 and step_size > 0 are required");
  Rng rng(options.seed);
  std::vector<loss::BBox> gts, starts;
  for (Index i = 0; i < options.pairs; ++i) {
    const loss::BBox gt = random_box(rng);
    // Displacements up to one box size leave some pairs disjoint.
    const loss::BBox pred{gt.cx + rng.uniform(-1.0, 1.0) * gt.w, gt.cy + rng.uniform(-1.0, 1.0) * gt.h,
                          gt.w * std::exp(rng.uniform(-0.7, 0.7)), gt.h * std::exp(rng.uniform(-0.7, 0.7))};
    gts.push_back(gt);
    starts.push_back(pred);
  }

  LossBenchResult result;
  result.losses = options.losses;
  for (const auto kind : options.losses) {
    std::vector<loss::BBox> preds = starts;
    loss::FocusState focus;
    auto mean_l_iou = [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < preds.size(); ++i) s += loss::l_iou(preds[i], gts[i]);
      return s / static_cast<double>(preds.size());
    };
    std::vector<double> curve{mean_l_iou()};
    for (Index step = 0; step < options.steps; ++step) {
      if (kind == loss::BoxLoss::kWiou3) loss::update_focus(focus, curve.back());
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto g = loss::box_loss_grad(kind, preds[i], gts[i], &focus);
        auto& p = preds[i];
        p.cx -= options.step_size * g.grad[0];
        p.cy -= options.step_size * g.grad[1];
        p.w = std::max(0.5, p.w - options.step_size * g.grad[2]);
        p.h = std::max(0.5, p.h - options.step_size * g.grad[3]);
      }
      curve.push_back(mean_l_iou());
    }
    result.curves.push_back(std::move(curve));
  }
  return result;
}

std::optional<Index> first_step_below(const std::vector<double>& curve, double threshold) {
  for (std::size_t s = 0; s < curve.size(); ++s)
    if (curve[s] < threshold) return static_cast<Index>(s);
  return std::nullopt;
}

void write_loss_bench_csv(std::ostream& os, const LossBenchResult& result) {
  os << "step";
  for (const auto kind : result.losses) os << ',' << loss::box_loss_name(kind);
  os << '\n';
  const std::size_t rows = result.curves.empty() ? 0 : result.curves.front().size();
  const auto old_precision = os.precision(10);
  for (std::size_t s = 0; s < rows; ++s) {
    os << s;
    for (const auto& curve : result.curves) os << ',' << curve[s];
    os << '\n';
  }
  os.precision(old_precision);
}

}  // namespace detectlab::cli
