// SPDX-License-Identifier: Apache-2.0
#include "detectlab/detector/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <numbers>
#include <numeric>
#include <thread>

#include "detectlab/errors.hpp"
#include "detectlab/rng.hpp"
#include "detectlab/tensor_io.hpp"

namespace detectlab::detector {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;

void check_finite(const nn::ParamStore<float>& store) {
  for (const auto& [name, t] : store.params()) {
    for (float v : t.data())
      if (!std::isfinite(v)) throw NumericError("non-finite value in parameter '" + name + "'");
    for (float v : t.grad())
      if (!std::isfinite(v)) throw NumericError("non-finite gradient for parameter '" + name + "'");
  }
}

void write_csv(const std::filesystem::path& path, const std::vector<EpochLog>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  os << kCsvHeader << '\n';
  for (const auto& row : history) os << format_csv_row(row) << '\n';
}

}  // namespace

std::vector<Sample> load_samples(const std::filesystem::path& dataset_dir, const std::string& split) {
  std::vector<Sample> out;
  for (auto& record : data::load_split(dataset_dir, split)) {
    Sample s;
    s.image = load_tnsr<float>(dataset_dir / record.image);
    if (s.image.rank() != 3 || s.image.dim(0) != 3)
      throw FormatError(record.image + ": expected a [3,H,W] image, got " + shape_str(s.image.shape()));
    s.id = std::move(record.image);
    s.annotations = std::move(record.annotations);
    out.push_back(std::move(s));
  }
  return out;
}

TensorF stack_images(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw ArgumentError("stack_images: empty batch");
  const Shape& first = batch.front()->image.shape();
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(shape_numel(first)) * batch.size());
  for (const Sample* s : batch) {
    if (s->image.shape() != first) throw ShapeError("stack_images: images differ in shape");
    data.insert(data.end(), s->image.data().begin(), s->image.data().end());
  }
  return TensorF::from({static_cast<Index>(batch.size()), first[0], first[1], first[2]}, std::move(data));
}

Sgd::Sgd(nn::ParamStore<float>& store, double momentum, double weight_decay)
    : store_(store), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& [name, t] : store_.params()) velocity_.push_back(TensorF::zeros(t.shape()));
}

void Sgd::step(double lr) {
  const auto mu = static_cast<float>(momentum_);
  const auto rate = static_cast<float>(lr);
  for (std::size_t i = 0; i < velocity_.size(); ++i) {
    TensorF w = store_.params()[i].second;
    const auto wd = static_cast<float>(w.rank() >= 2 ? weight_decay_ : 0.0);
    auto v = velocity_[i].data();
    auto x = w.data();
    const auto g = w.grad();
    for (std::size_t j = 0; j < v.size(); ++j) {
      const float grad = g.empty() ? 0.0f : g[j];
      v[j] = mu * v[j] + grad + wd * x[j];
      x[j] -= rate * v[j];
    }
  }
}

std::vector<std::pair<std::string, TensorF>> Sgd::state() const {
  std::vector<std::pair<std::string, TensorF>> out;
  for (std::size_t i = 0; i < velocity_.size(); ++i)
    out.emplace_back("opt." + store_.params()[i].first, velocity_[i].clone());
  return out;
}

void Sgd::load_state(const Checkpoint& ckpt) {
  for (std::size_t i = 0; i < velocity_.size(); ++i) {
    const std::string name = "opt." + store_.params()[i].first;
    const TensorF* src = ckpt.find(name);
    if (src == nullptr) throw FormatError("checkpoint: missing optimizer state '" + name + "'");
    if (src->shape() != velocity_[i].shape())
      throw FormatError("checkpoint: optimizer state '" + name + "' has the wrong shape");
    std::copy(src->data().begin(), src->data().end(), velocity_[i].data().begin());
  }
}

double learning_rate(const DetectorConfig& config, Index epoch, Index iter, Index iters_per_epoch) {
  const double f = config.lr_final_fraction;
  const double progress = static_cast<double>(epoch) / static_cast<double>(config.epochs);
  double lr = config.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
  if (epoch < config.warmup_epochs) {
    const double done = static_cast<double>(epoch * iters_per_epoch + iter + 1);
    lr *= done / static_cast<double>(config.warmup_epochs * iters_per_epoch);
  }
  return lr;
}

int worker_threads() {
  const char* env = std::getenv("DETECTLAB_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1) return 1;
  return static_cast<int>(std::min<long>(n, 256));
}

ModelEval evaluate_model(Detector& model, const std::vector<Sample>& samples, double conf_thresh,
                         double nms_iou, int threads) {
  const auto& config = model.config();
  std::vector<std::vector<metrics::Detection>> per_image(samples.size());
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(threads, 1)));

  auto worker = [&](std::size_t w, std::size_t stride) {
    try {
      NoGradGuard no_grad;
      for (std::size_t i = w; i < samples.size(); i += stride) {
        const Sample* one[] = {&samples[i]};
        const auto out = model.forward(stack_images({one[0]}), false);
        auto dets = decode(out.grid, config, conf_thresh, nms_iou).front();
        for (auto& d : dets) d.image = samples[i].id;
        per_image[i] = std::move(dets);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp<int>(threads, 1, std::max<int>(1, static_cast<int>(samples.size()))));
  if (workers == 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker, w, workers);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  ModelEval out;
  for (auto& dets : per_image)
    out.detections.insert(out.detections.end(), dets.begin(), dets.end());
  for (const auto& s : samples)
    for (const auto& a : s.annotations) out.ground_truth.push_back({s.id, a.cls, a.box});
  out.result = metrics::evaluate(out.detections, out.ground_truth);
  return out;
}

double measure_speed_ms(Detector& model, Index warmups, Index iterations) {
  if (iterations < 1) throw ArgumentError("measure_speed_ms: iterations must be >= 1");
  NoGradGuard no_grad;
  const Index s = model.config().input_size;
  Rng rng(derive_seed(model.config().seed, 0x5EED));
  std::vector<float> pixels(static_cast<std::size_t>(3 * s * s));
  for (auto& p : pixels) p = static_cast<float>(rng.uniform());
  const TensorF image = TensorF::from({1, 3, s, s}, std::move(pixels));
  for (Index i = 0; i < warmups; ++i) model.forward(image, false);
  const auto start = std::chrono::steady_clock::now();
  for (Index i = 0; i < iterations; ++i) model.forward(image, false);
  const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
  return elapsed.count() / static_cast<double>(iterations);
}

std::string format_csv_row(const EpochLog& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g",
                static_cast<long long>(r.epoch), r.box, r.obj, r.cls, r.total, r.precision, r.recall,
                r.map50, r.map5095);
  return buf;
}

TrainResult train(const DetectorConfig& config, const std::filesystem::path& dataset_dir,
                  const TrainOptions& options) {
  config.validate();
  const auto train_set = load_samples(dataset_dir, "train");
  const auto val_set = load_samples(dataset_dir, "val");
  if (train_set.empty()) throw ArgumentError("training split of " + dataset_dir.string() + " is empty");
  const Index size = config.input_size;
  for (const auto* set : {&train_set, &val_set})
    for (const auto& s : *set)
      if (s.image.dim(1) != size || s.image.dim(2) != size)
        throw ConfigError("image " + s.id + " is " + shape_str(s.image.shape()) +
                          " but input_size is " + std::to_string(size));

  Detector model(config);
  Sgd opt(model.store(), config.momentum, config.weight_decay);
  loss::FocusState focus;
  focus.momentum = config.focus_momentum;
  Index epoch = 0;
  Index step = 0;
  std::vector<EpochLog> history;

  if (options.resume) {
    const Checkpoint ckpt = load_checkpoint(*options.resume);
    if (config_to_json(ckpt.config) != config_to_json(config))
      throw ConfigError("resume: checkpoint configuration differs from the requested one");
    load_model_tensors(model, ckpt);
    opt.load_state(ckpt);
    focus = ckpt.focus;
    epoch = ckpt.epoch;
    step = ckpt.step;
    history = ckpt.history;
  }

  std::filesystem::create_directories(options.out_dir);
  TrainResult result;
  result.checkpoint = options.out_dir / "checkpoint.dlck";
  result.csv = options.out_dir / "train.csv";

  const auto n = static_cast<Index>(train_set.size());
  const Index iters = (n + config.batch_size - 1) / config.batch_size;
  const Index last = std::min(config.epochs, options.stop_after.value_or(config.epochs));
  const int threads = worker_threads();

  for (; epoch < last; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochLog row;
    row.epoch = epoch + 1;
    for (Index it = 0; it < iters; ++it) {
      std::vector<const Sample*> batch;
      std::vector<TargetGrid> targets;
      for (Index j = it * config.batch_size; j < std::min(n, (it + 1) * config.batch_size); ++j) {
        const Sample& s = train_set[order[static_cast<std::size_t>(j)]];
        batch.push_back(&s);
        targets.push_back(assign_targets(s.annotations, config));
      }
      model.store().zero_grad();
      const auto out = model.forward(stack_images(batch), true);
      const auto loss = detector_loss(out.grid, targets, config, &focus, true);
      loss.total.backward();
      check_finite(model.store());
      opt.step(learning_rate(config, epoch, it, iters));
      ++step;
      row.box += loss.parts.box;
      row.obj += loss.parts.obj;
      row.cls += loss.parts.cls;
      row.total += loss.parts.total;
    }
    row.box /= static_cast<double>(iters);
    row.obj /= static_cast<double>(iters);
    row.cls /= static_cast<double>(iters);
    row.total /= static_cast<double>(iters);

    if (!val_set.empty()) {
      const auto eval = evaluate_model(model, val_set, config.eval_conf, config.nms_iou, threads);
      row.precision = eval.result.precision;
      row.recall = eval.result.recall;
      row.map50 = eval.result.map50;
      row.map5095 = eval.result.map5095;
    }
    history.push_back(row);

    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.focus = focus;
    ckpt.epoch = epoch + 1;
    ckpt.step = step;
    ckpt.history = history;
    ckpt.tensors = model_tensors(model);
    for (auto& entry : opt.state()) ckpt.tensors.push_back(std::move(entry));
    save_checkpoint(result.checkpoint, ckpt);
    write_csv(result.csv, history);
    if (options.on_epoch) options.on_epoch(row);
  }

  result.history = history;
  result.epochs_completed = epoch;
  return result;
}

}  // namespace detectlab::detector
