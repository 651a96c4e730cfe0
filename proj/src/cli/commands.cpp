// SPDX-License-Identifier: Apache-2.0
#include "detectlab/cli/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "detectlab/cli/suites.hpp"
#include "detectlab/data/synth.hpp"
#include "detectlab/detector/train.hpp"
#include "detectlab/errors.hpp"
#include "detectlab/metrics/eval.hpp"
#include "detectlab/nn/blocks.hpp"
#include "detectlab/tensor_io.hpp"

namespace detectlab::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ArgumentError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void require_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "dataset.json"))
    throw ArgumentError(dir.string() + " is not a dataset directory (dataset.json missing)");
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::size_t n = 0;
  std::uint64_t seed = 7;
  std::string spec;
};

int cmd_synth(const SynthArgs& a) {
  if (a.n == 0) throw ArgumentError("--n must be >= 1");
  const data::SceneSpec spec = a.spec.empty() ? data::SceneSpec{} : data::scene_spec_from_json(read_text(a.spec));
  spec.validate();
  data::build_dataset(spec, a.n, a.out, a.seed);
  const auto counts = data::split_counts(a.n);
  std::cout << "wrote " << a.n << " scenes to " << a.out << " (train " << counts.train << ", val "
            << counts.val << ", test " << counts.test << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  Index stop_after = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const auto config = detector::config_from_json(read_text(a.config));
  require_dataset(a.data);
  detector::TrainOptions options;
  options.out_dir = a.out;
  if (!a.resume.empty()) options.resume = fs::path(a.resume);
  if (a.stop_after > 0) options.stop_after = a.stop_after;
  if (!a.quiet) {
    std::cout << detector::kCsvHeader << '\n';
    options.on_epoch = [](const detector::EpochLog& row) {
      std::cout << detector::format_csv_row(row) << std::endl;
    };
  }
  const auto result = detector::train(config, a.data, options);
  std::cout << "epochs completed: " << result.epochs_completed << "\ncheckpoint: " << result.checkpoint.string()
            << "\nlog: " << result.csv.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string pred;
  std::string gt;
  std::string json;
  std::string dets_out;
  Index speed_iters = 50;
};

void write_json(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  std::ofstream os(path);
  if (!os) throw ArgumentError("cannot write " + path);
  os << text << '\n';
}

int cmd_eval(const EvalArgs& a) {
  const bool model_mode = !a.ckpt.empty();
  const bool file_mode = !a.pred.empty();
  if (model_mode == file_mode) throw ArgumentError("use either --ckpt with --data, or --pred with --gt");
  if (file_mode) {
    if (a.gt.empty()) throw ArgumentError("--pred requires --gt");
    const auto result = metrics::evaluate(metrics::read_detections(a.pred), metrics::read_ground_truth(a.gt));
    std::cout << metrics::format_table(result, data::class_names());
    write_json(a.json, metrics::to_json(result, data::class_names()));
    return kExitOk;
  }
  if (a.data.empty()) throw ArgumentError("--ckpt requires --data");
  require_dataset(a.data);
  const auto ckpt = detector::load_checkpoint(a.ckpt);
  auto model = detector::model_from_checkpoint(ckpt);
  const auto samples = detector::load_samples(a.data, a.split);
  const auto eval = detector::evaluate_model(*model, samples, ckpt.config.eval_conf, ckpt.config.nms_iou,
                                             detector::worker_threads());
  const auto macs = detector::forward_macs(*model);
  const double speed = detector::measure_speed_ms(*model, 5, std::max<Index>(a.speed_iters, 50));
  std::cout << metrics::format_table(eval.result, data::class_names());
  char line[200];
  std::snprintf(line, sizeof line, "parameters: %lld\nMACs: %lld (%.4f GFLOPs at 2 FLOPs per MAC)\nspeed: %.3f ms/image\n",
                static_cast<long long>(model->param_count()), static_cast<long long>(macs),
                2.0 * static_cast<double>(macs) * 1e-9, speed);
  std::cout << line;
  if (!a.json.empty()) {
    auto j = nlohmann::json::parse(metrics::to_json(eval.result, data::class_names()));
    j["parameters"] = model->param_count();
    j["macs"] = macs;
    j["speed_ms"] = speed;
    j["split"] = a.split;
    write_json(a.json, j.dump(2));
  }
  if (!a.dets_out.empty()) metrics::write_detections(a.dets_out, eval.detections);
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::string module;
  std::uint64_t seed = 0;
  double tol = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto report = module_gradcheck(a.module, a.seed, a.tol);
  std::printf("%s: %s max_rel_err=%.3e coords=%lld tol=%.1e\n", a.module.c_str(), report.pass ? "PASS" : "FAIL",
              report.max_rel_err, static_cast<long long>(report.coords_checked), a.tol);
  if (!report.pass) {
    std::printf("worst: %s\n", report.worst.c_str());
    return kExitNumeric;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::string data;
  std::string grid;
  std::string out;
};

int cmd_ablate(const AblateArgs& a) {
  require_dataset(a.data);
  nlohmann::json grid;
  try {
    grid = nlohmann::json::parse(a.grid.empty() ? default_ablation_grid() : read_text(a.grid));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ablation grid: ") + e.what());
  }
  if (!grid.is_object()) throw ConfigError("ablation grid must be a JSON object");
  for (const auto& [key, value] : grid.items())
    if (key != "base" && key != "rows") throw ConfigError("ablation grid: unknown key '" + key + "'");
  const nlohmann::json base = grid.value("base", nlohmann::json::object());
  const nlohmann::json rows = grid.contains("rows") ? grid.at("rows") : nlohmann::json::parse(default_ablation_grid()).at("rows");
  if (!base.is_object() || !rows.is_array() || rows.empty())
    throw ConfigError("ablation grid: 'base' must be an object and 'rows' a non-empty array");

  // Validate every row before training anything.
  std::vector<std::pair<std::string, detector::DetectorConfig>> runs;
  for (const auto& row : rows) {
    if (!row.is_object() || !row.contains("name") || !row.at("name").is_string())
      throw ConfigError("ablation grid: every row needs a string 'name'");
    nlohmann::json merged = base;
    for (const auto& [key, value] : row.value("config", nlohmann::json::object()).items()) merged[key] = value;
    runs.emplace_back(row.at("name").get<std::string>(), detector::config_from_json(merged.dump()));
  }

  fs::create_directories(a.out);
  const auto test = detector::load_samples(a.data, "test");
  std::ofstream csv(fs::path(a.out) / "ablation.csv");
  const char* header = "name,neck,attention,box_loss,precision,recall,map50,map5095,params,macs,speed_ms";
  csv << header << '\n';
  std::cout << header << '\n';
  for (const auto& [name, config] : runs) {
    detector::TrainOptions options;
    options.out_dir = fs::path(a.out) / name;
    const auto result = detector::train(config, a.data, options);
    auto model = detector::model_from_checkpoint(detector::load_checkpoint(result.checkpoint));
    const auto eval = detector::evaluate_model(*model, test, config.eval_conf, config.nms_iou, detector::worker_threads());
    const auto macs = detector::forward_macs(*model);
    const double speed = detector::measure_speed_ms(*model);
    char line[400];
    std::snprintf(line, sizeof line, "%s,%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%lld,%lld,%.4f", name.c_str(),
                  detector::neck_name(config.neck).c_str(), detector::attention_name(config.attention).c_str(),
                  std::string(loss::box_loss_name(config.box_loss)).c_str(), eval.result.precision,
                  eval.result.recall, eval.result.map50, eval.result.map5095,
                  static_cast<long long>(model->param_count()), static_cast<long long>(macs), speed);
    csv << line << std::endl;
    std::cout << line << std::endl;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- loss-bench

struct LossBenchArgs {
  std::string losses = "ciou,wiou1,wiou3";
  Index steps = 500;
  std::uint64_t seed = 42;
  Index pairs = 256;
  double step_size = LossBenchOptions{}.step_size;
  std::string out;
  double threshold = 0.2;
};

int cmd_loss_bench(const LossBenchArgs& a) {
  LossBenchOptions options;
  options.losses.clear();
  std::stringstream ss(a.losses);
  for (std::string name; std::getline(ss, name, ',');) options.losses.push_back(loss::parse_box_loss(name));
  if (options.losses.empty()) throw ArgumentError("--losses is empty");
  options.steps = a.steps;
  options.seed = a.seed;
  options.pairs = a.pairs;
  options.step_size = a.step_size;
  const auto result = run_loss_bench(options);
  if (a.out.empty()) {
    write_loss_bench_csv(std::cout, result);
  } else {
    std::ofstream os(a.out);
    if (!os) throw ArgumentError("cannot write " + a.out);
    write_loss_bench_csv(os, result);
  }
  for (std::size_t l = 0; l < result.losses.size(); ++l) {
    const auto step = first_step_below(result.curves[l], a.threshold);
    std::cerr << loss::box_loss_name(result.losses[l]) << ": final mean L_IoU " << result.curves[l].back()
              << ", first step below " << a.threshold << ": " << (step ? std::to_string(*step) : "never") << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------- attnviz

struct AttnvizArgs {
  std::string ckpt;
  std::string image;
  std::string out;
};

int cmd_attnviz(const AttnvizArgs& a) {
  const auto ckpt = detector::load_checkpoint(a.ckpt);
  if (ckpt.config.attention != detector::Attention::kCa)
    throw ConfigError("checkpoint has no coordinate attention block (attention = none)");
  auto model = detector::model_from_checkpoint(ckpt);
  TensorF image = load_tnsr<float>(a.image);
  const Index s = ckpt.config.input_size;
  if (image.shape() != Shape{3, s, s})
    throw ShapeError("image must be [3," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                     shape_str(image.shape()));
  NoGradGuard no_grad;
  const auto out = model->forward(TensorF::from({1, 3, s, s}, std::vector<float>(image.data().begin(), image.data().end())), false);
  fs::create_directories(a.out);
  const auto maps = nn::attention_maps_export(out.attention->g_h, out.attention->g_w, a.out);
  std::cout << "wrote " << (fs::path(a.out) / "ca_maps.tnsr").string() << " " << shape_str(maps.per_channel.shape())
            << " and " << (fs::path(a.out) / "ca_mean.tnsr").string() << " " << shape_str(maps.channel_mean.shape())
            << '\n';
  return kExitOk;
}

}  // namespace

std::string default_ablation_grid() {
  return R"({
  "base": {},
  "rows": [
    {"name": "baseline", "config": {"neck": "sppcspc", "attention": "none", "box_loss": "ciou"}},
    {"name": "rfb", "config": {"neck": "rfb", "attention": "none", "box_loss": "ciou"}},
    {"name": "rfb_ca", "config": {"neck": "rfb", "attention": "ca", "box_loss": "ciou"}},
    {"name": "rfb_ca_wiou3", "config": {"neck": "rfb", "attention": "ca", "box_loss": "wiou3"}}
  ]
})";
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"detectlab: a desk-scale insulator defect detection lab"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--n", synth.n, "Number of scenes")->required();
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--spec", synth.spec, "Scene spec JSON file");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a detector");
  t->add_option("--config", train.config, "Detector config JSON file")->required();
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_option("--stop-after", train.stop_after, "Stop once this many epochs are complete");
  t->add_flag("--quiet", train.quiet, "Do not echo the per-epoch log");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or a detection file");
  e->add_option("--ckpt", eval.ckpt, "Checkpoint file");
  e->add_option("--data", eval.data, "Dataset directory");
  e->add_option("--split", eval.split, "Split to evaluate (train|val|test)");
  e->add_option("--pred", eval.pred, "Detections JSONL");
  e->add_option("--gt", eval.gt, "Ground truth JSONL");
  e->add_option("--json", eval.json, "Write the result as JSON");
  e->add_option("--dets-out", eval.dets_out, "Write the model's detections as JSONL");
  e->add_option("--speed-iters", eval.speed_iters, "Timed forward passes (at least 50)");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient check of one module");
  g->add_option("--module", gc.module, "Module name")->required()->check(CLI::IsMember(gradcheck_modules()));
  g->add_option("--seed", gc.seed, "Seed");
  g->add_option("--tol", gc.tol, "Relative error tolerance");

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "Train and score a grid of configurations");
  ab->add_option("--data", ablate.data, "Dataset directory")->required();
  ab->add_option("--grid", ablate.grid, "Grid JSON file (default: the four-row core grid)");
  ab->add_option("--out", ablate.out, "Output directory")->required();

  LossBenchArgs bench;
  auto* lb = app.add_subcommand("loss-bench", "Box regression bench with several losses");
  lb->add_option("--losses", bench.losses, "Comma-separated losses");
  lb->add_option("--steps", bench.steps, "Gradient steps");
  lb->add_option("--seed", bench.seed, "Seed");
  lb->add_option("--pairs", bench.pairs, "Number of box pairs");
  lb->add_option("--step-size", bench.step_size, "Gradient descent step size");
  lb->add_option("--threshold", bench.threshold, "L_IoU level reported on stderr");
  lb->add_option("--out", bench.out, "CSV output file (default: stdout)");

  AttnvizArgs attn;
  auto* av = app.add_subcommand("attnviz", "Export coordinate attention maps for one image");
  av->add_option("--ckpt", attn.ckpt, "Checkpoint file")->required();
  av->add_option("--image", attn.image, "TNSR image [3,H,W]")->required();
  av->add_option("--out", attn.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(eval);
    if (g->parsed()) return cmd_gradcheck(gc);
    if (ab->parsed()) return cmd_ablate(ablate);
    if (lb->parsed()) return cmd_loss_bench(bench);
    if (av->parsed()) return cmd_attnviz(attn);
  } catch (const NumericError& err) {
    std::cerr << "numerical failure: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace detectlab::cli
