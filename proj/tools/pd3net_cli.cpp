// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pd3net/cost_model.hpp"
#include "pd3net/dataset.hpp"
#include "pd3net/eval.hpp"
#include "pd3net/train.hpp"

namespace fs = std::filesystem;
using namespace pd3net;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

constexpr const char* kCheckpointFile = "model.pd3";
constexpr const char* kLogFile = "train_log.csv";

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("pd3net");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("DDD_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

struct GenArgs {
  std::string config, out;
  std::size_t n = 200, jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> height, width;
};

struct TrainArgs {
  std::string config, data, out, ckpt;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scale;
};

struct EvalArgs {
  std::string ckpt, data, out;
  double threshold = kDefaultThreshold;
};

struct SweepArgs {
  std::string ckpt, data, out;
  double t_min = 0.05, t_max = 0.95, step = 0.05;
};

struct BenchArgs {
  std::vector<std::uint64_t> kernels{3, 5, 7};
  std::vector<std::uint64_t> in_depths{1, 64, 256};
  std::vector<std::uint64_t> out_depths{64, 256};
  std::size_t height = 64, width = 64, trials = 5;
  std::uint64_t seed = 1;
  bool measure = true;
  std::string out;
};

struct DetectArgs {
  std::string ckpt, frame;
  double threshold = kDefaultThreshold;
};

synth::SceneConfig scene_config(const GenArgs& a) {
  KeyValueConfig kv;
  if (!a.config.empty()) kv = KeyValueConfig::load(a.config);
  if (a.seed) kv.set("seed", std::to_string(*a.seed));
  if (a.height) kv.set("height", std::to_string(*a.height));
  if (a.width) kv.set("width", std::to_string(*a.width));
  return synth::SceneConfig::from(kv);
}

TrainConfig train_config(const TrainArgs& a) {
  KeyValueConfig kv;
  if (!a.config.empty()) kv = KeyValueConfig::load(a.config);
  if (a.seed) kv.set("seed", std::to_string(*a.seed));
  if (a.scale) kv.set("scale", *a.scale);
  return TrainConfig::from(kv);
}

void log_epoch(const EpochLog& e) {
  spdlog::info("epoch {} stage {} train {:.6f} val {:.6f}", e.epoch, e.stage, e.train_loss, e.val_loss);
}

void write_training_outputs(const TrainResult& r, const fs::path& dir) {
  fs::create_directories(dir);
  save_checkpoint(r.best, (dir / kCheckpointFile).string());
  auto log = open_out(dir / kLogFile);
  write_log_header(log);
  for (const auto& e : r.log) write_log_row(log, e);
  spdlog::info("best validation loss {:.6f} at epoch {}; wrote {}", r.best.meta.best_val_loss, r.best.meta.epoch,
               (dir / kCheckpointFile).string());
}

int run_gen(const GenArgs& a) {
  const auto cfg = scene_config(a);
  generate_dataset(cfg, a.n, a.out, a.jobs);
  spdlog::info("wrote {} frames ({}x{}) to {}", a.n, cfg.height, cfg.width, a.out);
  return kExitOk;
}

int run_train(const TrainArgs& a) {
  const auto cfg = train_config(a);
  const auto data = load_dataset(a.data);
  const auto& first = data.samples.front();
  NetworkGraph<float> net(first.height, first.width, Scale::parse(cfg.scale), cfg.seed);
  spdlog::info("training {} parameters on {} frames", net.parameter_count(), data.size());
  write_training_outputs(train(net, data, cfg, log_epoch), a.out);
  return kExitOk;
}

int run_finetune(const TrainArgs& a) {
  const auto cfg = train_config(a);
  const auto start = load_checkpoint(a.ckpt);
  const auto data = load_dataset(a.data);
  write_training_outputs(fine_tune(start, data, cfg, log_epoch), a.out);
  return kExitOk;
}

EvalSet predict(const std::string& ckpt, const std::string& data_dir) {
  auto net = network_from<float>(load_checkpoint(ckpt));
  const auto data = load_dataset(data_dir);
  const auto prepared = prepare(data);
  if (prepared.height != net.height() || prepared.width != net.width()) {
    throw ShapeError("dataset frames are " + std::to_string(prepared.height) + "x" + std::to_string(prepared.width) +
                     ", checkpoint expects " + std::to_string(net.height()) + "x" + std::to_string(net.width()));
  }
  return EvalSet{predict_maps(net, prepared.images), prepared.annotations};
}

int run_eval(const EvalArgs& a) {
  const auto set = predict(a.ckpt, a.data);
  const std::size_t h = set.maps.front().height, w = set.maps.front().width;
  std::vector<MatchResult> frames;
  const auto counts = evaluate_at(set, a.threshold, default_gate(h, w), default_min_area(h, w), &frames);
  write_metrics_json(std::cout, compute_metrics(counts), a.threshold);
  if (!a.out.empty()) {
    auto csv = open_out(a.out);
    write_matches_csv(csv, frames);
  }
  return kExitOk;
}

int run_sweep(const SweepArgs& a) {
  const auto grid = threshold_grid(a.t_min, a.t_max, a.step);
  const auto set = predict(a.ckpt, a.data);
  const std::size_t h = set.maps.front().height, w = set.maps.front().width;
  const auto curve = threshold_sweep(set, grid, default_gate(h, w), default_min_area(h, w));
  if (a.out.empty()) {
    write_curve_csv(std::cout, curve);
  } else {
    auto csv = open_out(a.out);
    write_curve_csv(csv, curve);
  }
  std::cout << "best_threshold " << format_double(curve.best_threshold) << " f1 " << format_double(curve.best_f1)
            << '\n';
  return kExitOk;
}

int run_bench(const BenchArgs& a) {
  Rng rng(a.seed);
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!a.out.empty()) {
    file = open_out(a.out);
    os = &file;
  }
  cost::write_csv_header(*os);
  for (auto k : a.kernels) {
    for (auto d : a.in_depths) {
      for (auto dd : a.out_depths) {
        const cost::ConvConfig cfg{k, d, dd, a.height, a.width};
        const auto r = a.measure ? cost::benchmark_pair(cfg, a.trials, rng) : cost::separable_decision(cfg);
        cost::write_csv_row(*os, r);
        spdlog::debug("K={} d={} D={} -> {}", k, d, dd, cost::predicted_winner(r));
      }
    }
  }
  return kExitOk;
}

int run_detect(const DetectArgs& a) {
  auto net = network_from<float>(load_checkpoint(a.ckpt));
  const auto depth = detail::read_u16_le(a.frame, net.height() * net.width());
  const auto maps = predict_maps(net, std::span(&depth, 1), 1);
  const auto dets = decode_detections(maps.front(), a.threshold, default_min_area(net.height(), net.width()));
  nlohmann::json out = nlohmann::json::array();
  for (const auto& d : dets) out.push_back({{"u", d.u}, {"v", d.v}, {"peak", d.peak}, {"area", d.area}});
  std::cout << out.dump() << '\n';
  return kExitOk;
}

void add_threshold_check(CLI::Option* opt) { opt->check(CLI::Range(0.0, 1.0).description("in (0, 1)")); }

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"PD3Net depth-image people detector"};
  app.require_subcommand(1, 1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a synthetic depth dataset");
  gen_cmd->add_option("--config", gen.config, "Scene config (key = value)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of frames")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Scene seed");
  gen_cmd->add_option("--height", gen.height, "Frame height")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--width", gen.width, "Frame width")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--jobs", gen.jobs, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model from scratch");
  train_cmd->add_option("--config", tr.config, "Training config (key = value)")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "Output directory for model.pd3 and train_log.csv")->required();
  train_cmd->add_option("--seed", tr.seed, "Initialization and shuffling seed");
  train_cmd->add_option("--scale", tr.scale, "Channel scale, e.g. 1/4");

  TrainArgs ft;
  auto* ft_cmd = app.add_subcommand("finetune", "Stage-2 training from a checkpoint");
  ft_cmd->add_option("--config", ft.config, "Training config (key = value)")->check(CLI::ExistingFile);
  ft_cmd->add_option("--ckpt", ft.ckpt, "Starting checkpoint")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--data", ft.data, "Dataset directory")->required();
  ft_cmd->add_option("--out", ft.out, "Output directory")->required();
  ft_cmd->add_option("--seed", ft.seed, "Shuffling seed");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Print detection metrics as JSON");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  add_threshold_check(eval_cmd->add_option("--threshold", ev.threshold, "Decode threshold"));
  eval_cmd->add_option("--out", ev.out, "Optional per-frame match CSV");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Threshold sweep to a PR/F1 CSV");
  sweep_cmd->add_option("--ckpt", sw.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--data", sw.data, "Dataset directory")->required();
  add_threshold_check(sweep_cmd->add_option("--t-min", sw.t_min, "First threshold"));
  add_threshold_check(sweep_cmd->add_option("--t-max", sw.t_max, "Last threshold"));
  sweep_cmd->add_option("--step", sw.step, "Threshold step")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--out", sw.out, "CSV path (stdout when omitted)");

  BenchArgs be;
  auto* bench_cmd = app.add_subcommand("bench", "Separable vs conventional cost grid");
  bench_cmd->add_option("--kernels", be.kernels, "Kernel sizes")->delimiter(',');
  bench_cmd->add_option("--in-depths", be.in_depths, "Input depths d")->delimiter(',');
  bench_cmd->add_option("--out-depths", be.out_depths, "Output depths D")->delimiter(',');
  bench_cmd->add_option("--height", be.height, "Input height")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--width", be.width, "Input width")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--trials", be.trials, "Timed trials per variant (>= 5)");
  bench_cmd->add_option("--seed", be.seed, "Tensor fill seed");
  bench_cmd->add_flag("!--analytic-only", be.measure, "Skip timing");
  bench_cmd->add_option("--out", be.out, "CSV path (stdout when omitted)");

  DetectArgs de;
  auto* detect_cmd = app.add_subcommand("detect", "Detect people in one u16 depth frame");
  detect_cmd->add_option("--ckpt", de.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("--frame", de.frame, "Raw little-endian u16 frame")->required()->check(CLI::ExistingFile);
  add_threshold_check(detect_cmd->add_option("--threshold", de.threshold, "Decode threshold"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*ft_cmd) return run_finetune(ft);
    if (*eval_cmd) return run_eval(ev);
    if (*sweep_cmd) return run_sweep(sw);
    if (*bench_cmd) return run_bench(be);
    if (*detect_cmd) return run_detect(de);
  } catch (const NumericalError& e) {
    spdlog::error("{}", e.what());
    return kExitNumerical;
  } catch (const ParameterError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
  return kExitUsage;
}
