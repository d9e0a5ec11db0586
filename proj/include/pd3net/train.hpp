// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "pd3net/checkpoint.hpp"
#include "pd3net/dataset.hpp"
#include "pd3net/kv_config.hpp"
#include "pd3net/label_codec.hpp"
#include "pd3net/loss.hpp"
#include "pd3net/network.hpp"
#include "pd3net/optim.hpp"

namespace pd3net {

struct TrainConfig {
  std::size_t stage1_epochs = 30;
  double stage1_lr = 1e-3;
  std::size_t stage2_epochs = 20;
  double stage2_lr = 1e-5;
  double momentum = 0.9;
  std::size_t batch_size = 4;
  std::size_t patience = 5;
  double train_fraction = 0.67;
  std::uint64_t seed = 1;
  double lambda1 = 1.3;
  double lambda2 = 1.0;
  std::string scale = "1/4";

  void validate() const {
    if (stage1_epochs + stage2_epochs == 0) throw ParameterError("training needs at least one epoch");
    if (batch_size == 0) throw ParameterError("batch_size must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ParameterError("train_fraction must be in (0, 1)");
    if (stage1_lr < 0 || stage2_lr < 0) throw ParameterError("learning rates must be >= 0");
    if (momentum < 0 || momentum >= 1) throw ParameterError("momentum must be in [0, 1)");
    LossWeights{lambda1, lambda2}.validate();
  }

  LossWeights weights() const { return LossWeights{lambda1, lambda2}; }

  static TrainConfig from(const KeyValueConfig& kv) {
    TrainConfig c;
    kv.read("stage1_epochs", c.stage1_epochs);
    kv.read("stage1_lr", c.stage1_lr);
    kv.read("stage2_epochs", c.stage2_epochs);
    kv.read("stage2_lr", c.stage2_lr);
    kv.read("momentum", c.momentum);
    kv.read("batch_size", c.batch_size);
    kv.read("patience", c.patience);
    kv.read("train_fraction", c.train_fraction);
    kv.read("seed", c.seed);
    kv.read("lambda1", c.lambda1);
    kv.read("lambda2", c.lambda2);
    kv.read("scale", c.scale);
    c.validate();
    return c;
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  int stage = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
};

inline void write_log_header(std::ostream& os) { os << "epoch,stage,train_loss,val_loss,lr\n"; }

inline void write_log_row(std::ostream& os, const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%d,%.9g,%.9g,%.9g\n", e.epoch, e.stage, e.train_loss, e.val_loss, e.lr);
  os << buf;
}

/// Inputs and cached label maps for one split.
struct PreparedSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::vector<float>> images;
  std::vector<LikelihoodMap> labels;
  std::vector<std::vector<Annotation>> annotations;

  std::size_t size() const { return images.size(); }
};

inline CodecParams codec_for(std::size_t h, std::size_t w) {
  CodecParams p;
  p.head_diameter_px = head_diameter_for(h, w);
  return p;
}

inline PreparedSet prepare(const Dataset& d) {
  PreparedSet p;
  if (d.empty()) return p;
  p.height = d.samples.front().height;
  p.width = d.samples.front().width;
  const CodecParams codec = codec_for(p.height, p.width);
  for (const auto& s : d.samples) {
    p.images.push_back(s.depth);
    p.labels.push_back(encode_labels(s.annotations, s.height, s.width, codec));
    p.annotations.push_back(s.annotations);
  }
  return p;
}

namespace detail {

inline void gather(const PreparedSet& set, std::span<const std::size_t> idx, TensorF& images, TensorF& labels) {
  const std::size_t plane = set.height * set.width;
  images = TensorF(Shape{idx.size(), 1, set.height, set.width});
  labels = TensorF(Shape{idx.size(), 1, set.height, set.width});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    std::copy(set.images[idx[b]].begin(), set.images[idx[b]].end(), images.ptr() + b * plane);
    std::copy(set.labels[idx[b]].values.begin(), set.labels[idx[b]].values.end(), labels.ptr() + b * plane);
  }
}

inline std::vector<Var<float>> param_vars(const NetworkGraph<float>& net) {
  std::vector<Var<float>> v;
  for (const auto& [name, p] : net.parameters()) v.push_back(p);
  return v;
}

}  // namespace detail

/// Mean loss over `set` in inference mode.
inline double evaluate_loss(NetworkGraph<float>& net, const PreparedSet& set, const LossWeights& w,
                            std::size_t batch_size) {
  if (set.size() == 0) throw ValidationError("evaluation set is empty");
  net.set_mode(BnMode::kInfer);
  double total = 0;
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  TensorF images, labels;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, idx.size() - start);
    detail::gather(set, std::span(idx).subspan(start, n), images, labels);
    const auto out = net.forward(nullptr, make_var(images));
    total += detection_loss(*out.initial, labels, *out.polished, labels, w).value * static_cast<double>(n);
  }
  return total / static_cast<double>(set.size());
}

/// Patience counter on a loss that should decrease.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double best) : patience_(patience), best_(best) {}

  // Returns true when `loss` is a new best.
  bool observe(double loss) {
    if (loss < best_) {
      best_ = loss;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return stale_ > patience_; }
  double best() const { return best_; }
  void reset_patience() { stale_ = 0; }

 private:
  std::size_t patience_;
  double best_;
  std::size_t stale_ = 0;
};

struct TrainResult {
  Checkpoint best;
  double initial_val_loss = 0;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Two-stage schedule: Adam for stage 1, then SGD with momentum for stage 2,
/// starting from the best stage-1 weights. Each stage stops early after
/// `patience` epochs without a validation improvement. The returned
/// checkpoint has the lowest validation loss seen, including the starting
/// weights.
inline TrainResult train_stages(NetworkGraph<float>& net, const PreparedSet& train_set,
                                const PreparedSet& val_set, const TrainConfig& cfg, bool run_stage1,
                                const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0) throw ValidationError("training set is empty");
  if (val_set.size() == 0) throw ValidationError("validation set is empty");
  const LossWeights w = cfg.weights();
  const auto params = detail::param_vars(net);

  TrainResult result;
  result.initial_val_loss = evaluate_loss(net, val_set, w, cfg.batch_size);
  EarlyStopping stopper(cfg.patience, result.initial_val_loss);
  auto best_snapshot = net.snapshot();
  TrainingMeta best_meta{0, 0, result.initial_val_loss};
  std::size_t epoch = 0;

  const auto run_stage = [&](int stage, std::size_t epochs, Optimizer<float> opt) {
    stopper.reset_patience();
    for (std::size_t e = 0; e < epochs; ++e) {
      ++epoch;
      net.set_mode(BnMode::kTrain);
      std::vector<std::size_t> order(train_set.size());
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng = Rng::stream(mix_seed(cfg.seed, 0x7a1), epoch);
      shuffle_rng.shuffle(order.begin(), order.end());
      double sum = 0;
      TensorF images, labels;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - start);
        detail::gather(train_set, std::span(order).subspan(start, n), images, labels);
        net.zero_grad();
        Tape<float> tape;
        const auto out = net.forward(&tape, make_var(images));
        const auto loss = detection_loss(*out.initial, labels, *out.polished, labels, w);
        const std::pair<Var<float>, std::span<const float>> seeds[] = {
            {out.initial, loss.grad_initial.data()}, {out.polished, loss.grad_polished.data()}};
        tape.backward(std::span(seeds));
        opt.step(params);
        sum += loss.value * static_cast<double>(n);
      }
      EpochLog row{epoch, stage, sum / static_cast<double>(order.size()), 0.0, opt.lr()};
      row.val_loss = evaluate_loss(net, val_set, w, cfg.batch_size);
      if (!std::isfinite(row.val_loss) || !std::isfinite(row.train_loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
      }
      result.log.push_back(row);
      if (on_epoch) on_epoch(row);
      if (stopper.observe(row.val_loss)) {
        best_snapshot = net.snapshot();
        best_meta = TrainingMeta{static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stage), row.val_loss};
      } else if (stopper.should_stop()) {
        break;
      }
    }
    net.restore(best_snapshot);
  };

  if (run_stage1 && cfg.stage1_epochs > 0) run_stage(1, cfg.stage1_epochs, Optimizer<float>::adam(cfg.stage1_lr));
  if (cfg.stage2_epochs > 0) {
    run_stage(2, cfg.stage2_epochs, Optimizer<float>::sgd_momentum(cfg.stage2_lr, cfg.momentum));
  }
  net.restore(best_snapshot);
  net.set_mode(BnMode::kInfer);
  result.best = capture(net, best_meta);
  return result;
}

/// Full schedule on a dataset split by `cfg.train_fraction`.
inline TrainResult train(NetworkGraph<float>& net, const Dataset& data, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw ValidationError("dataset is empty");
  cfg.validate();
  const auto [fit, val] = split_dataset(data, cfg.train_fraction);
  return train_stages(net, prepare(fit), prepare(val), cfg, true, on_epoch);
}

/// Stage-2-only training from a checkpoint. Zero epochs returns the input.
inline TrainResult fine_tune(const Checkpoint& start, const Dataset& data, const TrainConfig& cfg,
                             const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw ValidationError("dataset is empty");
  if (cfg.stage2_epochs == 0) return TrainResult{start, start.meta.best_val_loss, {}};
  auto net = network_from<float>(start);
  TrainConfig c = cfg;
  c.stage1_epochs = 0;
  const auto [fit, val] = split_dataset(data, c.train_fraction);
  return train_stages(net, prepare(fit), prepare(val), c, false, on_epoch);
}

}  // namespace pd3net
