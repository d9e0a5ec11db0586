// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pd3net/layers.hpp"
#include "pd3net/random.hpp"

namespace pd3net::cost {

/// Stride-1, size-preserving convolution of a H x W x d tensor to depth D.
struct ConvConfig {
  std::uint64_t kernel = 3;
  std::uint64_t in_depth = 1;
  std::uint64_t out_depth = 1;
  std::uint64_t height = 1;
  std::uint64_t width = 1;

  void validate() const {
    if (kernel == 0 || kernel % 2 == 0) throw ParameterError("kernel size must be odd and positive");
    if (in_depth == 0 || out_depth == 0 || height == 0 || width == 0) {
      throw ParameterError("conv config dimensions must be positive");
    }
  }
};

struct Counts {
  std::uint64_t params = 0;
  std::uint64_t ops = 0;
};

struct CostReport {
  ConvConfig config;
  std::uint64_t nparam_conv = 0;
  std::uint64_t nops_conv = 0;
  std::uint64_t nparam_sep = 0;
  std::uint64_t nops_sep = 0;
  // Minimum d/D ratio for the separable layer to win; display only.
  double param_threshold = 0.0;
  double ops_threshold = 0.0;
  double both_threshold = 0.0;
  bool separable_wins_params = false;
  bool separable_wins_ops = false;
  bool separable_wins_both = false;
  std::optional<double> measured_conv_ns;
  std::optional<double> measured_sep_ns;
};

// K^2 d D weights; H W D (2K^2 - 1) d multiply/add operations.
inline Counts count_conv(const ConvConfig& cfg) {
  cfg.validate();
  const std::uint64_t k = cfg.kernel, d = cfg.in_depth, dd = cfg.out_depth;
  return Counts{k * k * d * dd, cfg.height * cfg.width * dd * ((2 * k * k - 1) * d)};
}

// K d D + K D^2 weights; H W D (2K - 1)(d + D) operations.
inline Counts count_sep(const ConvConfig& cfg) {
  cfg.validate();
  const std::uint64_t k = cfg.kernel, d = cfg.in_depth, dd = cfg.out_depth;
  return Counts{k * d * dd + k * dd * dd, cfg.height * cfg.width * dd * ((2 * k - 1) * (d + dd))};
}

inline double param_threshold(std::uint64_t kernel) {
  return 1.0 / static_cast<double>(kernel - 1);
}

inline double ops_threshold(std::uint64_t kernel) {
  const double k = static_cast<double>(kernel);
  return (2.0 * k - 1.0) / (2.0 * k * (k - 1.0));
}

/// Analytic comparison. The win flags compare the exact integer counters; the
/// thresholds are the equivalent d > t * D ratios.
inline CostReport separable_decision(const ConvConfig& cfg) {
  cfg.validate();
  if (cfg.kernel == 1) throw ParameterError("separable decision undefined for a 1x1 kernel");
  CostReport r;
  r.config = cfg;
  const Counts conv = count_conv(cfg);
  const Counts sep = count_sep(cfg);
  r.nparam_conv = conv.params;
  r.nops_conv = conv.ops;
  r.nparam_sep = sep.params;
  r.nops_sep = sep.ops;
  r.param_threshold = param_threshold(cfg.kernel);
  r.ops_threshold = ops_threshold(cfg.kernel);
  r.both_threshold = std::max(r.param_threshold, r.ops_threshold);
  r.separable_wins_params = conv.params > sep.params;
  r.separable_wins_ops = conv.ops > sep.ops;
  r.separable_wins_both = r.separable_wins_params && r.separable_wins_ops;
  return r;
}

inline const char* predicted_winner(const CostReport& r) {
  return r.separable_wins_both ? "separable" : "conventional";
}

namespace detail {
template <class F>
double median_ns(F&& run, std::size_t trials) {
  run();  // warm-up, not timed
  std::vector<double> samples;
  samples.reserve(trials);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  return samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
}
}  // namespace detail

/// Times the forward pass of both variants on the calling thread and attaches
/// the median wall-clock to the analytic report.
inline CostReport benchmark_pair(const ConvConfig& cfg, std::size_t trials, Rng& rng) {
  if (trials < 5) throw ParameterError("benchmark requires at least 5 trials");
  CostReport r = separable_decision(cfg);
  const std::size_t k = cfg.kernel, d = cfg.in_depth, dd = cfg.out_depth;
  const std::size_t pad = k / 2;
  auto x = make_var(tensor_new<float>(Shape{1, d, cfg.height, cfg.width}, fill::Uniform{0.0, 1.0}, rng));
  auto w = make_var(tensor_new<float>(Shape{dd, d, k, k}, fill::HeNormal{d * k * k}, rng));
  auto w_row = make_var(tensor_new<float>(Shape{dd, d, 1, k}, fill::HeNormal{d * k}, rng));
  auto w_col = make_var(tensor_new<float>(Shape{dd, dd, k, 1}, fill::HeNormal{dd * k}, rng));
  auto bias = make_var(TensorF(Shape{1, dd, 1, 1}));
  Tape<float>* no_tape = nullptr;
  r.measured_conv_ns = detail::median_ns(
      [&] { auto y = conv2d(no_tape, x, w, bias, ConvGeometry{1, 1, pad, pad}); }, trials);
  r.measured_sep_ns =
      detail::median_ns([&] { auto y = sepconv2d(no_tape, x, w_row, w_col, bias, 1, pad); }, trials);
  return r;
}

inline void write_csv_header(std::ostream& os) {
  os << "K,d,D,H,W,nparam_conv,nparam_sep,nops_conv,nops_sep,predicted_winner,measured_conv_ns,"
        "measured_sep_ns\n";
}

inline void write_csv_row(std::ostream& os, const CostReport& r) {
  const auto& c = r.config;
  os << c.kernel << ',' << c.in_depth << ',' << c.out_depth << ',' << c.height << ',' << c.width
     << ',' << r.nparam_conv << ',' << r.nparam_sep << ',' << r.nops_conv << ',' << r.nops_sep
     << ',' << predicted_winner(r) << ',';
  if (r.measured_conv_ns) os << static_cast<std::uint64_t>(*r.measured_conv_ns);
  os << ',';
  if (r.measured_sep_ns) os << static_cast<std::uint64_t>(*r.measured_sep_ns);
  os << '\n';
}

}  // namespace pd3net::cost
