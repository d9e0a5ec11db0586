// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pd3net/assignment.hpp"
#include "pd3net/error.hpp"
#include "pd3net/label_codec.hpp"
#include "pd3net/network.hpp"

namespace pd3net {

inline constexpr double kOcclusionIgnore = 0.5;
inline constexpr double kDefaultThreshold = 0.54;

struct MatchPair {
  std::size_t det = 0;
  std::size_t ann = 0;
  double distance = 0.0;
};

struct MatchResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t ignored = 0;
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> missed;         // annotation indices counted as fn
  std::vector<std::size_t> excused;        // annotation indices ignored
  std::vector<std::size_t> false_alarms;   // detection indices counted as fp
};

/// One-to-one matching within `gate_px`. Maximizes the number of matched
/// pairs, then minimizes their summed distance. A hit on an occluded
/// annotation still counts as a true positive.
inline MatchResult match_frame(std::span<const Detection> dets, std::span<const Annotation> anns,
                               double gate_px) {
  if (!(gate_px > 0.0)) throw ParameterError("gate_px must be > 0");
  MatchResult r;
  const std::size_t nd = dets.size(), na = anns.size();
  std::vector<double> dist(nd * na);
  double worst = 0.0;
  for (std::size_t i = 0; i < nd; ++i) {
    for (std::size_t j = 0; j < na; ++j) {
      dist[i * na + j] = std::hypot(dets[i].u - anns[j].u, dets[i].v - anns[j].v);
      worst = std::max(worst, dist[i * na + j]);
    }
  }
  // Out-of-gate pairs cost more than any full set of in-gate pairs.
  const double penalty = (worst + 1.0) * static_cast<double>(std::max<std::size_t>(1, std::min(nd, na)) + 1);
  std::vector<double> cost(dist);
  for (auto& c : cost) {
    if (c > gate_px) c = penalty;
  }
  const auto assign = min_cost_assignment(cost, nd, na);
  std::vector<bool> ann_used(na, false);
  for (std::size_t i = 0; i < nd; ++i) {
    const long j = assign[i];
    if (j >= 0 && dist[i * na + static_cast<std::size_t>(j)] <= gate_px) {
      r.pairs.push_back({i, static_cast<std::size_t>(j), dist[i * na + static_cast<std::size_t>(j)]});
      ann_used[static_cast<std::size_t>(j)] = true;
    } else {
      r.false_alarms.push_back(i);
    }
  }
  for (std::size_t j = 0; j < na; ++j) {
    if (ann_used[j]) continue;
    (anns[j].occlusion > kOcclusionIgnore ? r.excused : r.missed).push_back(j);
  }
  r.tp = r.pairs.size();
  r.fp = r.false_alarms.size();
  r.fn = r.missed.size();
  r.ignored = r.excused.size();
  return r;
}

struct MatchCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t ignored = 0;

  MatchCounts& operator+=(const MatchResult& m) {
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
    ignored += m.ignored;
    return *this;
  }
  std::size_t n_gt() const { return tp + fn; }
  std::size_t n_det() const { return tp + fp; }
};

struct MetricsReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double error = 0;
  double ci95_f1 = 0;
  std::size_t n_gt = 0;
  std::size_t n_det = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t ignored = 0;
};

inline MetricsReport compute_metrics(const MatchCounts& c) {
  if (c.n_gt() == 0) throw UndefinedMetricsError("metrics are undefined without ground-truth instances");
  MetricsReport m;
  m.tp = c.tp;
  m.fp = c.fp;
  m.fn = c.fn;
  m.ignored = c.ignored;
  m.n_gt = c.n_gt();
  m.n_det = c.n_det();
  const double tp = static_cast<double>(c.tp), n_gt = static_cast<double>(m.n_gt);
  m.precision = m.n_det == 0 ? 1.0 : tp / static_cast<double>(m.n_det);
  m.recall = tp / n_gt;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.error = static_cast<double>(c.fn + c.fp) / n_gt;
  m.ci95_f1 = 1.96 * std::sqrt(m.f1 * (1.0 - m.f1) / n_gt);
  return m;
}

/// Evenly spaced thresholds from t_min to t_max inclusive.
inline std::vector<double> threshold_grid(double t_min, double t_max, double step) {
  if (!(step > 0)) throw ParameterError("threshold step must be > 0");
  if (!(t_min > 0 && t_max < 1 && t_min <= t_max)) throw ParameterError("thresholds must satisfy 0 < t_min <= t_max < 1");
  const auto count = static_cast<std::size_t>(std::floor((t_max - t_min) / step + 1e-9)) + 1;
  std::vector<double> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(std::round((t_min + static_cast<double>(i) * step) * 1e9) / 1e9);
  }
  return out;
}

/// Match gate for a frame size: one head diameter.
inline double default_gate(std::size_t h, std::size_t w) { return head_diameter_for(h, w); }

/// Predicted maps paired with their ground truth.
struct EvalSet {
  std::vector<LikelihoodMap> maps;
  std::vector<std::vector<Annotation>> annotations;
};

inline MatchCounts evaluate_at(const EvalSet& set, double threshold, double gate_px, std::size_t min_area,
                               std::vector<MatchResult>* per_frame = nullptr) {
  if (set.maps.size() != set.annotations.size()) throw ShapeError("maps and annotations differ in length");
  MatchCounts total;
  for (std::size_t f = 0; f < set.maps.size(); ++f) {
    const auto dets = decode_detections(set.maps[f], threshold, min_area);
    auto m = match_frame(dets, set.annotations[f], gate_px);
    total += m;
    if (per_frame) per_frame->push_back(std::move(m));
  }
  return total;
}

struct SweepSample {
  double threshold = 0;
  MetricsReport metrics;
};

struct SweepCurve {
  std::vector<SweepSample> samples;
  double best_threshold = 0;
  double best_f1 = 0;
};

inline void refresh_best(SweepCurve& c) {
  c.best_f1 = -1;
  for (const auto& s : c.samples) {
    if (s.metrics.f1 > c.best_f1) {
      c.best_f1 = s.metrics.f1;
      c.best_threshold = s.threshold;
    }
  }
}

inline SweepCurve threshold_sweep(const EvalSet& set, std::span<const double> thresholds, double gate_px,
                                  std::size_t min_area) {
  if (thresholds.empty()) throw ParameterError("threshold list is empty");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0 && thresholds[i] < 1)) throw ParameterError("thresholds must lie in (0, 1)");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw ParameterError("thresholds must be strictly increasing");
  }
  SweepCurve c;
  for (double t : thresholds) c.samples.push_back({t, compute_metrics(evaluate_at(set, t, gate_px, min_area))});
  refresh_best(c);
  return c;
}

inline double select_threshold_tuned(const SweepCurve& curve) {
  if (curve.samples.empty()) throw StateError("no sweep curve available");
  return curve.best_threshold;
}

/// Argmax of the n_gt-weighted mean F1 across curves sharing one grid.
inline double select_threshold_global(std::span<const SweepCurve> curves) {
  if (curves.empty()) throw StateError("no sweep curves available");
  const auto& grid = curves.front().samples;
  if (grid.empty()) throw StateError("empty sweep curve");
  SweepCurve combined;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double num = 0, den = 0;
    for (const auto& c : curves) {
      if (c.samples.size() != grid.size() || c.samples[i].threshold != grid[i].threshold) {
        throw ParameterError("sweep curves use different threshold grids");
      }
      const double w = static_cast<double>(c.samples[i].metrics.n_gt);
      num += w * c.samples[i].metrics.f1;
      den += w;
    }
    SweepSample s{grid[i].threshold, {}};
    s.metrics.f1 = den > 0 ? num / den : 0.0;
    combined.samples.push_back(s);
  }
  refresh_best(combined);
  return combined.best_threshold;
}

/// Runs the network over frames and keeps the polished output.
inline std::vector<LikelihoodMap> predict_maps(NetworkGraph<float>& net, std::span<const std::vector<float>> images,
                                               std::size_t batch_size = 8) {
  net.set_mode(BnMode::kInfer);
  const std::size_t h = net.height(), w = net.width(), plane = h * w;
  std::vector<LikelihoodMap> out;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, images.size() - start);
    TensorF x(Shape{n, 1, h, w});
    for (std::size_t b = 0; b < n; ++b) {
      if (images[start + b].size() != plane) throw ShapeError("frame size does not match the network");
      std::copy(images[start + b].begin(), images[start + b].end(), x.ptr() + b * plane);
    }
    const auto y = net.forward(nullptr, make_var(std::move(x)));
    for (std::size_t b = 0; b < n; ++b) {
      LikelihoodMap m;
      m.height = h;
      m.width = w;
      m.values.assign(y.polished->ptr() + b * plane, y.polished->ptr() + (b + 1) * plane);
      out.push_back(std::move(m));
    }
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_metrics_json(std::ostream& os, const MetricsReport& m, double threshold) {
  os << "{\"threshold\": " << format_double(threshold) << ", \"precision\": " << format_double(m.precision)
     << ", \"recall\": " << format_double(m.recall) << ", \"f1\": " << format_double(m.f1)
     << ", \"error\": " << format_double(m.error) << ", \"ci95_f1\": " << format_double(m.ci95_f1)
     << ", \"n_gt\": " << m.n_gt << ", \"n_det\": " << m.n_det << ", \"tp\": " << m.tp << ", \"fp\": " << m.fp
     << ", \"fn\": " << m.fn << ", \"ignored\": " << m.ignored << "}\n";
}

inline void write_curve_csv(std::ostream& os, const SweepCurve& c) {
  os << "threshold,precision,recall,f1\n";
  for (const auto& s : c.samples) {
    os << format_double(s.threshold) << ',' << format_double(s.metrics.precision) << ','
       << format_double(s.metrics.recall) << ',' << format_double(s.metrics.f1) << '\n';
  }
}

inline void write_matches_csv(std::ostream& os, std::span<const MatchResult> frames) {
  os << "frame,kind,det,ann,distance\n";
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& m = frames[f];
    for (const auto& p : m.pairs) os << f << ",tp," << p.det << ',' << p.ann << ',' << format_double(p.distance) << '\n';
    for (auto d : m.false_alarms) os << f << ",fp," << d << ",,\n";
    for (auto a : m.missed) os << f << ",fn,," << a << ",\n";
    for (auto a : m.excused) os << f << ",ignored,," << a << ",\n";
  }
}

}  // namespace pd3net
