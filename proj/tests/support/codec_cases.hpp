// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

// Random annotation sets and the round-trip check shared by the codec unit
// tests and the acceptance runner.

#pragma once

#include <cmath>
#include <vector>

#include "pd3net/assignment.hpp"
#include "pd3net/label_codec.hpp"
#include "pd3net/random.hpp"

namespace pd3net::cases {

// Rejection-samples `n` points with pairwise distance >= min_dist, kept
// `margin` pixels inside the frame.
inline std::vector<Annotation> sample_annotations(Rng& rng, std::size_t n, std::size_t h,
                                                  std::size_t w, double min_dist, double margin) {
  std::vector<Annotation> out;
  for (int attempts = 0; out.size() < n && attempts < 100000; ++attempts) {
    Annotation a{rng.uniform(margin, static_cast<double>(w) - margin),
                 rng.uniform(margin, static_cast<double>(h) - margin), 0.0};
    bool ok = true;
    for (const auto& b : out) ok = ok && std::hypot(a.u - b.u, a.v - b.v) >= min_dist;
    if (ok) out.push_back(a);
  }
  return out;
}

struct RoundTrip {
  bool count_ok = false;
  double worst_px = 0.0;
};

// Pairs detections to annotations by minimum total distance.
inline RoundTrip round_trip(std::span<const Annotation> anns, std::size_t h, std::size_t w,
                            const CodecParams& params, double threshold, std::size_t min_area) {
  const auto map = encode_labels(anns, h, w, params);
  const auto dets = decode_detections(map, threshold, min_area);
  RoundTrip r;
  r.count_ok = dets.size() == anns.size();
  if (!r.count_ok || anns.empty()) return r;
  std::vector<double> cost(anns.size() * dets.size());
  for (std::size_t i = 0; i < anns.size(); ++i)
    for (std::size_t j = 0; j < dets.size(); ++j)
      cost[i * dets.size() + j] = std::hypot(anns[i].u - dets[j].u, anns[i].v - dets[j].v);
  const auto match = min_cost_assignment(cost, anns.size(), dets.size());
  for (std::size_t i = 0; i < anns.size(); ++i) {
    r.worst_px = std::max(r.worst_px, cost[i * dets.size() + static_cast<std::size_t>(match[i])]);
  }
  return r;
}

// Max of two isotropic Gaussians with the given peaks, no separation.
inline LikelihoodMap two_gaussians(std::size_t h, std::size_t w, double sigma, Annotation a,
                                   double peak_a, Annotation b, double peak_b) {
  LikelihoodMap m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto g = [&](const Annotation& c, double peak) {
        const double r2 = std::pow(x - c.u, 2) + std::pow(y - c.v, 2);
        return peak * std::exp(-r2 / (2 * sigma * sigma));
      };
      m.at(y, x) = static_cast<float>(std::max(g(a, peak_a), g(b, peak_b)));
    }
  return m;
}

}  // namespace pd3net::cases
