// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "pd3net/error.hpp"

namespace pd3net {

/// Head centroid in pixel coordinates: u is the column, v the row.
struct Annotation {
  double u = 0.0;
  double v = 0.0;
  double occlusion = 0.0;
};

struct Detection {
  double u = 0.0;
  double v = 0.0;
  double peak = 0.0;
  std::size_t area = 0;
};

/// Single-channel confidence map, row-major.
struct LikelihoodMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  LikelihoodMap() = default;
  LikelihoodMap(std::size_t h, std::size_t w) : height(h), width(w), values(h * w, 0.0f) {}

  float& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

inline constexpr double kNativeHeadDiameter = 15.0;
inline constexpr double kSigmaPerDiameter = 2.5;

struct CodecParams {
  double head_diameter_px = kNativeHeadDiameter;
  double support_sigmas = 3.0;         // Gaussians are exactly zero beyond this radius
  double separation_margin_px = 0.75;  // > sqrt(2)/2 so blobs never touch diagonally

  double sigma() const { return head_diameter_px / kSigmaPerDiameter; }
};

/// Resolution factor relative to the native 240x320 frame.
inline double resolution_scale(std::size_t h, std::size_t w) {
  return std::min(static_cast<double>(h) / 240.0, static_cast<double>(w) / 320.0);
}

inline double head_diameter_for(std::size_t h, std::size_t w) {
  return kNativeHeadDiameter * resolution_scale(h, w);
}

inline std::size_t default_min_area(std::size_t h, std::size_t w) {
  const double s = resolution_scale(h, w);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(4.0 * s * s)));
}

namespace detail {

inline void check_annotations(std::span<const Annotation> anns, std::size_t h, std::size_t w) {
  for (const auto& a : anns) {
    if (!(a.u >= 0.0 && a.u < static_cast<double>(w) && a.v >= 0.0 &&
          a.v < static_cast<double>(h))) {
      throw ValidationError("annotation (" + std::to_string(a.u) + ", " + std::to_string(a.v) +
                            ") outside a " + std::to_string(h) + "x" + std::to_string(w) + " map");
    }
  }
}

// Radius each person's blob may occupy: the Gaussian support, shrunk so that
// neighbouring blobs stay a margin apart from the perpendicular bisector.
inline std::vector<double> blob_radii(std::span<const Annotation> anns, const CodecParams& p) {
  std::vector<double> r(anns.size(), p.support_sigmas * p.sigma());
  for (std::size_t i = 0; i < anns.size(); ++i) {
    for (std::size_t j = 0; j < anns.size(); ++j) {
      if (i == j) continue;
      const double d = std::hypot(anns[i].u - anns[j].u, anns[i].v - anns[j].v);
      r[i] = std::min(r[i], d / 2.0 - p.separation_margin_px);
    }
  }
  return r;
}

}  // namespace detail

/// Zeroes every pixel that lies outside the blob radius of its nearest person.
/// Values are only ever lowered.
inline LikelihoodMap separate_overlaps(LikelihoodMap map, std::span<const Annotation> anns,
                                       const CodecParams& params = {}) {
  if (anns.size() < 2) return map;
  const auto radii = detail::blob_radii(anns, params);
  for (std::size_t y = 0; y < map.height; ++y) {
    for (std::size_t x = 0; x < map.width; ++x) {
      float& v = map.at(y, x);
      if (v <= 0.0f) continue;
      double best = std::numeric_limits<double>::infinity();
      std::size_t owner = 0;
      for (std::size_t i = 0; i < anns.size(); ++i) {
        const double d2 = std::pow(static_cast<double>(x) - anns[i].u, 2) +
                          std::pow(static_cast<double>(y) - anns[i].v, 2);
        if (d2 < best) {
          best = d2;
          owner = i;
        }
      }
      if (radii[owner] <= 0.0 || best > radii[owner] * radii[owner]) v = 0.0f;
    }
  }
  return map;
}

/// Max over persons of exp(-r^2 / (2 sigma^2)), sigma = DD / 2.5, with
/// compact support, followed by overlap separation.
inline LikelihoodMap encode_labels(std::span<const Annotation> anns, std::size_t h, std::size_t w,
                                   const CodecParams& params = {}) {
  if (!(params.head_diameter_px > 0.0)) throw ParameterError("head diameter must be > 0");
  detail::check_annotations(anns, h, w);
  LikelihoodMap map(h, w);
  const double sigma = params.sigma();
  const double support = params.support_sigmas * sigma;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& a : anns) {
    const auto lo_y = static_cast<long>(std::max(0.0, std::floor(a.v - support)));
    const auto hi_y = static_cast<long>(std::min(static_cast<double>(h) - 1, std::ceil(a.v + support)));
    const auto lo_x = static_cast<long>(std::max(0.0, std::floor(a.u - support)));
    const auto hi_x = static_cast<long>(std::min(static_cast<double>(w) - 1, std::ceil(a.u + support)));
    for (long y = lo_y; y <= hi_y; ++y) {
      for (long x = lo_x; x <= hi_x; ++x) {
        const double r2 = std::pow(x - a.u, 2) + std::pow(y - a.v, 2);
        if (r2 > support * support) continue;
        float& dst = map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        dst = std::max(dst, static_cast<float>(std::exp(-r2 * inv)));
      }
    }
  }
  return separate_overlaps(std::move(map), anns, params);
}

inline LikelihoodMap encode_labels(std::span<const Annotation> anns, std::size_t h, std::size_t w,
                                   double head_diameter_px) {
  CodecParams p;
  p.head_diameter_px = head_diameter_px;
  return encode_labels(anns, h, w, p);
}

/// Threshold-plane decoding: pixels >= t, 8-connected components with at
/// least `min_area` pixels, confidence-weighted centroids. Components are
/// reported in raster order of their first pixel.
inline std::vector<Detection> decode_detections(std::span<const float> values, std::size_t h,
                                                std::size_t w, double threshold,
                                                std::size_t min_area = 1) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("decode threshold must be in (0, 1)");
  if (values.size() != h * w) throw ShapeError("decode: map size does not match h x w");
  const auto t = static_cast<float>(threshold);
  std::vector<char> seen(h * w, 0);
  std::vector<std::size_t> stack;
  std::vector<Detection> out;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (seen[start] || !(values[start] >= t)) continue;
    double sum = 0, su = 0, sv = 0, peak = 0;
    std::size_t area = 0;
    seen[start] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      const std::size_t y = idx / w, x = idx % w;
      const double val = values[idx];
      sum += val;
      su += val * static_cast<double>(x);
      sv += val * static_cast<double>(y);
      peak = std::max(peak, val);
      ++area;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
          const std::size_t n = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (!seen[n] && values[n] >= t) {
            seen[n] = 1;
            stack.push_back(n);
          }
        }
      }
    }
    if (area < min_area) continue;
    out.push_back(Detection{su / sum, sv / sum, peak, area});
  }
  return out;
}

inline std::vector<Detection> decode_detections(const LikelihoodMap& map, double threshold,
                                                std::size_t min_area = 1) {
  return decode_detections(map.values, map.height, map.width, threshold, min_area);
}

}  // namespace pd3net
