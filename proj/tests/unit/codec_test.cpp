// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>

#include "codec_cases.hpp"
#include "pd3net/label_codec.hpp"

namespace pd3net {
namespace {

std::size_t components(const LikelihoodMap& m, double t) { return decode_detections(m, t, 1).size(); }

TEST(Encode, SingleCentroidClosedForm) {
  const Annotation a{120, 160, 0};
  const auto m = encode_labels(std::span(&a, 1), 240, 320, 15.0);
  EXPECT_FLOAT_EQ(m.at(160, 120), 1.0f);
  EXPECT_NEAR(m.at(160, 126), std::exp(-36.0 / 72.0), 1e-6);
  EXPECT_NEAR(m.at(166, 120), 0.6065, 1e-4);
  EXPECT_EQ(m.at(160, 120 + 19), 0.0f);  // beyond the 3 sigma support
}

TEST(Encode, EmptyIsAllZero) {
  const auto m = encode_labels({}, 60, 80, 3.75);
  EXPECT_TRUE(std::all_of(m.values.begin(), m.values.end(), [](float v) { return v == 0.0f; }));
  EXPECT_TRUE(decode_detections(m, 0.5).empty());
}

TEST(Encode, RejectsBadInput) {
  const Annotation out_of_bounds{80, 10, 0};
  EXPECT_THROW(encode_labels(std::span(&out_of_bounds, 1), 60, 80, 3.75), ValidationError);
  EXPECT_THROW(encode_labels({}, 60, 80, 0.0), ParameterError);
}

TEST(Separation, RidgeBetweenClosePair) {
  const std::vector<Annotation> anns{{100, 120, 0}, {108, 120, 0}};
  const auto m = encode_labels(anns, 240, 320, 15.0);
  EXPECT_EQ(m.at(120, 104), 0.0f);
  EXPECT_EQ(components(m, 0.1), 2u);
  const std::vector<Annotation> far{{100, 120, 0}, {140, 120, 0}};
  EXPECT_EQ(components(encode_labels(far, 240, 320, 15.0), 0.1), 2u);
}

TEST(Separation, TwoSigmaApartGivesTwoComponents) {
  const std::vector<Annotation> anns{{150, 120, 0}, {162, 120, 0}};
  EXPECT_EQ(components(encode_labels(anns, 240, 320, 15.0), 0.2), 2u);
}

TEST(Separation, SinglePersonAndFarPairUnchanged) {
  CodecParams p;
  const double sigma = p.sigma();
  const std::vector<Annotation> anns{{60, 100, 0}, {60 + 10 * sigma, 100, 0}};
  LikelihoodMap raw(240, 320);
  for (const auto& a : anns) {
    const auto one = encode_labels(std::span(&a, 1), 240, 320, p);
    for (std::size_t i = 0; i < raw.values.size(); ++i) raw.values[i] = std::max(raw.values[i], one.values[i]);
  }
  EXPECT_EQ(separate_overlaps(raw, anns, p).values, raw.values);
  EXPECT_EQ(separate_overlaps(raw, std::span(anns.data(), 1), p).values, raw.values);
}

TEST(Separation, NeverRaisesAndStaysInRange) {
  Rng rng(3);
  CodecParams p;
  for (int trial = 0; trial < 50; ++trial) {
    auto anns = cases::sample_annotations(rng, 6, 120, 160, 2.0, 0.0);
    LikelihoodMap raw(120, 160);
    for (const auto& a : anns) {
      const auto one = encode_labels(std::span(&a, 1), 120, 160, p);
      for (std::size_t i = 0; i < raw.values.size(); ++i) raw.values[i] = std::max(raw.values[i], one.values[i]);
    }
    const auto sep = separate_overlaps(raw, anns, p);
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
      ASSERT_LE(sep.values[i], raw.values[i]);
      ASSERT_GE(sep.values[i], 0.0f);
      ASSERT_LE(sep.values[i], 1.0f);
    }
  }
}

TEST(Decode, ThresholdRegimesOnConstructedMaps) {
  const double sigma = 6.0;
  const Annotation a{140, 120, 0}, b{158, 120, 0};
  const auto equal = cases::two_gaussians(240, 320, sigma, a, 1.0, b, 1.0);
  EXPECT_EQ(components(equal, 0.1), 1u);
  EXPECT_EQ(components(equal, 0.4), 2u);
  const auto uneven = cases::two_gaussians(240, 320, sigma, a, 1.0, b, 0.7);
  EXPECT_EQ(components(uneven, 0.1), 1u);
  EXPECT_EQ(components(uneven, 0.4), 2u);
  EXPECT_EQ(components(uneven, 0.8), 1u);
}

TEST(Decode, DetectionFields) {
  const Annotation a{30.0, 20.0, 0};
  const auto m = encode_labels(std::span(&a, 1), 60, 80, 15.0);
  const auto dets = decode_detections(m, 0.5, 4);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_NEAR(dets[0].u, 30.0, 1e-6);
  EXPECT_NEAR(dets[0].v, 20.0, 1e-6);
  EXPECT_FLOAT_EQ(dets[0].peak, 1.0);
  EXPECT_GE(dets[0].area, 4u);
  EXPECT_TRUE(decode_detections(m, 0.5, dets[0].area + 1).empty());
}

TEST(Decode, RejectsThresholdOutsideOpenInterval) {
  LikelihoodMap m(4, 4);
  EXPECT_THROW(decode_detections(m, 0.0), ParameterError);
  EXPECT_THROW(decode_detections(m, 1.0), ParameterError);
  EXPECT_THROW(decode_detections(m.values, 4, 5, 0.5), ShapeError);
}

TEST(Decode, AboveThresholdPixelCountIsMonotone) {
  Rng rng(17);
  LikelihoodMap m(30, 40);
  for (auto& v : m.values) v = static_cast<float>(rng.uniform());
  std::size_t prev = m.values.size() + 1;
  for (double t = 0.05; t < 0.99; t += 0.05) {
    const auto dets = decode_detections(m, t);
    std::size_t area = 0;
    for (const auto& d : dets) area += d.area;
    EXPECT_LE(area, prev);
    prev = area;
  }
}

TEST(RoundTrip, NativeResolution) {
  Rng rng(5);
  CodecParams p;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(0, 10));
    const auto anns = cases::sample_annotations(rng, n, 240, 320, p.sigma(), p.head_diameter_px);
    const auto r = cases::round_trip(anns, 240, 320, p, 0.5, default_min_area(240, 320));
    ASSERT_TRUE(r.count_ok) << "trial " << trial;
    ASSERT_LE(r.worst_px, 1.0) << "trial " << trial;
  }
}

TEST(RoundTrip, ReducedResolutions) {
  Rng rng(6);
  struct Res { std::size_t h, w; double min_sigmas; };
  // At 60x80 one sigma is 1.5 px, below what disjoint 8-connected blobs can
  // resolve, so the pair spacing there is two sigma.
  for (const Res res : {Res{120, 160, 1.0}, Res{60, 80, 2.0}}) {
    CodecParams p;
    p.head_diameter_px = head_diameter_for(res.h, res.w);
    for (int trial = 0; trial < 200; ++trial) {
      const auto n = static_cast<std::size_t>(rng.uniform_int(0, 10));
      const auto anns = cases::sample_annotations(rng, n, res.h, res.w, res.min_sigmas * p.sigma(),
                                                  p.head_diameter_px);
      const auto r = cases::round_trip(anns, res.h, res.w, p, 0.5, default_min_area(res.h, res.w));
      ASSERT_TRUE(r.count_ok) << res.h << "x" << res.w << " trial " << trial;
      ASSERT_LE(r.worst_px, 1.0) << res.h << "x" << res.w << " trial " << trial;
    }
  }
}

TEST(Assignment, MatchesBruteForceOnSmallMatrices) {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const auto rows = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto cols = static_cast<std::size_t>(rng.uniform_int(1, 4));
    std::vector<double> cost(rows * cols);
    for (auto& c : cost) c = rng.uniform(0, 10);
    const auto got = min_cost_assignment(cost, rows, cols);
    double got_total = 0;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      if (got[i] >= 0) {
        got_total += cost[i * cols + static_cast<std::size_t>(got[i])];
        ++assigned;
      }
    }
    ASSERT_EQ(assigned, std::min(rows, cols));
    // Brute force over column permutations.
    std::vector<std::size_t> perm(std::max(rows, cols));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    double best = 1e300;
    do {
      double total = 0;
      for (std::size_t i = 0; i < rows; ++i)
        if (perm[i] < cols) total += cost[i * cols + perm[i]];
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    ASSERT_NEAR(got_total, best, 1e-9);
  }
}

}  // namespace
}  // namespace pd3net
