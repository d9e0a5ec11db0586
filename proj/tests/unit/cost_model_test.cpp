// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pd3net/cost_model.hpp"

namespace pd3net::cost {
namespace {

double truncate_to(double v, int digits) {
  const double p = std::pow(10.0, digits);
  return std::floor(v * p + 1e-9) / p;
}

TEST(CountConv, WorkedExamples) {
  const auto c = count_conv(ConvConfig{3, 64, 256, 1, 1});
  EXPECT_EQ(c.params, 147456u);
  EXPECT_EQ(c.ops, 278528u);
  const auto unit = count_conv(ConvConfig{1, 1, 1, 1, 1});
  EXPECT_EQ(unit.params, 1u);
  EXPECT_EQ(unit.ops, 1u);
}

TEST(CountConv, DoublingHeightDoublesOpsOnly) {
  const auto a = count_conv(ConvConfig{5, 7, 11, 13, 17});
  const auto b = count_conv(ConvConfig{5, 7, 11, 26, 17});
  EXPECT_EQ(b.ops, 2 * a.ops);
  EXPECT_EQ(b.params, a.params);
}

TEST(CountSep, WorkedExamples) {
  EXPECT_EQ(count_sep(ConvConfig{3, 64, 256, 1, 1}).params, 245760u);
  EXPECT_EQ(count_sep(ConvConfig{3, 256, 256, 1, 1}).ops, 655360u);
  EXPECT_EQ(count_sep(ConvConfig{1, 1, 1, 1, 1}).params, 2u);
}

TEST(SeparableDecision, PrintedThresholdTable) {
  struct Row { std::uint64_t k; double param; int pdigits; double ops; int odigits; };
  const Row rows[] = {{3, 0.5, 1, 0.416, 3}, {5, 0.25, 2, 0.225, 3}, {7, 0.16, 2, 0.154, 3}};
  for (const auto& r : rows) {
    const auto rep = separable_decision(ConvConfig{r.k, 8, 8, 1, 1});
    EXPECT_DOUBLE_EQ(truncate_to(rep.param_threshold, r.pdigits), r.param) << "K=" << r.k;
    EXPECT_DOUBLE_EQ(truncate_to(rep.ops_threshold, r.odigits), r.ops) << "K=" << r.k;
    EXPECT_DOUBLE_EQ(rep.both_threshold, std::max(rep.param_threshold, rep.ops_threshold));
  }
  EXPECT_NEAR(ops_threshold(3), 0.41667, 1e-5);
  EXPECT_NEAR(param_threshold(7), 0.16667, 1e-5);
  EXPECT_NEAR(ops_threshold(7), 0.15476, 1e-5);
}

TEST(SeparableDecision, ThresholdsDecreaseWithKernel) {
  for (std::uint64_t k = 3; k < 15; k += 2) {
    EXPECT_GT(param_threshold(k), param_threshold(k + 2));
    EXPECT_GT(ops_threshold(k), ops_threshold(k + 2));
  }
}

TEST(SeparableDecision, ExhaustiveCounterInequalityConsistency) {
  for (std::uint64_t k : {3u, 5u, 7u}) {
    for (std::uint64_t d = 1; d <= 128; ++d) {
      for (std::uint64_t dd = 1; dd <= 128; ++dd) {
        const auto r = separable_decision(ConvConfig{k, d, dd, 4, 4});
        const bool params_ineq = d * (k - 1) > dd;
        const bool ops_ineq = d * 2 * k * (k - 1) > (2 * k - 1) * dd;
        ASSERT_EQ(r.separable_wins_params, params_ineq) << k << " " << d << " " << dd;
        ASSERT_EQ(r.separable_wins_ops, ops_ineq) << k << " " << d << " " << dd;
        ASSERT_EQ(r.separable_wins_both, params_ineq && ops_ineq);
        ASSERT_EQ(r.separable_wins_params, r.nparam_conv > r.nparam_sep);
        ASSERT_EQ(r.separable_wins_ops, r.nops_conv > r.nops_sep);
        // Off the exact boundary the display threshold agrees with the counters.
        const double dr = static_cast<double>(d), Dr = static_cast<double>(dd);
        if (d * (k - 1) != dd) ASSERT_EQ(dr > r.param_threshold * Dr, params_ineq);
        if (d * 2 * k * (k - 1) != (2 * k - 1) * dd) ASSERT_EQ(dr > r.ops_threshold * Dr, ops_ineq);
      }
    }
  }
}

TEST(SeparableDecision, FirstLayerStaysConventional) {
  const auto r = separable_decision(ConvConfig{7, 1, 64, 240, 320});
  EXPECT_FALSE(r.separable_wins_both);
  EXPECT_NEAR(r.param_threshold * 64, 10.6667, 1e-3);
  EXPECT_STREQ(predicted_winner(r), "conventional");
  EXPECT_STREQ(predicted_winner(separable_decision(ConvConfig{3, 256, 256, 64, 64})), "separable");
}

TEST(SeparableDecision, RejectsDegenerateKernel) {
  EXPECT_THROW(separable_decision(ConvConfig{1, 4, 4, 1, 1}), ParameterError);
  EXPECT_THROW(count_conv(ConvConfig{4, 4, 4, 1, 1}), ParameterError);
  EXPECT_THROW(count_conv(ConvConfig{3, 0, 4, 1, 1}), ParameterError);
}

TEST(BenchmarkPair, RequiresFiveTrials) {
  Rng rng(1);
  EXPECT_THROW(benchmark_pair(ConvConfig{3, 2, 2, 8, 8}, 0, rng), ParameterError);
  EXPECT_THROW(benchmark_pair(ConvConfig{3, 2, 2, 8, 8}, 4, rng), ParameterError);
  const auto r = benchmark_pair(ConvConfig{3, 2, 2, 8, 8}, 5, rng);
  ASSERT_TRUE(r.measured_conv_ns && r.measured_sep_ns);
  EXPECT_GT(*r.measured_conv_ns, 0.0);
}

TEST(Csv, HeaderAndRow) {
  std::ostringstream os;
  write_csv_header(os);
  write_csv_row(os, separable_decision(ConvConfig{3, 64, 256, 1, 1}));
  EXPECT_EQ(os.str(),
            "K,d,D,H,W,nparam_conv,nparam_sep,nops_conv,nops_sep,predicted_winner,measured_conv_ns,"
            "measured_sep_ns\n3,64,256,1,1,147456,245760,278528,409600,conventional,,\n");
}

}  // namespace
}  // namespace pd3net::cost
