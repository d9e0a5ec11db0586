// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pd3net/layers.hpp"

namespace pd3net {
namespace {

Var<double> rand_var(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  return make_var(tensor_new<double>(s, fill::Uniform{lo, hi}, rng));
}

std::vector<double> bias_values(const Var<double>& b) {
  return b ? std::vector<double>(b->data().begin(), b->data().end()) : std::vector<double>{};
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  Rng rng(21);
  struct Case { Shape x; Shape w; std::size_t sh, sw, ph, pw; bool bias; };
  const Case cases[] = {
      {{1, 1, 5, 5}, {1, 1, 3, 3}, 1, 1, 1, 1, true},
      {{2, 3, 9, 7}, {4, 3, 3, 3}, 2, 2, 1, 1, true},
      {{1, 2, 8, 8}, {3, 2, 7, 7}, 2, 2, 3, 3, false},
      {{2, 4, 6, 5}, {5, 4, 1, 1}, 1, 1, 0, 0, true},
      {{1, 3, 7, 9}, {2, 3, 1, 1}, 2, 2, 0, 0, false},
      {{1, 2, 6, 8}, {3, 2, 1, 5}, 1, 1, 0, 2, false},
      {{1, 3, 6, 8}, {3, 3, 5, 1}, 2, 2, 2, 0, true},
  };
  for (const auto& c : cases) {
    auto x = rand_var(c.x, rng);
    auto w = rand_var(c.w, rng);
    Var<double> b = c.bias ? rand_var(Shape{1, c.w.n, 1, 1}, rng) : Var<double>{};
    Tape<double>* none = nullptr;
    auto y = conv2d(none, x, w, b, ConvGeometry{c.sh, c.sw, c.ph, c.pw});
    auto ref = oracle::conv2d(*x, *w, bias_values(b), c.sh, c.sw, c.ph, c.pw);
    ASSERT_EQ(y->shape(), ref.shape());
    EXPECT_LT(oracle::max_abs_diff(y->data(), ref.data()), 1e-12) << c.w.to_string();
  }
}

TEST(Conv2d, IdentityCenterKernelAndOnesKernel) {
  Tape<double>* none = nullptr;
  auto x = make_var(TensorD(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  TensorD center(Shape{1, 1, 3, 3});
  center.at(0, 0, 1, 1) = 1;
  auto same = conv2d(none, x, make_var(center), Var<double>{}, ConvGeometry{1, 1, 1, 1});
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ((*same)[i], (*x)[i]);

  auto ones = make_var(TensorD(Shape{1, 1, 3, 3}, 1.0));
  auto y = conv2d(none, x, ones, Var<double>{}, ConvGeometry{1, 1, 0, 0});
  ASSERT_EQ(y->size(), 1u);
  EXPECT_DOUBLE_EQ((*y)[0], 45.0);
}

TEST(Conv2d, ShapeErrors) {
  Tape<double>* none = nullptr;
  auto x = make_var(TensorD(Shape{1, 2, 4, 4}));
  EXPECT_THROW(conv2d(none, x, make_var(TensorD(Shape{1, 3, 3, 3})), Var<double>{}), ShapeError);
  EXPECT_THROW(conv2d(none, x, make_var(TensorD(Shape{1, 2, 5, 5})), Var<double>{}), ShapeError);
}

TEST(SepConv2d, RankOneKernelEqualsFullConvolution) {
  Rng rng(4);
  for (std::size_t k : {3u, 5u, 7u}) {
    for (std::size_t stride : {1u, 2u}) {
      const std::size_t d = 2, dd = 3, p = k / 2;
      auto x = rand_var(Shape{2, d, 11, 13}, rng);
      // Row stage maps each input channel to D channels; column stage is
      // diagonal so every output channel sees one rank-1 factorization.
      auto w_row = rand_var(Shape{dd, d, 1, k}, rng);
      TensorD col(Shape{dd, dd, k, 1});
      std::vector<double> v(dd * k);
      for (auto& e : v) e = rng.uniform(-1, 1);
      for (std::size_t o = 0; o < dd; ++o)
        for (std::size_t i = 0; i < k; ++i) col.at(o, o, i, 0) = v[o * k + i];
      auto w_col = make_var(col);
      auto bias = rand_var(Shape{1, dd, 1, 1}, rng);

      TensorD full(Shape{dd, d, k, k});
      for (std::size_t o = 0; o < dd; ++o)
        for (std::size_t c = 0; c < d; ++c)
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) full.at(o, c, i, j) = v[o * k + i] * w_row->at(o, c, 0, j);

      Tape<double>* none = nullptr;
      auto y = sepconv2d(none, x, w_row, w_col, bias, stride, p);
      auto ref = oracle::conv2d(*x, full, bias_values(bias), stride, stride, p, p);
      ASSERT_EQ(y->shape(), ref.shape());
      EXPECT_LT(oracle::max_abs_diff(y->data(), ref.data()), 1e-10) << "K=" << k << " s=" << stride;
    }
  }
}

TEST(SepConv2d, RejectsMismatchedFactors) {
  Tape<double>* none = nullptr;
  auto x = make_var(TensorD(Shape{1, 2, 6, 6}));
  auto row = make_var(TensorD(Shape{3, 2, 1, 3}));
  auto bad_col = make_var(TensorD(Shape{3, 3, 5, 1}));
  EXPECT_THROW(sepconv2d(none, x, row, bad_col, Var<double>{}), ShapeError);
}

TEST(Upsample, NearestReplicatesBlocks) {
  Tape<double>* none = nullptr;
  auto x = make_var(TensorD(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  auto y = upsample_nearest(none, x, 3);
  ASSERT_EQ(y->shape(), (Shape{1, 1, 6, 6}));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(y->at(0, 0, r, c), x->at(0, 0, r / 3, c / 3));
  EXPECT_THROW(upsample_nearest(none, x, 0), ParameterError);
}

TEST(ResizedConv, EqualsUpsampleThenSamePaddingConv) {
  Rng rng(8);
  auto x = rand_var(Shape{1, 2, 5, 4}, rng);
  auto w = rand_var(Shape{3, 2, 3, 3}, rng);
  auto b = rand_var(Shape{1, 3, 1, 1}, rng);
  Tape<double>* none = nullptr;
  auto y = resized_conv(none, x, 2, w, b);
  ASSERT_EQ(y->shape(), (Shape{1, 3, 10, 8}));
  auto up = upsample_nearest(none, x, 2);
  auto ref = oracle::conv2d(*up, *w, bias_values(b), 1, 1, 1, 1);
  EXPECT_LT(oracle::max_abs_diff(y->data(), ref.data()), 1e-12);
}

TEST(BatchNorm, TrainModeNormalizesAndUpdatesRunningStats) {
  Rng rng(12);
  auto x = rand_var(Shape{3, 2, 4, 5}, rng, -2, 5);
  auto state = BatchNormState<double>::make(2);
  Tape<double>* none = nullptr;
  auto y = batchnorm(none, x, state);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0, xm = 0, xsq = 0;
    const double count = 3 * 20;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 20; ++i) {
        mean += y->at(n, c, i / 5, i % 5);
        xm += x->at(n, c, i / 5, i % 5);
      }
    mean /= count;
    xm /= count;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 20; ++i) {
        sq += std::pow(y->at(n, c, i / 5, i % 5) - mean, 2);
        xsq += std::pow(x->at(n, c, i / 5, i % 5) - xm, 2);
      }
    EXPECT_NEAR(mean, 0.0, 1e-12);
    const double var = xsq / count;
    EXPECT_NEAR(sq / count, var / (var + 1e-5), 1e-10);
    EXPECT_NEAR(state.running_mean[c], 0.01 * xm, 1e-12);
    EXPECT_NEAR(state.running_var[c], 0.99 + 0.01 * var, 1e-12);
  }
}

TEST(BatchNorm, InferModeUsesRunningStats) {
  auto state = BatchNormState<double>::make(1);
  state.mode = BnMode::kInfer;
  state.running_mean[0] = 2.0;
  state.running_var[0] = 4.0;
  (*state.gamma)[0] = 3.0;
  (*state.beta)[0] = 1.0;
  auto x = make_var(TensorD(Shape{1, 1, 1, 2}, {2.0, 4.0}));
  Tape<double>* none = nullptr;
  auto y = batchnorm(none, x, state);
  EXPECT_NEAR((*y)[0], 1.0, 1e-12);
  EXPECT_NEAR((*y)[1], 1.0 + 3.0 * 2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_EQ(state.running_mean[0], 2.0);
}

TEST(BatchNorm, ChannelMismatchThrows) {
  auto state = BatchNormState<double>::make(3);
  Tape<double>* none = nullptr;
  EXPECT_THROW(batchnorm(none, make_var(TensorD(Shape{1, 2, 2, 2})), state), ShapeError);
}

TEST(LeakyRelu, ValuesAndSlopeValidation) {
  Tape<double>* none = nullptr;
  auto x = make_var(TensorD(Shape{1, 1, 1, 3}, {-2.0, 0.0, 3.0}));
  auto y = leaky_relu(none, x, 0.1);
  EXPECT_DOUBLE_EQ((*y)[0], -0.2);
  EXPECT_DOUBLE_EQ((*y)[1], 0.0);
  EXPECT_DOUBLE_EQ((*y)[2], 3.0);
  EXPECT_THROW(leaky_relu(none, x, 0.0), ParameterError);
  EXPECT_THROW(leaky_relu(none, x, 1.5), ParameterError);
}

TEST(Sigmoid, StableAtExtremes) {
  Tape<double>* none = nullptr;
  auto x = make_var(TensorD(Shape{1, 1, 1, 4}, {-800.0, 0.0, 800.0, 2.0}));
  auto y = sigmoid(none, x);
  EXPECT_EQ((*y)[0], 0.0);
  EXPECT_EQ((*y)[1], 0.5);
  EXPECT_EQ((*y)[2], 1.0);
  EXPECT_NEAR((*y)[3], 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  for (double v : y->data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(MaxPool, MatchesBruteForceWithFloorSize) {
  Rng rng(30);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{120, 160}, {10, 11}, {7, 9}}) {
    auto x = rand_var(Shape{2, 3, h, w}, rng);
    Tape<double>* none = nullptr;
    auto y = maxpool(none, x, 3, 3);
    auto ref = oracle::window_max(*x, 3, 3);
    ASSERT_EQ(y->shape(), ref.shape());
    EXPECT_EQ(oracle::max_abs_diff(y->data(), ref.data()), 0.0);
  }
  Tape<double>* none = nullptr;
  EXPECT_EQ(maxpool(none, make_var(TensorD(Shape{1, 1, 120, 160})), 3, 3)->shape(),
            (Shape{1, 1, 40, 53}));
}

TEST(MaxPool, GradientGoesToFirstArgmax) {
  Tape<double> tape;
  auto x = make_var(TensorD(Shape{1, 1, 2, 2}, {5.0, 5.0, 1.0, 5.0}));
  auto y = maxpool(&tape, x, 2, 2);
  const double seed[] = {1.0};
  tape.backward(y, std::span<const double>(seed));
  EXPECT_EQ(x->grad()[0], 1.0);
  EXPECT_EQ(x->grad()[1], 0.0);
  EXPECT_EQ(x->grad()[3], 0.0);
}

TEST(Clamp01, ForwardAndGradientMask) {
  Tape<double> tape;
  auto x = make_var(TensorD(Shape{1, 1, 1, 3}, {-0.5, 0.4, 1.5}));
  auto y = clamp01(&tape, x);
  EXPECT_EQ((*y)[0], 0.0);
  EXPECT_EQ((*y)[1], 0.4);
  EXPECT_EQ((*y)[2], 1.0);
  const double seed[] = {1.0, 1.0, 1.0};
  tape.backward(y, std::span<const double>(seed));
  EXPECT_EQ(x->grad()[0], 0.0);
  EXPECT_EQ(x->grad()[1], 1.0);
  EXPECT_EQ(x->grad()[2], 0.0);
}

TEST(Tape, BackwardWithoutForwardThrows) {
  Tape<double> tape;
  auto x = make_var(TensorD(Shape{1, 1, 1, 1}));
  const double seed[] = {1.0};
  EXPECT_THROW(tape.backward(x, std::span<const double>(seed)), StateError);
}

}  // namespace
}  // namespace pd3net
