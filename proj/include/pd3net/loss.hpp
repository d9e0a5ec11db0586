// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "pd3net/error.hpp"
#include "pd3net/tensor.hpp"

namespace pd3net {

struct LossWeights {
  double lambda1 = 1.3;  // pixels where the ground truth is > 0
  double lambda2 = 1.0;  // pixels where the ground truth is 0

  void validate() const {
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) throw ParameterError("loss weights must be > 0");
  }
};

template <class T>
struct LossValue {
  double value = 0.0;
  Tensor<T> grad_initial;
  Tensor<T> grad_polished;
};

namespace detail {

// Masked squared error of one map pair. Each mask term is averaged over its
// own pixel count within a frame, then frames are averaged. Adds dL/dpred
// into `grad`.
template <class T>
double masked_term(const Tensor<T>& pred, const Tensor<T>& truth, const LossWeights& w,
                   Tensor<T>& grad) {
  const Shape& s = pred.shape();
  const std::size_t frame = s.c * s.spatial();
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* p = pred.ptr() + n * frame;
    const T* g = truth.ptr() + n * frame;
    std::size_t npos = 0;
    double pos = 0.0, zero = 0.0;
    for (std::size_t i = 0; i < frame; ++i) {
      const double e = static_cast<double>(p[i]) - static_cast<double>(g[i]);
      if (g[i] > T(0)) {
        pos += e * e;
        ++npos;
      } else {
        zero += e * e;
      }
    }
    const std::size_t nzero = frame - npos;
    const double kp = npos ? w.lambda1 / static_cast<double>(npos) : 0.0;
    const double kz = nzero ? w.lambda2 / static_cast<double>(nzero) : 0.0;
    total += kp * pos + kz * zero;
    T* d = grad.ptr() + n * frame;
    const double inv_n = 1.0 / static_cast<double>(s.n);
    for (std::size_t i = 0; i < frame; ++i) {
      const double e = static_cast<double>(p[i]) - static_cast<double>(g[i]);
      d[i] += static_cast<T>(2.0 * e * (g[i] > T(0) ? kp : kz) * inv_n);
    }
  }
  return total / static_cast<double>(s.n);
}

}  // namespace detail

/// Weighted four-term loss over the initial and polished maps with gradients
/// with respect to both predictions.
template <class T>
LossValue<T> detection_loss(const Tensor<T>& c_hat, const Tensor<T>& c, const Tensor<T>& cp_hat,
                            const Tensor<T>& cp, const LossWeights& weights = {}) {
  weights.validate();
  if (c_hat.shape() != c.shape() || cp_hat.shape() != cp.shape() || c.shape() != cp.shape()) {
    throw ShapeError("loss: prediction and ground-truth maps must share a shape");
  }
  if (c.shape().n == 0) throw ValidationError("loss: empty batch");
  LossValue<T> out{0.0, Tensor<T>(c.shape()), Tensor<T>(c.shape())};
  out.value = detail::masked_term(c_hat, c, weights, out.grad_initial) +
              detail::masked_term(cp_hat, cp, weights, out.grad_polished);
  if (!std::isfinite(out.value)) throw NumericalError("loss is not finite");
  return out;
}

}  // namespace pd3net
