// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference computations used only by tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pd3net/tensor.hpp"

namespace pd3net::oracle {

// Direct six-loop cross-correlation (plus batch), zero padding.
inline TensorD conv2d(const TensorD& x, const TensorD& w, const std::vector<double>& bias,
                      std::size_t sh, std::size_t sw, std::size_t ph, std::size_t pw) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t oh = (xs.h + 2 * ph - ws.h) / sh + 1;
  const std::size_t ow = (xs.w + 2 * pw - ws.w) / sw + 1;
  TensorD out(Shape{xs.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const long iy = static_cast<long>(oy * sh + ky) - static_cast<long>(ph);
                const long ix = static_cast<long>(ox * sw + kx) - static_cast<long>(pw);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(xs.h) ||
                    ix >= static_cast<long>(xs.w))
                  continue;
                acc += w.at(o, c, ky, kx) * x.at(n, c, static_cast<std::size_t>(iy),
                                                 static_cast<std::size_t>(ix));
              }
          out.at(n, o, oy, ox) = acc;
        }
  return out;
}

inline TensorD window_max(const TensorD& x, std::size_t k, std::size_t s) {
  const Shape& xs = x.shape();
  const std::size_t oh = (xs.h - k) / s + 1, ow = (xs.w - k) / s + 1;
  TensorD out(Shape{xs.n, xs.c, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double m = -INFINITY;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) m = std::max(m, x.at(n, c, oy * s + ky, ox * s + kx));
          out.at(n, c, oy, ox) = m;
        }
  return out;
}

// Central differences of a scalar function of the entries of `x`.
inline std::vector<double> finite_difference(std::span<double> x,
                                             const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f();
    x[i] = orig - h;
    const double down = f();
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace pd3net::oracle
