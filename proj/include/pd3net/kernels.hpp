// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

// Dense inner loops shared by the convolution layers. All kernels accumulate
// into their output and use a fixed loop order, so results do not depend on
// anything but the inputs.

#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace pd3net::kernels {

namespace detail {

// C[M x N] += A * B[K x N], where A(i, k) = a[i * ars + k * acs].
template <class T>
void gemm_strided_a(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t ars,
                    std::size_t acs, const T* __restrict b, T* __restrict c) {
  constexpr std::size_t kTile = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
    const std::size_t nb = std::min(kTile, n - j0);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* __restrict c0 = c + (i + 0) * n + j0;
      T* __restrict c1 = c + (i + 1) * n + j0;
      T* __restrict c2 = c + (i + 2) * n + j0;
      T* __restrict c3 = c + (i + 3) * n + j0;
      for (std::size_t p = 0; p < k; ++p) {
        const T a0 = a[(i + 0) * ars + p * acs];
        const T a1 = a[(i + 1) * ars + p * acs];
        const T a2 = a[(i + 2) * ars + p * acs];
        const T a3 = a[(i + 3) * ars + p * acs];
        const T* __restrict brow = b + p * n + j0;
        for (std::size_t j = 0; j < nb; ++j) {
          const T bv = brow[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* __restrict c0 = c + i * n + j0;
      for (std::size_t p = 0; p < k; ++p) {
        const T a0 = a[i * ars + p * acs];
        const T* __restrict brow = b + p * n + j0;
        for (std::size_t j = 0; j < nb; ++j) c0[j] += a0 * brow[j];
      }
    }
  }
}

}  // namespace detail

// C[M x N] += A[M x K] * B[K x N]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  detail::gemm_strided_a(m, n, k, a, k, 1, b, c);
}

// C[M x N] += A[K x M]^T * B[K x N]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  detail::gemm_strided_a(m, n, k, a, 1, m, b, c);
}

// C[M x N] += A[M x K] * B[N x K]^T. `scratch` receives B^T.
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             std::vector<T>& scratch) {
  scratch.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, n, k, a, scratch.data(), c);
}

/// Convolution window geometry for one spatial plane.
struct Window {
  std::size_t in_h = 0, in_w = 0;
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  std::size_t ph = 0, pw = 0;

  std::size_t out_h() const { return (in_h + 2 * ph - kh) / sh + 1; }
  std::size_t out_w() const { return (in_w + 2 * pw - kw) / sw + 1; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0; }
};

// cols[(c*kh + ky)*kw + kx][oy*ow + ox] = x[c][oy*sh - ph + ky][ox*sw - pw + kx] (0 outside).
template <class T>
void im2col(const T* x, std::size_t channels, const Window& g, T* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = oh * ow;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const T* src = x + ch * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((ch * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          T* dst = row + oy * ow;
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) -
                                    static_cast<std::ptrdiff_t>(g.ph);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill_n(dst, ow, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kx) -
                                      static_cast<std::ptrdiff_t>(g.pw);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w))
                          ? T(0)
                          : srow[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds cols back into dx.
template <class T>
void col2im(const T* cols, std::size_t channels, const Window& g, T* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = oh * ow;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    T* dst = dx + ch * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((ch * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) -
                                    static_cast<std::ptrdiff_t>(g.ph);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * g.in_w;
          const T* srow = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kx) -
                                      static_cast<std::ptrdiff_t>(g.pw);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            drow[static_cast<std::size_t>(ix)] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace pd3net::kernels
