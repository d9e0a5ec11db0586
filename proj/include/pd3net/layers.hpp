// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable layer functions. Every function takes an optional tape: with
// a tape the call records its backward closure; with nullptr it is a plain
// forward evaluation.

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pd3net/autograd.hpp"
#include "pd3net/kernels.hpp"
#include "pd3net/tensor.hpp"

namespace pd3net {

/// Square convolution hyper-parameters as used by the cost model and the
/// network builder.
struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool factorized = false;

  void validate() const {
    if (kernel == 0 || kernel % 2 == 0) throw ParameterError("kernel size must be odd and positive");
    if (stride == 0) throw ParameterError("stride must be >= 1");
    if (in_channels == 0 || out_channels == 0) throw ParameterError("channel counts must be >= 1");
  }

  std::size_t out_size(std::size_t in) const {
    if (in + 2 * padding < kernel) {
      throw ShapeError("input extent " + std::to_string(in) + " smaller than kernel " +
                       std::to_string(kernel));
    }
    return (in + 2 * padding - kernel) / stride + 1;
  }
};

struct ConvGeometry {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

namespace detail {

inline kernels::Window conv_window(const Shape& x, const Shape& w, const ConvGeometry& g) {
  if (w.c != x.c) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, kernel expects " +
                     std::to_string(w.c));
  }
  if (g.stride_h == 0 || g.stride_w == 0) throw ParameterError("conv2d: stride must be >= 1");
  if (x.h + 2 * g.pad_h < w.h || x.w + 2 * g.pad_w < w.w) {
    throw ShapeError("conv2d: kernel " + w.to_string() + " larger than padded input " +
                     x.to_string());
  }
  return kernels::Window{x.h, x.w, w.h, w.w, g.stride_h, g.stride_w, g.pad_h, g.pad_w};
}

template <class T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                    const kernels::Window& win, Tensor<T>& out) {
  const Shape& xs = x.shape();
  const std::size_t d = xs.c, dd = w.shape().n;
  const std::size_t kk = d * win.kh * win.kw;
  const std::size_t plane = win.out_h() * win.out_w();
  std::vector<T> cols;
  if (!win.is_pointwise()) cols.resize(kk * plane);
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* xn = x.ptr() + n * d * xs.spatial();
    T* yn = out.ptr() + n * dd * plane;
    if (bias) {
      for (std::size_t o = 0; o < dd; ++o) std::fill_n(yn + o * plane, plane, (*bias)[o]);
    }
    const T* b = xn;
    if (!win.is_pointwise()) {
      kernels::im2col(xn, d, win, cols.data());
      b = cols.data();
    }
    kernels::gemm_nn(dd, plane, kk, w.ptr(), b, yn);
  }
}

}  // namespace detail

/// Cross-correlation with zero padding. weight is (D, d, kh, kw); bias (1, D, 1, 1) or null.
template <class T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              ConvGeometry g = {}) {
  const auto win = detail::conv_window(x->shape(), weight->shape(), g);
  if (bias && bias->size() != weight->shape().n) throw ShapeError("conv2d: bias length mismatch");
  const Shape os{x->shape().n, weight->shape().n, win.out_h(), win.out_w()};
  auto out = make_var(Tensor<T>(os));
  detail::conv2d_forward(*x, *weight, bias.get(), win, *out);
  if (tape) {
    tape->record("conv2d", [x, weight, bias, out, win] {
      if (!out->has_grad()) return;
      const Shape& xs = x->shape();
      const std::size_t d = xs.c, dd = weight->shape().n;
      const std::size_t kk = d * win.kh * win.kw;
      const std::size_t plane = win.out_h() * win.out_w();
      const T* dy = out->grad().data();
      T* dw = weight->grad().data();
      T* dx = x->grad().data();
      std::vector<T> cols, dcols, scratch;
      if (!win.is_pointwise()) {
        cols.resize(kk * plane);
        dcols.resize(kk * plane);
      }
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* xn = x->ptr() + n * d * xs.spatial();
        const T* dyn = dy + n * dd * plane;
        T* dxn = dx + n * d * xs.spatial();
        if (bias) {
          T* db = bias->grad().data();
          for (std::size_t o = 0; o < dd; ++o) {
            T s = 0;
            for (std::size_t p = 0; p < plane; ++p) s += dyn[o * plane + p];
            db[o] += s;
          }
        }
        if (win.is_pointwise()) {
          kernels::gemm_nt(dd, kk, plane, dyn, xn, dw, scratch);
          kernels::gemm_tn(kk, plane, dd, weight->ptr(), dyn, dxn);
        } else {
          kernels::im2col(xn, d, win, cols.data());
          kernels::gemm_nt(dd, kk, plane, dyn, cols.data(), dw, scratch);
          std::fill(dcols.begin(), dcols.end(), T(0));
          kernels::gemm_tn(kk, plane, dd, weight->ptr(), dyn, dcols.data());
          kernels::col2im(dcols.data(), d, win, dxn);
        }
      }
    });
  }
  return out;
}

/// Spatially separable convolution with cost K*d*D + K*D^2 weights.
///
/// Stage one is a 1xK row filter (d -> D, stride 1, width padding p). Stage
/// two is a Kx1 column filter (D -> D, stride s, height padding p) carrying
/// the bias, so the output geometry matches a KxK convolution with (s, p).
template <class T>
Var<T> sepconv2d(Tape<T>* tape, const Var<T>& x, const Var<T>& w_row, const Var<T>& w_col,
                 const Var<T>& bias, std::size_t stride = 1, std::size_t padding = 0) {
  const Shape& r = w_row->shape();
  const Shape& c = w_col->shape();
  if (r.h != 1 || c.w != 1 || r.w != c.h || c.c != r.n || c.n != r.n) {
    throw ShapeError("sepconv2d: expected row (D,d,1,K) and column (D,D,K,1) kernels, got " +
                     r.to_string() + " and " + c.to_string());
  }
  auto mid = conv2d(tape, x, w_row, Var<T>{}, ConvGeometry{1, 1, 0, padding});
  return conv2d(tape, mid, w_col, bias, ConvGeometry{stride, stride, padding, 0});
}

template <class T>
Var<T> upsample_nearest(Tape<T>* tape, const Var<T>& x, std::size_t factor) {
  if (factor < 1) throw ParameterError("upsample factor must be >= 1");
  const Shape& s = x->shape();
  const Shape os{s.n, s.c, s.h * factor, s.w * factor};
  auto out = make_var(Tensor<T>(os));
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = x->ptr() + p * s.spatial();
    T* dst = out->ptr() + p * os.spatial();
    for (std::size_t y = 0; y < os.h; ++y) {
      const T* srow = src + (y / factor) * s.w;
      T* drow = dst + y * os.w;
      for (std::size_t xx = 0; xx < os.w; ++xx) drow[xx] = srow[xx / factor];
    }
  }
  if (tape) {
    tape->record("upsample_nearest", [x, out, factor] {
      if (!out->has_grad()) return;
      const Shape& s = x->shape();
      const Shape& os = out->shape();
      auto dy = out->grad();
      auto dx = x->grad();
      for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t y = 0; y < os.h; ++y) {
          for (std::size_t xx = 0; xx < os.w; ++xx) {
            dx[p * s.spatial() + (y / factor) * s.w + xx / factor] +=
                dy[p * os.spatial() + y * os.w + xx];
          }
        }
      }
    });
  }
  return out;
}

/// Nearest-neighbour upsampling by `factor` followed by a size-preserving
/// stride-1 convolution.
template <class T>
Var<T> resized_conv(Tape<T>* tape, const Var<T>& x, std::size_t factor, const Var<T>& weight,
                    const Var<T>& bias) {
  if (factor < 1) throw ParameterError("resized_conv: upsample factor must be >= 1");
  const Shape& w = weight->shape();
  auto up = factor == 1 ? x : upsample_nearest(tape, x, factor);
  return conv2d(tape, up, weight, bias, ConvGeometry{1, 1, w.h / 2, w.w / 2});
}

enum class BnMode { kTrain, kInfer };

template <class T>
struct BatchNormState {
  Var<T> gamma;
  Var<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.99);
  T epsilon = T(1e-5);
  BnMode mode = BnMode::kTrain;

  static BatchNormState make(std::size_t channels) {
    BatchNormState s;
    const Shape shape{1, channels, 1, 1};
    s.gamma = make_var(Tensor<T>(shape, T(1)));
    s.beta = make_var(Tensor<T>(shape, T(0)));
    s.running_mean = Tensor<T>(shape, T(0));
    s.running_var = Tensor<T>(shape, T(1));
    return s;
  }

  std::size_t channels() const { return gamma->size(); }
};

/// y = gamma * (x - mean) / sqrt(var + eps) + beta per channel. Train mode uses
/// batch statistics (biased variance) and folds them into the running
/// statistics with weight `momentum` on the old value.
template <class T>
Var<T> batchnorm(Tape<T>* tape, const Var<T>& x, BatchNormState<T>& state) {
  const Shape& s = x->shape();
  const std::size_t c = s.c;
  if (state.gamma->size() != c || state.beta->size() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    throw ShapeError("batchnorm: parameter length does not match " + std::to_string(c) +
                     " channels");
  }
  const std::size_t plane = s.spatial();
  const std::size_t count = s.n * plane;
  if (count == 0) throw ValidationError("batchnorm: channel has zero elements");

  std::vector<T> mean(c), inv_std(c);
  const bool train = state.mode == BnMode::kTrain;
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (train) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x->ptr() + (n * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x->ptr() + (n * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double dv = p[i] - mu;
          sq += dv * dv;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + state.epsilon));
      state.running_mean[ch] =
          state.momentum * state.running_mean[ch] + (T(1) - state.momentum) * static_cast<T>(mu);
      state.running_var[ch] =
          state.momentum * state.running_var[ch] + (T(1) - state.momentum) * static_cast<T>(var);
    } else {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(state.running_var[ch] + state.epsilon);
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(x->size());
  auto out = make_var(Tensor<T>(s));
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (n * c + ch) * plane;
      const T g = (*state.gamma)[ch], b = (*state.beta)[ch];
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = ((*x)[off + i] - mean[ch]) * inv_std[ch];
        (*xhat)[off + i] = h;
        (*out)[off + i] = g * h + b;
      }
    }
  }

  if (tape) {
    tape->record("batchnorm", [x, out, xhat, inv_std, train, gamma = state.gamma,
                               beta = state.beta] {
      if (!out->has_grad()) return;
      const Shape& s = x->shape();
      const std::size_t c = s.c, plane = s.spatial();
      const T m = static_cast<T>(s.n * plane);
      auto dy = out->grad();
      auto dx = x->grad();
      auto dg = gamma->grad();
      auto db = beta->grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t n = 0; n < s.n; ++n) {
          const std::size_t off = (n * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += dy[off + i];
            sum_dy_xhat += dy[off + i] * (*xhat)[off + i];
          }
        }
        dg[ch] += sum_dy_xhat;
        db[ch] += sum_dy;
        const T k = (*gamma)[ch] * inv_std[ch];
        for (std::size_t n = 0; n < s.n; ++n) {
          const std::size_t off = (n * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            if (train) {
              dx[off + i] += k / m * (m * dy[off + i] - sum_dy - (*xhat)[off + i] * sum_dy_xhat);
            } else {
              dx[off + i] += k * dy[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Var<T> leaky_relu(Tape<T>* tape, const Var<T>& x, T alpha) {
  if (!(alpha > T(0) && alpha <= T(1))) throw ParameterError("leaky_relu slope must be in (0, 1]");
  auto out = make_var(Tensor<T>(x->shape()));
  for (std::size_t i = 0; i < x->size(); ++i) {
    const T v = (*x)[i];
    (*out)[i] = v >= T(0) ? v : alpha * v;
  }
  if (tape) {
    tape->record("leaky_relu", [x, out, alpha] {
      if (!out->has_grad()) return;
      auto dy = out->grad();
      auto dx = x->grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += (*x)[i] >= T(0) ? dy[i] : alpha * dy[i];
    });
  }
  return out;
}

template <class T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
Var<T> sigmoid(Tape<T>* tape, const Var<T>& x) {
  auto out = make_var(Tensor<T>(x->shape()));
  for (std::size_t i = 0; i < x->size(); ++i) (*out)[i] = sigmoid_scalar((*x)[i]);
  if (tape) {
    tape->record("sigmoid", [x, out] {
      if (!out->has_grad()) return;
      auto dy = out->grad();
      auto dx = x->grad();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const T y = (*out)[i];
        dx[i] += dy[i] * y * (T(1) - y);
      }
    });
  }
  return out;
}

/// Non-overlapping-or-strided max pooling with floor output size. Backward
/// routes each output gradient to the first maximum in its window.
template <class T>
Var<T> maxpool(Tape<T>* tape, const Var<T>& x, std::size_t window, std::size_t stride) {
  if (window < 1 || stride < 1) throw ParameterError("maxpool window and stride must be >= 1");
  const Shape& s = x->shape();
  if (window > s.h || window > s.w) {
    throw ShapeError("maxpool: window " + std::to_string(window) + " larger than input " +
                     s.to_string());
  }
  const Shape os{s.n, s.c, (s.h - window) / stride + 1, (s.w - window) / stride + 1};
  auto out = make_var(Tensor<T>(os));
  auto argmax = std::make_shared<std::vector<std::size_t>>(out->size());
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = x->ptr() + p * s.spatial();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        std::size_t best = (oy * stride) * s.w + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = (oy * stride + ky) * s.w + ox * stride + kx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = p * os.spatial() + oy * os.w + ox;
        (*out)[o] = src[best];
        (*argmax)[o] = p * s.spatial() + best;
      }
    }
  }
  if (tape) {
    tape->record("maxpool", [x, out, argmax] {
      if (!out->has_grad()) return;
      auto dy = out->grad();
      auto dx = x->grad();
      for (std::size_t o = 0; o < dy.size(); ++o) dx[(*argmax)[o]] += dy[o];
    });
  }
  return out;
}

template <class T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  auto out = make_var(add(*a, *b));
  if (tape) {
    tape->record("add", [a, b, out] {
      if (!out->has_grad()) return;
      auto dy = out->grad();
      detail::accumulate<T>(a->grad(), dy);
      detail::accumulate<T>(b->grad(), dy);
    });
  }
  return out;
}

template <class T>
Var<T> concat_channels(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  auto out = make_var(concat_channels(*a, *b));
  if (tape) {
    tape->record("concat_channels", [a, b, out] {
      if (!out->has_grad()) return;
      const Shape& sa = a->shape();
      const Shape& sb = b->shape();
      const std::size_t plane = sa.spatial();
      auto dy = out->grad();
      auto da = a->grad();
      auto db = b->grad();
      for (std::size_t n = 0; n < sa.n; ++n) {
        const std::size_t base = n * (sa.c + sb.c) * plane;
        for (std::size_t i = 0; i < sa.c * plane; ++i) da[n * sa.c * plane + i] += dy[base + i];
        for (std::size_t i = 0; i < sb.c * plane; ++i) {
          db[n * sb.c * plane + i] += dy[base + sa.c * plane + i];
        }
      }
    });
  }
  return out;
}

template <class T>
Var<T> crop2d(Tape<T>* tape, const Var<T>& x, const Crop& crop) {
  auto out = make_var(crop2d(*x, crop));
  if (tape) {
    tape->record("crop2d", [x, out, crop] {
      if (!out->has_grad()) return;
      const Shape& s = x->shape();
      const Shape& os = out->shape();
      auto dy = out->grad();
      auto dx = x->grad();
      for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t y = 0; y < os.h; ++y) {
          for (std::size_t xx = 0; xx < os.w; ++xx) {
            dx[p * s.spatial() + (y + crop.top) * s.w + xx + crop.left] +=
                dy[p * os.spatial() + y * os.w + xx];
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Var<T> zero_pad2d(Tape<T>* tape, const Var<T>& x, const Crop& pad) {
  auto out = make_var(zero_pad2d(*x, pad));
  if (tape) {
    tape->record("zero_pad2d", [x, out, pad] {
      if (!out->has_grad()) return;
      const Shape& s = x->shape();
      const Shape& os = out->shape();
      auto dy = out->grad();
      auto dx = x->grad();
      for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t y = 0; y < s.h; ++y) {
          for (std::size_t xx = 0; xx < s.w; ++xx) {
            dx[p * s.spatial() + y * s.w + xx] +=
                dy[p * os.spatial() + (y + pad.top) * os.w + xx + pad.left];
          }
        }
      }
    });
  }
  return out;
}

// Gradient passes only where the input already lies in [0, 1].
template <class T>
Var<T> clamp01(Tape<T>* tape, const Var<T>& x) {
  auto out = make_var(Tensor<T>(x->shape()));
  for (std::size_t i = 0; i < x->size(); ++i) (*out)[i] = std::clamp((*x)[i], T(0), T(1));
  if (tape) {
    tape->record("clamp01", [x, out] {
      if (!out->has_grad()) return;
      auto dy = out->grad();
      auto dx = x->grad();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const T v = (*x)[i];
        if (v >= T(0) && v <= T(1)) dx[i] += dy[i];
      }
    });
  }
  return out;
}

}  // namespace pd3net
