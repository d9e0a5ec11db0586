// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pd3net/error.hpp"
#include "pd3net/random.hpp"

namespace pd3net {

/// (batch, channels, height, width).
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  friend bool operator==(const Shape&, const Shape&) = default;

  std::size_t spatial() const noexcept { return h * w; }

  // Throws SizeError when n*c*h*w does not fit in size_t.
  std::size_t numel() const {
    std::size_t total = 1;
    for (std::size_t dim : {n, c, h, w}) {
      if (dim != 0 && total > std::numeric_limits<std::size_t>::max() / dim) {
        throw SizeError("tensor size overflow for shape " + to_string());
      }
      total *= dim;
    }
    return total;
  }

  std::string to_string() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

namespace fill {
struct Constant {
  double value = 0.0;
};
struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};
struct HeNormal {
  std::size_t fan_in = 1;
};
}  // namespace fill

using Fill = std::variant<fill::Constant, fill::Uniform, fill::HeNormal>;

/// Dense row-major 4-D array with an optional gradient buffer of the same shape.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T value = T(0)) : shape_(shape), data_(shape.numel(), value) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.to_string());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }

  bool has_grad() const noexcept { return grad_.has_value(); }

  // Allocates a zero gradient on first access.
  std::span<T> grad() {
    if (!grad_) grad_.emplace(data_.size(), T(0));
    return *grad_;
  }
  std::span<const T> grad() const {
    if (!grad_) throw StateError("gradient requested before it was populated");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }
  void drop_grad() noexcept { grad_.reset(); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
  std::optional<std::vector<T>> grad_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <class T>
Tensor<T> tensor_new(Shape shape, const Fill& how, Rng& rng) {
  Tensor<T> out(shape);
  auto data = out.data();
  std::visit(
      [&](const auto& f) {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, fill::Constant>) {
          std::fill(data.begin(), data.end(), static_cast<T>(f.value));
        } else if constexpr (std::is_same_v<F, fill::Uniform>) {
          if (f.lo > f.hi) throw ParameterError("uniform fill requires lo <= hi");
          for (auto& v : data) v = static_cast<T>(rng.uniform(f.lo, f.hi));
        } else {
          if (f.fan_in < 1) throw ParameterError("he_normal fill requires fan_in >= 1");
          const double stddev = std::sqrt(2.0 / static_cast<double>(f.fan_in));
          for (auto& v : data) v = static_cast<T>(rng.normal(0.0, stddev));
        }
      },
      how);
  return out;
}

template <class T>
Tensor<T> tensor_new(Shape shape, const Fill& how) {
  Rng rng(0);
  return tensor_new<T>(shape, how, rng);
}

enum class BinaryOp { kAdd, kSub, kMul };

namespace detail {
inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.to_string() + " vs " +
                     b.to_string());
  }
}
}  // namespace detail

template <class T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "elementwise");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  switch (op) {
    case BinaryOp::kAdd:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      break;
    case BinaryOp::kSub:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      break;
    case BinaryOp::kMul:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      break;
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kAdd, a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kSub, a, b);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kMul, a, b);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T k) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = k * x[i];
  return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + sa.to_string() + " vs " +
                     sb.to_string());
  }
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t plane = sa.spatial();
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(a.ptr() + n * sa.c * plane, sa.c * plane, out.ptr() + n * (sa.c + sb.c) * plane);
    std::copy_n(b.ptr() + n * sb.c * plane, sb.c * plane,
                out.ptr() + (n * (sa.c + sb.c) + sa.c) * plane);
  }
  return out;
}

// Channels [first, first + count).
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count) {
  const Shape& s = x.shape();
  if (first + count > s.c) throw ShapeError("slice_channels: range exceeds channel count");
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::size_t plane = s.spatial();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(x.ptr() + (n * s.c + first) * plane, count * plane,
                out.ptr() + n * count * plane);
  }
  return out;
}

/// ((top, bottom), (left, right)) pixel counts.
struct Crop {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  friend bool operator==(const Crop&, const Crop&) = default;
};

inline Shape cropped_shape(const Shape& s, const Crop& crop) {
  if (crop.top + crop.bottom >= s.h || crop.left + crop.right >= s.w) {
    throw ShapeError("crop2d: crop " + std::to_string(crop.top) + "+" +
                     std::to_string(crop.bottom) + " x " + std::to_string(crop.left) + "+" +
                     std::to_string(crop.right) + " does not fit " + s.to_string());
  }
  return Shape{s.n, s.c, s.h - crop.top - crop.bottom, s.w - crop.left - crop.right};
}

template <class T>
Tensor<T> crop2d(const Tensor<T>& x, const Crop& crop) {
  const Shape& s = x.shape();
  const Shape os = cropped_shape(s, crop);
  Tensor<T> out(os);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = x.ptr() + p * s.spatial();
    T* dst = out.ptr() + p * os.spatial();
    for (std::size_t y = 0; y < os.h; ++y) {
      std::copy_n(src + (y + crop.top) * s.w + crop.left, os.w, dst + y * os.w);
    }
  }
  return out;
}

// Inverse geometry of crop2d: surrounds the map with zeros.
template <class T>
Tensor<T> zero_pad2d(const Tensor<T>& x, const Crop& pad) {
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, s.h + pad.top + pad.bottom, s.w + pad.left + pad.right};
  Tensor<T> out(os);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = x.ptr() + p * s.spatial();
    T* dst = out.ptr() + p * os.spatial();
    for (std::size_t y = 0; y < s.h; ++y) {
      std::copy_n(src + y * s.w, s.w, dst + (y + pad.top) * os.w + pad.left);
    }
  }
  return out;
}

}  // namespace pd3net
