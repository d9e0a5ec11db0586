// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pd3net/autograd.hpp"
#include "pd3net/error.hpp"

namespace pd3net {

namespace detail {

template <class T>
void ensure_buffers(std::vector<std::vector<T>>& buf, std::span<const Var<T>> params) {
  if (buf.empty()) {
    for (const auto& p : params) buf.emplace_back(p->size(), T(0));
  }
  if (buf.size() != params.size()) throw ShapeError("optimizer: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (buf[i].size() != params[i]->size()) throw ShapeError("optimizer: parameter shape changed");
  }
}

template <class T>
void check_grads(std::span<const Var<T>> params, std::span<const std::span<const T>> grads) {
  if (grads.size() != params.size()) throw ShapeError("optimizer: one gradient per parameter required");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i]->size()) {
      throw ShapeError("optimizer: gradient " + std::to_string(i) + " has " +
                       std::to_string(grads[i].size()) + " values, parameter has " +
                       std::to_string(params[i]->size()));
    }
  }
}

// Gradient views; parameters that never received a gradient read as zero.
template <class T>
std::vector<std::span<const T>> grads_of(std::span<const Var<T>> params, std::vector<std::vector<T>>& zeros) {
  std::vector<std::span<const T>> g;
  g.reserve(params.size());
  for (const auto& p : params) {
    if (p->has_grad()) {
      g.push_back(std::as_const(*p).grad());
    } else {
      zeros.emplace_back(p->size(), T(0));
      g.push_back(zeros.back());
    }
  }
  return g;
}

}  // namespace detail

template <class T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// Bias-corrected Adam update.
template <class T>
void adam_step(AdamState<T>& s, std::span<const Var<T>> params, std::span<const std::span<const T>> grads) {
  detail::check_grads(params, grads);
  detail::ensure_buffers(s.m, params);
  detail::ensure_buffers(s.v, params);
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  const double step_size = s.lr / c1;
  const double inv_c2 = 1.0 / c2;
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->ptr();
    T* m = s.m[i].data();
    T* v = s.v[i].data();
    const T* g = grads[i].data();
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const double denom = std::sqrt(static_cast<double>(v[k]) * inv_c2) + s.epsilon;
      p[k] -= static_cast<T>(step_size * static_cast<double>(m[k]) / denom);
    }
  }
}

template <class T>
struct SgdMomentumState {
  double lr = 1e-5;
  double momentum = 0.9;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> velocity;
};

/// v <- mu v + g; p <- p - lr v.
template <class T>
void sgd_momentum_step(SgdMomentumState<T>& s, std::span<const Var<T>> params,
                       std::span<const std::span<const T>> grads) {
  detail::check_grads(params, grads);
  detail::ensure_buffers(s.velocity, params);
  ++s.step;
  const T mu = static_cast<T>(s.momentum), lr = static_cast<T>(s.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->ptr();
    T* v = s.velocity[i].data();
    const T* g = grads[i].data();
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      v[k] = mu * v[k] + g[k];
      p[k] -= lr * v[k];
    }
  }
}

/// Either optimizer applied to the gradients stored on the parameters.
template <class T>
class Optimizer {
 public:
  static Optimizer adam(double lr) {
    Optimizer o;
    o.is_adam_ = true;
    o.adam_.lr = lr;
    return o;
  }
  static Optimizer sgd_momentum(double lr, double momentum) {
    Optimizer o;
    o.is_adam_ = false;
    o.sgd_.lr = lr;
    o.sgd_.momentum = momentum;
    return o;
  }

  bool is_adam() const { return is_adam_; }
  double lr() const { return is_adam_ ? adam_.lr : sgd_.lr; }

  void step(std::span<const Var<T>> params) {
    std::vector<std::vector<T>> zeros;
    zeros.reserve(params.size());
    const auto grads = detail::grads_of(params, zeros);
    if (is_adam_) {
      adam_step(adam_, params, std::span<const std::span<const T>>(grads));
    } else {
      sgd_momentum_step(sgd_, params, std::span<const std::span<const T>>(grads));
    }
  }

 private:
  bool is_adam_ = true;
  AdamState<T> adam_;
  SgdMomentumState<T> sgd_;
};

}  // namespace pd3net
