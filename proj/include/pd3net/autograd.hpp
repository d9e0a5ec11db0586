// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pd3net/error.hpp"
#include "pd3net/tensor.hpp"

namespace pd3net {

// Activations and parameters are shared so tape records can keep forward
// intermediates alive until backward runs.
template <class T>
using Var = std::shared_ptr<Tensor<T>>;

template <class T>
Var<T> make_var(Tensor<T> t) {
  return std::make_shared<Tensor<T>>(std::move(t));
}

/// Ordered record of executed layer applications.
///
/// Each record owns a closure that reads the gradient of its output and
/// accumulates into the gradients of its inputs. Running them in reverse order
/// is reverse-mode differentiation of the recorded forward pass.
template <class T>
class Tape {
 public:
  struct Record {
    std::string op;
    std::function<void()> backward;
  };

  void record(std::string op, std::function<void()> backward) {
    records_.push_back(Record{std::move(op), std::move(backward)});
  }

  bool empty() const noexcept { return records_.empty(); }
  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }
  void clear() noexcept { records_.clear(); }

  // Seeds each output gradient, replays records newest-first, then clears.
  void backward(std::span<const std::pair<Var<T>, std::span<const T>>> seeds) {
    if (records_.empty()) throw StateError("backward called before any forward pass");
    for (const auto& [out, g] : seeds) {
      if (g.size() != out->size()) {
        throw ShapeError("loss gradient length " + std::to_string(g.size()) +
                         " does not match output " + out->shape().to_string());
      }
      auto dst = out->grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
    records_.clear();
  }

  void backward(const Var<T>& out, std::span<const T> loss_grad) {
    const std::pair<Var<T>, std::span<const T>> seed{out, loss_grad};
    backward(std::span(&seed, 1));
  }

 private:
  std::vector<Record> records_;
};

namespace detail {

template <class T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Gradient of a tape output that nothing downstream consumed is zero.
template <class T>
bool has_upstream(const Var<T>& out) {
  return out->has_grad();
}

}  // namespace detail

}  // namespace pd3net
