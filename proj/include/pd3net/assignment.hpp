// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "pd3net/error.hpp"

namespace pd3net {

/// Minimum-cost assignment on a rows x cols cost matrix (row-major), by the
/// shortest augmenting path form of the Hungarian method. Returns, for each
/// row, the assigned column or -1 when rows exceed columns.
inline std::vector<long> min_cost_assignment(const std::vector<double>& cost, std::size_t rows,
                                             std::size_t cols) {
  if (cost.size() != rows * cols) throw ShapeError("assignment: cost matrix size mismatch");
  std::vector<long> result(rows, -1);
  if (rows == 0 || cols == 0) return result;
  const bool transposed = rows > cols;
  const std::size_t n = transposed ? cols : rows;  // n <= m
  const std::size_t m = transposed ? rows : cols;
  const auto c = [&](std::size_t i, std::size_t j) {
    return transposed ? cost[j * cols + i] : cost[i * cols + j];
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] is the row assigned to column j.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    if (transposed) {
      result[j - 1] = static_cast<long>(p[j] - 1);
    } else {
      result[p[j] - 1] = static_cast<long>(j - 1);
    }
  }
  return result;
}

}  // namespace pd3net
