#pragma once

#include <algorithm>
#include <limits>
#include <utility>
#include <vector>

namespace benthic {

/// Minimum-cost assignment on a rows x cols cost matrix (Hungarian method
/// with potentials). Returns, for each row, its column or -1. Rectangular
/// inputs are padded with zero-cost dummies.
inline std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int rows = static_cast<int>(cost.size());
  const int cols = rows ? static_cast<int>(cost[0].size()) : 0;
  if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
  const int n = std::max(rows, cols);
  auto c = [&](int i, int j) { return (i < rows && j < cols) ? cost[i][j] : 0.0; };
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials u (rows), v (cols); p[j] = row matched to column j.
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (int j = 0; j <= n; ++j) {
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
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> out(rows, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] <= rows && j <= cols) out[p[j] - 1] = j - 1;
  return out;
}

/// Pairs (row, col) maximising total weight, where only weights >= gate may
/// be matched. Unmatched rows/cols are left out.
inline std::vector<std::pair<int, int>> gated_max_assignment(const std::vector<std::vector<double>>& weight,
                                                             double gate) {
  std::vector<std::vector<double>> cost(weight.size());
  for (std::size_t i = 0; i < weight.size(); ++i) {
    cost[i].resize(weight[i].size());
    for (std::size_t j = 0; j < weight[i].size(); ++j) cost[i][j] = weight[i][j] >= gate ? -weight[i][j] : 0.0;
  }
  const auto a = hungarian(cost);
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] >= 0 && weight[i][a[i]] >= gate) out.emplace_back(static_cast<int>(i), a[i]);
  return out;
}

}  // namespace benthic
