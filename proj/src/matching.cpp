#include "ptdet/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ptdet {

namespace {

/// Kuhn-Munkres via shortest augmenting paths with potentials; assigns every
/// row. Requires n_rows <= n_cols. Returns col_of_row.
std::vector<int> assign_rows(const std::vector<std::vector<double>>& a, int n, int m) {
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);  // p[j]: row matched to col j (1-based)
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
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
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col_of_row(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

}  // namespace

MatchResult hungarian_match(const std::vector<std::vector<double>>& cost) {
  int k = static_cast<int>(cost.size());
  int g = k > 0 ? static_cast<int>(cost[0].size()) : 0;
  for (int i = 0; i < k; ++i) {
    require(static_cast<int>(cost[i].size()) == g, "hungarian_match: ragged cost matrix");
    for (int j = 0; j < g; ++j)
      if (std::isnan(cost[i][j]))
        throw NumericalError("hungarian_match: NaN cost for prediction " + std::to_string(i) +
                             ", ground truth " + std::to_string(j));
  }
  MatchResult res;
  if (k == 0 || g == 0) {
    res.all_ground_truth_matched = g == 0;
    return res;
  }
  if (k >= g) {
    // assign every ground truth a prediction
    std::vector<std::vector<double>> t(g, std::vector<double>(k));
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < g; ++j) t[j][i] = cost[i][j];
    std::vector<int> row_of_col = assign_rows(t, g, k);
    for (int j = 0; j < g; ++j) res.pairs.emplace_back(row_of_col[j], j);
  } else {
    std::vector<int> col_of_row = assign_rows(cost, k, g);
    for (int i = 0; i < k; ++i) res.pairs.emplace_back(i, col_of_row[i]);
    res.all_ground_truth_matched = false;
  }
  std::sort(res.pairs.begin(), res.pairs.end());
  for (auto& [i, j] : res.pairs) res.total_cost += cost[i][j];
  return res;
}

}  // namespace ptdet
