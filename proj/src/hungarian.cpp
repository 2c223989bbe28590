#include "fusedet/det/hungarian.hpp"

#include <algorithm>
#include <limits>

namespace fusedet::det {

namespace {

// Jonker-Volgenant style shortest augmenting path with potentials, O(n^2 m).
// Assigns every row; requires rows <= cols.
std::vector<std::pair<int, int>> solve_rows_le_cols(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const int m = n ? static_cast<int>(cost[0].size()) : 0;
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<int> match(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, INF);
    std::vector<char> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = INF;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::pair<int, int>> out;
  for (int j = 1; j <= m; ++j)
    if (match[j] != 0) out.emplace_back(match[j] - 1, j - 1);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<std::pair<int, int>> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
  if (cost.empty() || cost[0].empty()) return {};
  const int n = static_cast<int>(cost.size());
  const int m = static_cast<int>(cost[0].size());
  if (n <= m) return solve_rows_le_cols(cost);
  // Transpose so the smaller side is fully assigned.
  std::vector<std::vector<double>> t(m, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) t[j][i] = cost[i][j];
  auto pairs = solve_rows_le_cols(t);
  for (auto& p : pairs) std::swap(p.first, p.second);
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

}  // namespace fusedet::det
