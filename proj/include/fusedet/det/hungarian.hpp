#pragma once

#include <utility>
#include <vector>

namespace fusedet::det {

// Minimum-total-cost one-to-one assignment on a rectangular cost matrix
// cost[row][col]. Returns min(rows, cols) pairs of (row, col). Ties resolve
// deterministically (lowest index wins).
std::vector<std::pair<int, int>> hungarian_min_cost(const std::vector<std::vector<double>>& cost);

}  // namespace fusedet::det
