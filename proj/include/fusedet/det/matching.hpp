#pragma once

#include <vector>

#include "fusedet/det/boxes.hpp"
#include "fusedet/det/hungarian.hpp"

namespace fusedet::det {

struct TargetSet {
  std::vector<Box> boxes;     // normalized cxcywh
  std::vector<int> classes;   // 0..C-1
  size_t size() const { return boxes.size(); }
};

struct MatchWeights {
  double cls = 1.0, l1 = 5.0, giou = 2.0;
};

// One-to-one assignment result; indices unique on both sides and
// |pairs| = min(num predictions, num targets).
struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (prediction, target)
  std::vector<int> unmatched_preds;
};

// Minimum-cost bipartite matching with the set-prediction cost
//   cost = w_cls*(1 - p_class(target)) + w_l1*|b - t|_1 + w_giou*(1 - GIoU).
// pred_probs[n][c] are per-class probabilities (sigmoid of logits).
inline MatchResult hungarian_match(const std::vector<Box>& pred_boxes,
                                   const std::vector<std::vector<double>>& pred_probs,
                                   const TargetSet& targets, const MatchWeights& w = {}) {
  MatchResult res;
  const int n = static_cast<int>(pred_boxes.size());
  const int m = static_cast<int>(targets.size());
  if (m == 0) {
    for (int i = 0; i < n; ++i) res.unmatched_preds.push_back(i);
    return res;
  }
  std::vector<std::vector<double>> cost(n, std::vector<double>(m));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const double p = pred_probs[i][static_cast<size_t>(targets.classes[j])];
      cost[i][j] = w.cls * (1.0 - p) + w.l1 * l1_distance(pred_boxes[i], targets.boxes[j]) +
                   w.giou * (1.0 - giou(pred_boxes[i], targets.boxes[j]));
    }
  res.pairs = hungarian_min_cost(cost);
  std::vector<char> used(n, 0);
  for (auto& [pi, tj] : res.pairs) used[pi] = 1;
  for (int i = 0; i < n; ++i)
    if (!used[i]) res.unmatched_preds.push_back(i);
  return res;
}

inline double match_total_cost(const std::vector<std::vector<double>>& cost,
                               const std::vector<std::pair<int, int>>& pairs) {
  double s = 0;
  for (auto& [i, j] : pairs) s += cost[i][j];
  return s;
}

}  // namespace fusedet::det
