#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ptdet/tensor.hpp"

namespace ptdet {

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (prediction_index, ground_truth_index)
  double total_cost = 0.0;
  bool all_ground_truth_matched = true;    // false when K < G
};

/// Minimum-total-cost one-to-one assignment on a rectangular cost matrix
/// (rows = predictions, cols = ground truths), Kuhn-Munkres with potentials.
/// min(K, G) pairs are produced. NaN costs are rejected naming the pair.
MatchResult hungarian_match(const std::vector<std::vector<double>>& cost);

}  // namespace ptdet
