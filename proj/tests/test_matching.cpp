#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ptdet/matching.hpp"
#include "ptdet/rng.hpp"

using namespace ptdet;

namespace {

/// Exhaustive assignment minimum over all injections of ground truths into
/// predictions (the factorial oracle for G <= 6).
double brute_force_min(const std::vector<std::vector<double>>& cost) {
  int k = static_cast<int>(cost.size());
  int g = static_cast<int>(cost[0].size());
  std::vector<int> preds(k);
  std::iota(preds.begin(), preds.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  if (k >= g) {
    std::vector<int> sel(k, 0);
    std::fill(sel.end() - g, sel.end(), 1);  // choose g predictions
    // permute over chosen predictions
    do {
      std::vector<int> chosen;
      for (int i = 0; i < k; ++i)
        if (sel[i]) chosen.push_back(i);
      std::sort(chosen.begin(), chosen.end());
      do {
        double total = 0;
        for (int j = 0; j < g; ++j) total += cost[chosen[j]][j];
        best = std::min(best, total);
      } while (std::next_permutation(chosen.begin(), chosen.end()));
    } while (std::next_permutation(sel.begin(), sel.end()));
  } else {
    std::vector<int> gts(g);
    std::iota(gts.begin(), gts.end(), 0);
    std::vector<int> sel(g, 0);
    std::fill(sel.end() - k, sel.end(), 1);
    do {
      std::vector<int> chosen;
      for (int j = 0; j < g; ++j)
        if (sel[j]) chosen.push_back(j);
      std::sort(chosen.begin(), chosen.end());
      do {
        double total = 0;
        for (int i = 0; i < k; ++i) total += cost[i][chosen[i]];
        best = std::min(best, total);
      } while (std::next_permutation(chosen.begin(), chosen.end()));
    } while (std::next_permutation(sel.begin(), sel.end()));
  }
  return best;
}

}  // namespace

TEST_CASE("hungarian: hand examples") {
  MatchResult r = hungarian_match({{1, 2}, {2, 1}});
  CHECK(r.pairs == std::vector<std::pair<int, int>>({{0, 0}, {1, 1}}));
  CHECK(r.total_cost == doctest::Approx(2.0));

  MatchResult diag = hungarian_match({{0, 5, 5}, {5, 0, 5}, {5, 5, 0}});
  CHECK(diag.pairs == std::vector<std::pair<int, int>>({{0, 0}, {1, 1}, {2, 2}}));
  CHECK(diag.total_cost == doctest::Approx(0.0));

  CHECK_THROWS_AS((void)hungarian_match({{1.0, std::nan("")}}), NumericalError);
}

TEST_CASE("hungarian: shapes and unmatched flags") {
  // K > G: every ground truth matched
  MatchResult tall = hungarian_match({{3}, {1}, {2}});
  CHECK(tall.pairs.size() == 1);
  CHECK(tall.pairs[0] == std::pair<int, int>(1, 0));
  CHECK(tall.all_ground_truth_matched);

  // K < G: some ground truths left unmatched, flagged
  MatchResult wide = hungarian_match({{3, 1, 2}});
  CHECK(wide.pairs.size() == 1);
  CHECK(wide.pairs[0] == std::pair<int, int>(0, 1));
  CHECK_FALSE(wide.all_ground_truth_matched);
}

TEST_CASE("hungarian equals the factorial oracle on 200 random matrices, G <= 6") {
  Rng rng(2718);
  for (int trial = 0; trial < 200; ++trial) {
    int g = 1 + rng.uniform_int(0, 5);
    int k = g + rng.uniform_int(-2, 6);
    k = std::max(1, k);
    // dyadic costs (n / 256) keep every total exactly representable, so
    // equality with the oracle is exact
    std::vector<std::vector<double>> cost(k, std::vector<double>(g));
    for (auto& row : cost)
      for (double& c : row) c = static_cast<double>(rng.uniform_int(0, 4095)) / 256.0;
    MatchResult r = hungarian_match(cost);
    CHECK(r.pairs.size() == static_cast<size_t>(std::min(k, g)));
    double oracle = brute_force_min(cost);
    CHECK(r.total_cost == oracle);
    // one-to-one
    std::vector<int> used_p, used_g;
    for (auto& [i, j] : r.pairs) {
      used_p.push_back(i);
      used_g.push_back(j);
    }
    std::sort(used_p.begin(), used_p.end());
    std::sort(used_g.begin(), used_g.end());
    CHECK(std::adjacent_find(used_p.begin(), used_p.end()) == used_p.end());
    CHECK(std::adjacent_find(used_g.begin(), used_g.end()) == used_g.end());
  }
}
