#pragma once

#include <array>
#include <vector>

#include "ptdet/geometry.hpp"
#include "ptdet/matching.hpp"
#include "ptdet/model.hpp"

namespace ptdet {

struct LossWeights {
  double cls = 2.0;
  double pt = 5.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

struct GroundTruthInstance {
  std::vector<Vec2> points;        // normalized [0,1], model control-point layout
  std::array<double, 4> box{};     // cx, cy, w, h normalized
};

/// Raw (unweighted) components plus the weighted total. `total` stays
/// connected to the tape for backward.
struct LossBreakdown {
  std::vector<double> layer_cls;  // focal, per decoder layer
  std::vector<double> layer_pt;   // mean L1 over matched pairs, per decoder layer
  double enc_cls = 0.0;
  double enc_box = 0.0;
  double cls_weighted = 0.0;  // w.cls * (sum layer_cls + enc_cls)
  double pt_weighted = 0.0;   // w.pt  * (sum layer_pt + enc_box)
  double total_value = 0.0;
  Tensor total;
  std::vector<MatchResult> layer_matches;
};

/// Hungarian-matched set loss: per-layer focal classification + point L1
/// (auxiliary supervision at every decoder layer) and the encoder proposal
/// loss (objectness focal + box L1). Matching cost:
/// w.cls * (1 - p) + w.pt * meanL1.
LossBreakdown detection_loss(const DetectionOutput& out,
                             const std::vector<GroundTruthInstance>& gts,
                             const LossWeights& weights = LossWeights());

}  // namespace ptdet
