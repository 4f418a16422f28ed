#include "ptdet/loss.hpp"

#include <cmath>

namespace ptdet {

namespace {

double sigmoid_value(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double mean_l1_points(const double* pred, const GroundTruthInstance& gt, int n) {
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    s += std::abs(pred[j * 2] - gt.points[j].x);
    s += std::abs(pred[j * 2 + 1] - gt.points[j].y);
  }
  return s / (2.0 * n);
}

}  // namespace

LossBreakdown detection_loss(const DetectionOutput& out,
                             const std::vector<GroundTruthInstance>& gts,
                             const LossWeights& w) {
  const int g = static_cast<int>(gts.size());
  const int n_layers = static_cast<int>(out.layers.size());
  require(n_layers > 0, "detection_loss: no decoder outputs");
  const int k = out.layers[0].class_logits.shape[0];
  const int n = out.layers[0].points.shape[1];
  for (const GroundTruthInstance& gt : gts)
    require(static_cast<int>(gt.points.size()) == n,
            "detection_loss: ground truth has " + std::to_string(gt.points.size()) +
                " points, model predicts " + std::to_string(n));

  LossBreakdown lb;
  Tensor total = Tensor::scalar(0.0);
  double norm_cls = std::max(1, g);

  for (int l = 0; l < n_layers; ++l) {
    const LayerOutput& lo = out.layers[l];
    Tensor probs = sigmoid(lo.class_logits);  // [K]

    MatchResult match;
    if (g > 0) {
      std::vector<std::vector<double>> cost(k, std::vector<double>(g));
      for (int i = 0; i < k; ++i) {
        double p = probs.ptr()[i];
        const double* pp = lo.points.ptr() + static_cast<int64_t>(i) * n * 2;
        for (int j = 0; j < g; ++j)
          cost[i][j] = w.cls * (1.0 - p) + w.pt * mean_l1_points(pp, gts[j], n);
      }
      match = hungarian_match(cost);
    }
    lb.layer_matches.push_back(match);

    std::vector<double> targets(k, 0.0);
    for (const auto& [pi, gi] : match.pairs) targets[pi] = 1.0;
    Tensor cls = scale(focal_loss_sum(probs, targets, w.focal_alpha, w.focal_gamma),
                       1.0 / norm_cls);
    lb.layer_cls.push_back(cls.value());
    total = add(total, scale(cls, w.cls));

    if (!match.pairs.empty()) {
      std::vector<int> rows;
      Tensor gt_pts = Tensor::zeros({static_cast<int>(match.pairs.size()), n * 2});
      int r = 0;
      for (const auto& [pi, gi] : match.pairs) {
        rows.push_back(pi);
        for (int j = 0; j < n; ++j) {
          gt_pts.ptr()[(static_cast<int64_t>(r) * n + j) * 2] = gts[gi].points[j].x;
          gt_pts.ptr()[(static_cast<int64_t>(r) * n + j) * 2 + 1] = gts[gi].points[j].y;
        }
        ++r;
      }
      Tensor matched = gather_rows(reshape(lo.points, {k, n * 2}), rows);
      Tensor pt = l1_loss(matched, gt_pts);
      lb.layer_pt.push_back(pt.value());
      total = add(total, scale(pt, w.pt));
    } else {
      lb.layer_pt.push_back(0.0);
    }
  }

  // encoder proposal loss over all memory positions
  {
    const Tensor& logits = out.encoder.obj_logits;  // [HW]
    const Tensor& boxes = out.encoder.boxes;        // [HW, 4]
    int hw = logits.shape[0];
    Tensor probs = sigmoid(logits);
    MatchResult match;
    if (g > 0) {
      std::vector<std::vector<double>> cost(hw, std::vector<double>(g));
      for (int i = 0; i < hw; ++i) {
        double p = probs.ptr()[i];
        const double* pb = boxes.ptr() + static_cast<int64_t>(i) * 4;
        for (int j = 0; j < g; ++j) {
          double l1 = 0.0;
          for (int c = 0; c < 4; ++c) l1 += std::abs(pb[c] - gts[j].box[c]);
          cost[i][j] = w.cls * (1.0 - p) + w.pt * l1 / 4.0;
        }
      }
      match = hungarian_match(cost);
    }
    std::vector<double> targets(hw, 0.0);
    for (const auto& [pi, gi] : match.pairs) targets[pi] = 1.0;
    Tensor cls = scale(focal_loss_sum(probs, targets, w.focal_alpha, w.focal_gamma),
                       1.0 / norm_cls);
    lb.enc_cls = cls.value();
    total = add(total, scale(cls, w.cls));
    if (!match.pairs.empty()) {
      std::vector<int> rows;
      Tensor gt_boxes = Tensor::zeros({static_cast<int>(match.pairs.size()), 4});
      int r = 0;
      for (const auto& [pi, gi] : match.pairs) {
        rows.push_back(pi);
        for (int c = 0; c < 4; ++c) gt_boxes.ptr()[r * 4 + c] = gts[gi].box[c];
        ++r;
      }
      Tensor pt = l1_loss(gather_rows(boxes, rows), gt_boxes);
      lb.enc_box = pt.value();
      total = add(total, scale(pt, w.pt));
    }
  }

  double sum_cls = lb.enc_cls, sum_pt = lb.enc_box;
  for (double v : lb.layer_cls) sum_cls += v;
  for (double v : lb.layer_pt) sum_pt += v;
  lb.cls_weighted = w.cls * sum_cls;
  lb.pt_weighted = w.pt * sum_pt;
  lb.total = total;
  lb.total_value = total.value();
  if (!std::isfinite(lb.total_value))
    throw NumericalError("detection_loss: non-finite total loss");
  return lb;
}

}  // namespace ptdet
