#pragma once

#include <string>
#include <vector>

#include "ptdet/annotations.hpp"
#include "ptdet/loss.hpp"
#include "ptdet/model.hpp"
#include "ptdet/synth.hpp"

namespace ptdet {

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 8;
  double lr = 1e-4;
  int lr_decay_step = 1600;
  double lr_decay_factor = 10.0;
  double weight_decay = 1e-4;
  double beta1 = 0.9, beta2 = 0.999;
  uint64_t seed = 1;
  int eval_every = 250;
  std::string label_mode = "positional";  // "positional" | "original"
  bool rotation_augmentation = false;
  double iou_threshold = 0.5;
  double score_threshold = 0.5;
  LossWeights loss;
  std::string train_data;
  std::string eval_data;
  std::string eval_split_name = "heldout";
  std::string out_dir;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// Model-ready scene: normalized image tensor plus ground truth in both the
/// loss layout (normalized control points per label mode) and pixel-space
/// polygons for IoU evaluation.
struct TrainScene {
  Tensor image;  // [H, W, 1]
  int width = 0, height = 0;
  std::vector<GroundTruthInstance> gts;
  std::vector<Polygon2D> gt_polygons_px;
  std::vector<Orientation> tags;
};

std::vector<TrainScene> prepare_scenes(const Dataset& ds, const std::string& label_mode,
                                       int n_ctrl_points);

struct EvalResult {
  double precision = 0, recall = 0, f = 0;
  int true_positives = 0, n_predictions = 0, n_ground_truth = 0;
};

EvalResult evaluate_detector(TextDetector& model, const std::vector<TrainScene>& scenes,
                             double iou_threshold, double score_threshold);

struct MetricsRow {
  int iteration = 0;
  std::string split;
  double precision = 0, recall = 0, f = 0;
  double loss_cls = 0, loss_pt = 0, loss_total = 0;
};

std::string metrics_csv_header();
std::string metrics_row_csv(const MetricsRow& r);

struct TrainResult {
  std::vector<MetricsRow> history;
  double final_f = 0, best_f = 0;
  double seconds = 0;
  std::string status = "ok";  // "aborted_nan" when a step went non-finite
  std::string final_checkpoint, best_checkpoint, metrics_csv;
};

/// Runs the full schedule: AdamW, step decay, eval every `eval_every`
/// iterations (including iteration 0 and the last one), best/final
/// checkpoints and the metrics CSV under out_dir.
TrainResult train(const TrainConfig& tc, const ModelConfig& mc);

// --- Ablation ---------------------------------------------------------------

struct AblateOptions {
  std::string data_root;  // expects train/, test_normal/, test_rot/, test_inverse/
  std::string out_dir;
  std::vector<uint64_t> seeds = {1, 2, 3};
  int iterations = 2000;
  int eval_every = 250;
  bool rotation = true;
  ModelConfig model;
  TrainConfig train_base;
};

struct AblateRow {
  std::string query_mode, efsa_mode, label_mode;
  bool rotation = false;
  double f_normal = 0, f_rot = 0, f_inverse = 0;  // seed means
};

/// 2 query modes x 2 efsa modes x 2 label modes (rotation fixed per options):
/// per-config convergence CSVs plus a summary over the three test splits.
std::vector<AblateRow> ablate(const AblateOptions& opt);

std::string ablate_summary_csv(const std::vector<AblateRow>& rows);
std::string ablate_summary_text(const std::vector<AblateRow>& rows);

/// Standard synthetic benchmark layout used by ablate and the acceptance
/// runs; generates any missing split under root.
void ensure_benchmark_data(const std::string& root, uint64_t seed, int train_scenes,
                           int test_scenes);

}  // namespace ptdet
