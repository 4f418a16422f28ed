#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ptdet/loss.hpp"
#include "ptdet/rng.hpp"
#include "ptdet/synth.hpp"
#include "ptdet/train.hpp"

using namespace ptdet;

namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 8;
  mc.n_encoder_layers = 1;
  mc.n_decoder_layers = 2;
  mc.num_queries = 3;
  mc.n_ctrl_points = 4;
  mc.efsa_neighborhood = 2;
  mc.d_ffn = 32;
  mc.stem_channels = {4, 8};
  return mc;
}

SceneParams tiny_scene_params() {
  SceneParams sp;
  sp.width = 32;
  sp.height = 32;
  sp.min_instances = 1;
  sp.max_instances = 2;
  sp.halfwidth_min = 3.0;
  sp.halfwidth_max = 5.0;
  sp.points_per_side = 2;
  return sp;
}

/// Synthetic one-layer outputs for direct loss checks.
DetectionOutput fake_output(const std::vector<GroundTruthInstance>& gts, int k, int n,
                            bool perfect) {
  DetectionOutput out;
  int hw = 9;
  Tensor logits = Tensor::full({k}, -4.0);
  Tensor pts = Tensor::full({k, n, 2}, 0.5);
  for (size_t j = 0; j < gts.size() && j < static_cast<size_t>(k); ++j) {
    logits.ptr()[j] = perfect ? 8.0 : -1.0;
    for (int i = 0; i < n; ++i) {
      pts.ptr()[(j * n + i) * 2] = perfect ? gts[j].points[i].x : 0.5;
      pts.ptr()[(j * n + i) * 2 + 1] = perfect ? gts[j].points[i].y : 0.5;
    }
  }
  Tensor grid = Tensor::zeros({hw, 2});
  Tensor wh = Tensor::full({hw, 2}, 0.2);
  for (int i = 0; i < hw; ++i) {
    grid.ptr()[i * 2] = (i % 3 + 0.5) / 3.0;
    grid.ptr()[i * 2 + 1] = (i / 3 + 0.5) / 3.0;
  }
  out.encoder.obj_logits = Tensor::full({hw}, -4.0);
  out.encoder.boxes = concat_last(grid, wh);
  out.layers.push_back({logits, pts});
  return out;
}

std::vector<GroundTruthInstance> sample_gts(Rng& rng, int count, int n) {
  std::vector<GroundTruthInstance> gts(count);
  for (GroundTruthInstance& gt : gts) {
    double cx = rng.uniform(0.3, 0.7), cy = rng.uniform(0.3, 0.7);
    double w = rng.uniform(0.1, 0.3), h = rng.uniform(0.05, 0.2);
    AnchorBoxProposal box{cx, cy, w, h, 1.0};
    gt.points = prior_points_sampling(box, n);
    gt.box = {cx, cy, w, h};
  }
  return gts;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("detection loss: zero point loss on exact predictions") {
  Rng rng(1);
  std::vector<GroundTruthInstance> gts = sample_gts(rng, 2, 4);
  DetectionOutput out = fake_output(gts, 3, 4, /*perfect=*/true);
  LossBreakdown lb = detection_loss(out, gts);
  CHECK(lb.layer_pt[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lb.total_value ==
        doctest::Approx(lb.cls_weighted + lb.pt_weighted).epsilon(1e-12));
}

TEST_CASE("detection loss is invariant to ground-truth and prediction order") {
  Rng rng(2);
  std::vector<GroundTruthInstance> gts = sample_gts(rng, 3, 4);
  DetectionOutput out = fake_output(gts, 4, 4, /*perfect=*/false);
  // make predictions distinct so the assignment is unique
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      out.layers[0].points.ptr()[(i * 4 + j) * 2] += 0.03 * i;
      out.layers[0].points.ptr()[(i * 4 + j) * 2 + 1] += 0.02 * i;
    }
  double base = detection_loss(out, gts).total_value;

  std::vector<GroundTruthInstance> shuffled = {gts[2], gts[0], gts[1]};
  CHECK(detection_loss(out, shuffled).total_value == doctest::Approx(base).epsilon(1e-12));

  // permute predictions (logits and points together)
  DetectionOutput permuted = fake_output(gts, 4, 4, false);
  std::vector<int> perm = {3, 1, 0, 2};
  for (int i = 0; i < 4; ++i) {
    permuted.layers[0].class_logits.ptr()[i] = out.layers[0].class_logits.ptr()[perm[i]];
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 2; ++c)
        permuted.layers[0].points.ptr()[(i * 4 + j) * 2 + c] =
            out.layers[0].points.ptr()[(perm[i] * 4 + j) * 2 + c];
  }
  CHECK(detection_loss(permuted, gts).total_value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("detection loss with empty ground truth is classification only") {
  DetectionOutput out = fake_output({}, 3, 4, false);
  LossBreakdown lb = detection_loss(out, {});
  CHECK(lb.layer_pt[0] == 0.0);
  CHECK(lb.enc_box == 0.0);
  CHECK(lb.layer_cls[0] > 0.0);
  CHECK(std::isfinite(lb.total_value));
}

TEST_CASE("scene generator: determinism and bounds") {
  SceneParams sp = tiny_scene_params();
  SceneRecord a = generate_synthetic_scene(9001, sp);
  SceneRecord b = generate_synthetic_scene(9001, sp);
  CHECK(a.pixels == b.pixels);
  REQUIRE(a.annotations.size() == b.annotations.size());
  for (size_t i = 0; i < a.annotations.size(); ++i)
    CHECK(a.annotations[i].polygon.points == b.annotations[i].polygon.points);

  SceneRecord c = generate_synthetic_scene(9002, sp);
  bool identical = a.pixels == c.pixels;
  CHECK_FALSE(identical);

  for (int seed = 0; seed < 50; ++seed) {
    SceneRecord s = generate_synthetic_scene(Rng::mix(5, seed), sp);
    CHECK(!s.annotations.empty());
    CHECK(s.annotations.size() <= 2);
    for (const TextAnnotation& ann : s.annotations) {
      CHECK(ann.polygon.size() == 4);
      for (const Vec2& p : ann.polygon.points) {
        CHECK(p.x >= 0);
        CHECK(p.y >= 0);
        CHECK(p.x <= sp.width);
        CHECK(p.y <= sp.height);
      }
      // reading-order labels are clockwise for normal, counter... no:
      // every ribbon label traverses top side then bottom side back, which
      // is clockwise regardless of reading direction
      CHECK(is_clockwise(ann.polygon));
    }
  }
}

TEST_CASE("scene generator: inverse fraction tracks the probability") {
  SceneParams sp = tiny_scene_params();
  sp.inverse_prob = 0.0;
  int inverse = 0, total = 0;
  for (int i = 0; i < 1000; ++i) {
    SceneRecord s = generate_synthetic_scene(Rng::mix(77, i), sp);
    for (const TextAnnotation& a : s.annotations) {
      ++total;
      inverse += a.orientation == Orientation::kInverse;
    }
  }
  CHECK(inverse == 0);

  sp.inverse_prob = 0.4;
  inverse = 0;
  total = 0;
  for (int i = 0; total < 10000; ++i) {
    SceneRecord s = generate_synthetic_scene(Rng::mix(78, i), sp);
    for (const TextAnnotation& a : s.annotations) {
      ++total;
      inverse += a.orientation == Orientation::kInverse;
    }
  }
  double frac = static_cast<double>(inverse) / total;
  CHECK(frac >= 0.36);
  CHECK(frac <= 0.44);
}

TEST_CASE("positional labels entering the loss are canonical (idempotence)") {
  SceneParams sp = tiny_scene_params();
  sp.inverse_prob = 0.5;
  Dataset ds = generate_dataset(31337, 40, sp);
  std::vector<TrainScene> scenes = prepare_scenes(ds, "positional", 4);
  int checked = 0;
  for (size_t si = 0; si < ds.scenes.size(); ++si) {
    const TrainScene& ts = scenes[si];
    for (size_t ai = 0; ai < ts.gts.size(); ++ai) {
      Polygon2D px;
      for (const Vec2& p : ts.gts[ai].points)
        px.points.push_back({p.x * ts.width, p.y * ts.height});
      Polygon2D again = canonicalize_positional_label(px);
      CHECK(again.points == px.points);
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("rotation expansion counts follow the angle sets") {
  SceneParams sp = tiny_scene_params();
  sp.inverse_prob = 0.0;  // all scenes normal -> train-set adds 6 + 1 copies
  Dataset base = generate_dataset(11, 5, sp);
  CHECK(expand_rotation(base, RotationMode::kTrainSet).scenes.size() == 5 * 8);
  CHECK(expand_rotation(base, RotationMode::kRotTestSet).scenes.size() == 5 * 6);
}

TEST_CASE("train: metrics CSV contract and bit-identical reruns") {
  fs::path root = fs::temp_directory_path() / "ptdet_train_test";
  fs::remove_all(root);
  SceneParams sp = tiny_scene_params();
  save_dataset(generate_dataset(400, 10, sp), (root / "train").string());
  save_dataset(generate_dataset(401, 4, sp), (root / "eval").string());

  TrainConfig tc;
  tc.iterations = 10;
  tc.batch_size = 4;
  tc.eval_every = 5;
  tc.lr_decay_step = 8;
  tc.seed = 3;
  tc.train_data = (root / "train").string();
  tc.eval_data = (root / "eval").string();
  tc.out_dir = (root / "run1").string();
  ModelConfig mc = tiny_config();

  TrainResult r1 = train(tc, mc);
  CHECK(r1.status == "ok");
  CHECK(r1.history.size() == static_cast<size_t>(tc.iterations / tc.eval_every + 1));
  std::string csv1 = read_file(r1.metrics_csv);
  CHECK(csv1.rfind("iteration,split,precision,recall,f_measure,loss_cls,loss_pt,loss_total\n",
                   0) == 0);

  tc.out_dir = (root / "run2").string();
  TrainResult r2 = train(tc, mc);
  CHECK(read_file(r2.metrics_csv) == csv1);
  CHECK(read_file(r2.final_checkpoint) == read_file(r1.final_checkpoint));

  // training loss moves downward even in a short run
  CHECK(r1.history.back().loss_total < r1.history.front().loss_total);
  fs::remove_all(root);
}
