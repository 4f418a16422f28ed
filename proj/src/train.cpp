#include "ptdet/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "ptdet/optim.hpp"
#include "ptdet/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ptdet {

void TrainConfig::validate() const {
  require(iterations >= 1 && batch_size >= 1, "train config: bad iterations/batch");
  require(lr_decay_step < iterations,
          "train config: decay step " + std::to_string(lr_decay_step) +
              " must be < iterations " + std::to_string(iterations));
  require(eval_every >= 1, "train config: eval_every must be >= 1");
  require(label_mode == "positional" || label_mode == "original",
          "train config: label_mode must be positional|original, got '" + label_mode + "'");
}

std::string TrainConfig::to_json() const {
  json j = {{"iterations", iterations},
            {"batch_size", batch_size},
            {"lr", lr},
            {"lr_decay_step", lr_decay_step},
            {"lr_decay_factor", lr_decay_factor},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"seed", seed},
            {"eval_every", eval_every},
            {"label_mode", label_mode},
            {"rotation_augmentation", rotation_augmentation},
            {"iou_threshold", iou_threshold},
            {"score_threshold", score_threshold},
            {"loss_cls_weight", loss.cls},
            {"loss_pt_weight", loss.pt},
            {"focal_alpha", loss.focal_alpha},
            {"focal_gamma", loss.focal_gamma},
            {"train_data", train_data},
            {"eval_data", eval_data},
            {"eval_split_name", eval_split_name},
            {"out_dir", out_dir}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.lr_decay_step = j.value("lr_decay_step", c.lr_decay_step);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.seed = j.value("seed", c.seed);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.label_mode = j.value("label_mode", c.label_mode);
  c.rotation_augmentation = j.value("rotation_augmentation", c.rotation_augmentation);
  c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
  c.score_threshold = j.value("score_threshold", c.score_threshold);
  c.loss.cls = j.value("loss_cls_weight", c.loss.cls);
  c.loss.pt = j.value("loss_pt_weight", c.loss.pt);
  c.loss.focal_alpha = j.value("focal_alpha", c.loss.focal_alpha);
  c.loss.focal_gamma = j.value("focal_gamma", c.loss.focal_gamma);
  c.train_data = j.value("train_data", c.train_data);
  c.eval_data = j.value("eval_data", c.eval_data);
  c.eval_split_name = j.value("eval_split_name", c.eval_split_name);
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

std::vector<TrainScene> prepare_scenes(const Dataset& ds, const std::string& label_mode,
                                       int n_ctrl_points) {
  require(label_mode == "positional" || label_mode == "original",
          "prepare_scenes: bad label mode '" + label_mode + "'");
  std::vector<TrainScene> out;
  out.reserve(ds.scenes.size());
  for (const SceneRecord& s : ds.scenes) {
    TrainScene t;
    t.width = s.width;
    t.height = s.height;
    t.image = Tensor::zeros({s.height, s.width, 1});
    for (int i = 0; i < s.height * s.width; ++i)
      t.image.ptr()[i] = (s.pixels[i] / 255.0 - 0.5) * 2.0;
    for (const TextAnnotation& a : s.annotations) {
      Polygon2D poly = a.polygon;
      if (label_mode == "positional") poly = canonicalize_positional_label(poly);
      require(poly.size() == n_ctrl_points,
              "prepare_scenes: label has " + std::to_string(poly.size()) +
                  " points, model expects " + std::to_string(n_ctrl_points));
      GroundTruthInstance gt;
      double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30;
      for (const Vec2& p : poly.points) {
        gt.points.push_back({p.x / s.width, p.y / s.height});
        x0 = std::min(x0, p.x / s.width);
        y0 = std::min(y0, p.y / s.height);
        x1 = std::max(x1, p.x / s.width);
        y1 = std::max(y1, p.y / s.height);
      }
      gt.box = {(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
      t.gts.push_back(std::move(gt));
      t.gt_polygons_px.push_back(a.polygon);
      t.tags.push_back(a.orientation);
    }
    out.push_back(std::move(t));
  }
  return out;
}

EvalResult evaluate_detector(TextDetector& model, const std::vector<TrainScene>& scenes,
                             double iou_threshold, double score_threshold) {
  int tp = 0, np = 0, ng = 0;
  for (const TrainScene& sc : scenes) {
    std::vector<Detection> dets = model.detect(sc.image);
    std::vector<ScoredPolygon> preds;
    for (const Detection& d : dets) {
      if (d.score < score_threshold) continue;
      ScoredPolygon sp;
      sp.score = d.score;
      for (const Vec2& p : d.points)
        sp.polygon.points.push_back({p.x * sc.width, p.y * sc.height});
      preds.push_back(std::move(sp));
    }
    FMeasure fm = f_measure(preds, sc.gt_polygons_px, iou_threshold);
    tp += fm.true_positives;
    np += fm.n_predictions;
    ng += fm.n_ground_truth;
  }
  FMeasure total = f_measure_from_counts(tp, np, ng);
  return {total.precision, total.recall, total.f, tp, np, ng};
}

std::string metrics_csv_header() {
  return "iteration,split,precision,recall,f_measure,loss_cls,loss_pt,loss_total\n";
}

std::string metrics_row_csv(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%.6f,%.9g,%.9g,%.9g\n", r.iteration,
                r.split.c_str(), r.precision, r.recall, r.f, r.loss_cls, r.loss_pt,
                r.loss_total);
  return buf;
}

namespace {

struct ProbeLoss {
  double cls = 0, pt = 0, total = 0;
};

/// Mean loss over a fixed probe batch, no tape (pure forward).
ProbeLoss probe_loss(TextDetector& model, const std::vector<TrainScene>& scenes, int batch,
                     const LossWeights& w) {
  ProbeLoss p;
  int n = std::min<int>(batch, static_cast<int>(scenes.size()));
  for (int i = 0; i < n; ++i) {
    DetectionOutput out = model.forward(scenes[i].image, /*training=*/false);
    LossBreakdown lb = detection_loss(out, scenes[i].gts, w);
    p.cls += lb.cls_weighted;
    p.pt += lb.pt_weighted;
    p.total += lb.total_value;
  }
  p.cls /= n;
  p.pt /= n;
  p.total /= n;
  return p;
}

}  // namespace

TrainResult train(const TrainConfig& tc, const ModelConfig& mc) {
  tc.validate();
  mc.validate();
  auto t_start = std::chrono::steady_clock::now();

  Dataset train_raw = load_dataset(tc.train_data);
  if (tc.rotation_augmentation) train_raw = expand_rotation(train_raw, RotationMode::kTrainSet);
  std::vector<TrainScene> train_scenes =
      prepare_scenes(train_raw, tc.label_mode, mc.n_ctrl_points);
  require(!train_scenes.empty(), "train: empty training set");
  std::vector<TrainScene> eval_scenes;
  if (!tc.eval_data.empty())
    eval_scenes = prepare_scenes(load_dataset(tc.eval_data), tc.label_mode, mc.n_ctrl_points);

  TextDetector model(mc, tc.seed);
  AdamW opt(model.params(), tc.lr, tc.beta1, tc.beta2, tc.weight_decay);
  Rng shuffle_rng(Rng::mix(tc.seed, 0x5a11ull));

  fs::create_directories(tc.out_dir);
  TrainResult res;
  res.metrics_csv = (fs::path(tc.out_dir) / "metrics.csv").string();
  res.best_checkpoint = (fs::path(tc.out_dir) / "best.ckpt").string();
  res.final_checkpoint = (fs::path(tc.out_dir) / "final.ckpt").string();
  std::ofstream csv(res.metrics_csv, std::ios::trunc);
  csv << metrics_csv_header();
  csv.flush();

  std::vector<int> order(train_scenes.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // trigger shuffle on first use
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(
                                    0, static_cast<int>(i) - 1))]);
      cursor = 0;
    }
    return order[cursor++];
  };

  double best_f = -1.0;
  auto run_eval = [&](int iteration) {
    MetricsRow row;
    row.iteration = iteration;
    row.split = tc.eval_split_name;
    ProbeLoss pl = probe_loss(model, train_scenes, tc.batch_size, tc.loss);
    row.loss_cls = pl.cls;
    row.loss_pt = pl.pt;
    row.loss_total = pl.total;
    if (!eval_scenes.empty()) {
      EvalResult ev = evaluate_detector(model, eval_scenes, tc.iou_threshold,
                                        tc.score_threshold);
      row.precision = ev.precision;
      row.recall = ev.recall;
      row.f = ev.f;
    }
    res.history.push_back(row);
    csv << metrics_row_csv(row);
    csv.flush();
    if (row.f >= best_f) {
      best_f = row.f;
      model.save_checkpoint(res.best_checkpoint);
    }
  };

  for (int iter = 0; iter <= tc.iterations; ++iter) {
    if (iter % tc.eval_every == 0 || iter == tc.iterations) run_eval(iter);
    if (iter == tc.iterations) break;

    opt.set_lr(iter >= tc.lr_decay_step ? tc.lr / tc.lr_decay_factor : tc.lr);
    opt.zero_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor total = Tensor::scalar(0.0);
      for (int b = 0; b < tc.batch_size; ++b) {
        const TrainScene& sc = train_scenes[next_index()];
        DetectionOutput out = model.forward(sc.image, /*training=*/true);
        LossBreakdown lb = detection_loss(out, sc.gts, tc.loss);
        total = add(total, scale(lb.total, 1.0 / tc.batch_size));
      }
      total.ensure_grad();
      tape.backward(total);
    }
    try {
      opt.step();
    } catch (const NumericalError& e) {
      res.status = std::string("aborted_nan: ") + e.what();
      break;
    }
  }

  model.save_checkpoint(res.final_checkpoint);
  res.final_f = res.history.empty() ? 0.0 : res.history.back().f;
  res.best_f = std::max(best_f, 0.0);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

// --- Ablation ---------------------------------------------------------------

void ensure_benchmark_data(const std::string& root, uint64_t seed, int train_scenes,
                           int test_scenes) {
  SceneParams normal_params;     // 3% inverse, Total-Text-like
  SceneParams inverse_params;    // inverse-heavy
  inverse_params.inverse_prob = 0.4;

  auto make = [&](const std::string& name, auto&& gen) {
    fs::path dir = fs::path(root) / name;
    if (fs::exists(dir / "annotations.json")) return;
    save_dataset(gen(), dir.string());
  };
  make("train", [&] { return generate_dataset(Rng::mix(seed, 101), train_scenes, normal_params); });
  make("train_inverse", [&] {
    return generate_dataset(Rng::mix(seed, 104), train_scenes, inverse_params);
  });
  make("test_normal",
       [&] { return generate_dataset(Rng::mix(seed, 102), test_scenes, normal_params); });
  make("test_inverse", [&] {
    return generate_dataset(Rng::mix(seed, 103), test_scenes, inverse_params);
  });
  make("test_rot", [&] {
    Dataset base = generate_dataset(Rng::mix(seed, 102), test_scenes, normal_params);
    return expand_rotation(base, RotationMode::kRotTestSet);
  });
}

std::vector<AblateRow> ablate(const AblateOptions& opt) {
  fs::create_directories(opt.out_dir);
  std::vector<AblateRow> rows;
  std::vector<TrainScene> splits[3];  // normal, rot, inverse -- per label mode is gt-independent
  Dataset ds_normal = load_dataset((fs::path(opt.data_root) / "test_normal").string());
  Dataset ds_rot = load_dataset((fs::path(opt.data_root) / "test_rot").string());
  Dataset ds_inverse = load_dataset((fs::path(opt.data_root) / "test_inverse").string());
  std::vector<TrainScene> sc_normal =
      prepare_scenes(ds_normal, "original", opt.model.n_ctrl_points);
  std::vector<TrainScene> sc_rot = prepare_scenes(ds_rot, "original", opt.model.n_ctrl_points);
  std::vector<TrainScene> sc_inverse =
      prepare_scenes(ds_inverse, "original", opt.model.n_ctrl_points);

  for (QueryMode qm : {QueryMode::kBoxBaseline, QueryMode::kExplicitPoint})
    for (EfsaMode em : {EfsaMode::kFsa, EfsaMode::kEfsa})
      for (const char* lm : {"original", "positional"}) {
        AblateRow row;
        row.query_mode = query_mode_name(qm);
        row.efsa_mode = efsa_mode_name(em);
        row.label_mode = lm;
        row.rotation = opt.rotation;
        std::string cfg_slug = row.query_mode + "_" + row.efsa_mode + "_" + row.label_mode +
                               (opt.rotation ? "_rot" : "_norot");
        for (uint64_t seed : opt.seeds) {
          ModelConfig mc = opt.model;
          mc.query_mode = qm;
          mc.efsa_mode = em;
          TrainConfig tcfg = opt.train_base;
          tcfg.iterations = opt.iterations;
          tcfg.eval_every = opt.eval_every;
          tcfg.seed = seed;
          tcfg.label_mode = lm;
          tcfg.rotation_augmentation = opt.rotation;
          tcfg.train_data = (fs::path(opt.data_root) / "train").string();
          tcfg.eval_data = (fs::path(opt.data_root) / "test_normal").string();
          tcfg.eval_split_name = "test_normal";
          tcfg.out_dir =
              (fs::path(opt.out_dir) / (cfg_slug + "_seed" + std::to_string(seed))).string();
          TrainResult tr = train(tcfg, mc);
          auto model = TextDetector::load_checkpoint(tr.final_checkpoint);
          row.f_normal +=
              evaluate_detector(*model, sc_normal, tcfg.iou_threshold, tcfg.score_threshold).f;
          row.f_rot +=
              evaluate_detector(*model, sc_rot, tcfg.iou_threshold, tcfg.score_threshold).f;
          row.f_inverse +=
              evaluate_detector(*model, sc_inverse, tcfg.iou_threshold, tcfg.score_threshold).f;
        }
        double n = static_cast<double>(opt.seeds.size());
        row.f_normal /= n;
        row.f_rot /= n;
        row.f_inverse /= n;
        rows.push_back(row);
      }
  return rows;
}

std::string ablate_summary_csv(const std::vector<AblateRow>& rows) {
  std::string out = "query_mode,efsa_mode,label_mode,rotation,f_normal,f_rot,f_inverse\n";
  char buf[256];
  for (const AblateRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%.6f,%.6f,%.6f\n", r.query_mode.c_str(),
                  r.efsa_mode.c_str(), r.label_mode.c_str(), r.rotation ? "on" : "off",
                  r.f_normal, r.f_rot, r.f_inverse);
    out += buf;
  }
  return out;
}

std::string ablate_summary_text(const std::vector<AblateRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-16s %-6s %-12s %-9s %9s %9s %9s\n", "query_mode", "efsa",
                "label_mode", "rotation", "F_normal", "F_rot", "F_inverse");
  out += buf;
  out += std::string(75, '-') + "\n";
  for (const AblateRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-16s %-6s %-12s %-9s %9.4f %9.4f %9.4f\n",
                  r.query_mode.c_str(), r.efsa_mode.c_str(), r.label_mode.c_str(),
                  r.rotation ? "on" : "off", r.f_normal, r.f_rot, r.f_inverse);
    out += buf;
  }
  return out;
}

}  // namespace ptdet
