// ptdet: desk-scale point-query scene text detection
//
// Subcommands: gen-data, canonicalize, train, eval, ablate, gradcheck, replay.
// Every command writes a manifest next to its outputs; replaying a manifest
// reproduces the outputs byte-identically. Exit codes: 0 success, 1 usage
// error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "ptdet/annotations.hpp"
#include "ptdet/gradcheck.hpp"
#include "ptdet/manifest.hpp"
#include "ptdet/model.hpp"
#include "ptdet/synth.hpp"
#include "ptdet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ptdet;

namespace {

uint64_t default_seed() {
  if (const char* env = std::getenv("PTDET_SEED")) return std::strtoull(env, nullptr, 10);
  return 1;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

int run_gen_data(int scenes, double inverse_prob, const std::string& rotation, uint64_t seed,
                 const std::string& out, bool force, int points_per_side, int min_instances,
                 int max_instances) {
  Timer timer;
  if (fs::exists(out) && !fs::is_empty(out) && !force) {
    std::cerr << "gen-data: output directory " << out
              << " exists and is not empty (use --force)\n";
    return 2;
  }
  SceneParams params;
  params.inverse_prob = inverse_prob;
  params.points_per_side = points_per_side;
  params.min_instances = min_instances;
  params.max_instances = max_instances;
  RotationMode mode = rotation_mode_from_name(rotation);
  Dataset ds = generate_dataset(seed, scenes, params, mode);
  save_dataset(ds, out);

  RunManifest m;
  m.command = "gen-data";
  m.config = {{"--scenes", std::to_string(scenes)},
              {"--inverse-prob", fmt(inverse_prob)},
              {"--rotation", rotation},
              {"--seed", std::to_string(seed)},
              {"--out", out},
              {"--points-per-side", std::to_string(points_per_side)},
              {"--min-instances", std::to_string(min_instances)},
              {"--max-instances", std::to_string(max_instances)},
              {"--force", ""}};
  m.seed = seed;
  m.outputs = {out + "/annotations.json"};
  for (const SceneRecord& s : ds.scenes) m.outputs.push_back(out + "/" + s.file);
  m.duration_seconds = timer.seconds();
  m.write((fs::path(out) / "manifest.json").string());
  std::cout << "gen-data: wrote " << ds.scenes.size() << " scenes to " << out << "\n";
  return 0;
}

int run_canonicalize(const std::string& in, const std::string& out, const std::string& mode,
                     uint64_t seed) {
  Timer timer;
  std::ifstream f(in);
  if (!f) throw DataError("cannot open " + in);
  std::stringstream ss;
  ss << f.rdbuf();
  Dataset ds;
  parse_annotations_json(ss.str(), ds);

  int moved = 0, total = 0, skipped = 0;
  for (SceneRecord& s : ds.scenes) {
    std::vector<TextAnnotation> kept;
    for (TextAnnotation& a : s.annotations) {
      ++total;
      try {
        Polygon2D before = a.polygon;
        a.polygon = mode == "clockwise-only" ? make_clockwise(a.polygon)
                                             : canonicalize_positional_label(a.polygon);
        if (!(a.polygon.points[0] == before.points[0])) ++moved;
        kept.push_back(a);
      } catch (const DegenerateGeometryError& e) {
        ++skipped;
        std::cerr << "canonicalize: skipping degenerate polygon in image " << s.id << ": "
                  << e.what() << "\n";
      }
    }
    s.annotations = std::move(kept);
  }
  atomic_write_file(out, annotations_to_json(ds));

  RunManifest m;
  m.command = "canonicalize";
  m.config = {{"--in", in}, {"--out", out}, {"--mode", mode}};
  m.seed = seed;
  m.inputs = {in};
  m.outputs = {out};
  m.duration_seconds = timer.seconds();
  m.write(out + ".manifest.json");
  std::cout << "canonicalize: " << moved << " of " << total << " start points moved, " << skipped
            << " degenerate skipped\n";
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string query_mode, efsa, label_mode, rotation;
  std::string train_data, eval_data, out;
  int64_t iterations = -1, batch_size = -1, decay_step = -1, eval_every = -1;
  double lr = -1, score_threshold = -1, iou_threshold = -1;
  uint64_t seed = 0;
  bool seed_set = false;
};

void report_override(const std::string& key, const std::string& from_config,
                     const std::string& from_flag) {
  if (from_config != from_flag)
    std::cerr << "override: " << key << ": config=" << from_config << " flag=" << from_flag
              << " (flag wins)\n";
}

std::pair<TrainConfig, ModelConfig> resolve_train_config(const TrainArgs& a) {
  TrainConfig tc;
  ModelConfig mc;
  json from_file;
  if (!a.config_path.empty()) {
    std::ifstream f(a.config_path);
    if (!f) throw DataError("cannot open config " + a.config_path);
    std::stringstream ss;
    ss << f.rdbuf();
    try {
      from_file = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw DataError(a.config_path + ": " + e.what());
    }
    tc = TrainConfig::from_json(ss.str());
    if (from_file.contains("model")) mc = ModelConfig::from_json(from_file["model"].dump());
  }
  // flat flag overrides: last wins, conflicts with the config file reported
  auto note = [&](const std::string& key, const std::string& config_val,
                  const std::string& flag_val) {
    if (from_file.contains(key)) report_override(key, config_val, flag_val);
  };
  if (!a.label_mode.empty()) {
    note("label_mode", tc.label_mode, a.label_mode);
    tc.label_mode = a.label_mode;
  }
  if (!a.train_data.empty()) {
    note("train_data", tc.train_data, a.train_data);
    tc.train_data = a.train_data;
  }
  if (!a.eval_data.empty()) {
    note("eval_data", tc.eval_data, a.eval_data);
    tc.eval_data = a.eval_data;
  }
  if (!a.out.empty()) {
    note("out_dir", tc.out_dir, a.out);
    tc.out_dir = a.out;
  }
  if (!a.rotation.empty()) {
    note("rotation_augmentation", tc.rotation_augmentation ? "on" : "off", a.rotation);
    tc.rotation_augmentation = a.rotation == "on";
  }
  if (a.iterations >= 0) {
    note("iterations", std::to_string(tc.iterations), std::to_string(a.iterations));
    tc.iterations = static_cast<int>(a.iterations);
  }
  if (a.batch_size >= 0) tc.batch_size = static_cast<int>(a.batch_size);
  if (a.decay_step >= 0) tc.lr_decay_step = static_cast<int>(a.decay_step);
  if (a.eval_every >= 0) tc.eval_every = static_cast<int>(a.eval_every);
  if (a.lr >= 0) tc.lr = a.lr;
  if (a.score_threshold >= 0) tc.score_threshold = a.score_threshold;
  if (a.iou_threshold >= 0) tc.iou_threshold = a.iou_threshold;
  if (a.seed_set) tc.seed = a.seed;
  if (!a.query_mode.empty()) mc.query_mode = query_mode_from_name(a.query_mode);
  if (!a.efsa.empty()) mc.efsa_mode = efsa_mode_from_name(a.efsa);
  return {tc, mc};
}

int run_train(const TrainArgs& a) {
  Timer timer;
  auto [tc, mc] = resolve_train_config(a);
  if (tc.train_data.empty() || tc.out_dir.empty())
    throw DataError("train: --train-data and --out are required (flag or config)");
  TrainResult res = train(tc, mc);

  RunManifest m;
  m.command = "train";
  m.config = {{"--train-data", tc.train_data},
              {"--eval-data", tc.eval_data},
              {"--out", tc.out_dir},
              {"--iterations", std::to_string(tc.iterations)},
              {"--batch-size", std::to_string(tc.batch_size)},
              {"--decay-step", std::to_string(tc.lr_decay_step)},
              {"--eval-every", std::to_string(tc.eval_every)},
              {"--lr", fmt(tc.lr)},
              {"--label-mode", tc.label_mode},
              {"--rotation", tc.rotation_augmentation ? "on" : "off"},
              {"--query-mode", query_mode_name(mc.query_mode)},
              {"--efsa", efsa_mode_name(mc.efsa_mode)},
              {"--score-threshold", fmt(tc.score_threshold)},
              {"--iou-threshold", fmt(tc.iou_threshold)},
              {"--seed", std::to_string(tc.seed)}};
  m.seed = tc.seed;
  m.inputs = {tc.train_data, tc.eval_data};
  m.outputs = {res.metrics_csv, res.best_checkpoint, res.final_checkpoint};
  m.duration_seconds = timer.seconds();
  m.write((fs::path(tc.out_dir) / "manifest.json").string());

  std::cout << "train: " << res.status << ", final F=" << res.final_f << ", best F=" << res.best_f
            << " (" << res.seconds << "s)\n";
  if (res.status != "ok") {
    std::cerr << "train: aborted, last-good checkpoint retained at " << res.best_checkpoint
              << "\n";
    return 3;
  }
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data, double iou_threshold,
             double score_threshold, const std::string& out, uint64_t seed) {
  Timer timer;
  auto model = TextDetector::load_checkpoint(checkpoint);
  Dataset ds = load_dataset(data);
  std::vector<TrainScene> scenes = prepare_scenes(ds, "original", model->config().n_ctrl_points);
  EvalResult ev = evaluate_detector(*model, scenes, iou_threshold, score_threshold);

  char line[256];
  std::snprintf(line, sizeof(line),
                "eval: P=%.4f R=%.4f F=%.4f (tp=%d preds=%d gts=%d, iou>=%.2f, score>=%.2f)\n",
                ev.precision, ev.recall, ev.f, ev.true_positives, ev.n_predictions,
                ev.n_ground_truth, iou_threshold, score_threshold);
  std::cout << line;
  if (!out.empty()) {
    fs::create_directories(out);
    json j = {{"precision", ev.precision},
              {"recall", ev.recall},
              {"f_measure", ev.f},
              {"true_positives", ev.true_positives},
              {"n_predictions", ev.n_predictions},
              {"n_ground_truth", ev.n_ground_truth},
              {"iou_threshold", iou_threshold},
              {"score_threshold", score_threshold}};
    atomic_write_file((fs::path(out) / "eval.json").string(), j.dump(2) + "\n");
    RunManifest m;
    m.command = "eval";
    m.config = {{"--checkpoint", checkpoint},
                {"--data", data},
                {"--iou-threshold", fmt(iou_threshold)},
                {"--score-threshold", fmt(score_threshold)},
                {"--out", out}};
    m.seed = seed;
    m.inputs = {checkpoint, data};
    m.outputs = {out + "/eval.json"};
    m.duration_seconds = timer.seconds();
    m.write((fs::path(out) / "manifest.json").string());
  }
  return 0;
}

int run_ablate(const std::string& data_root, const std::string& out, const std::string& seeds_csv,
               int iterations, int eval_every, int train_scenes, int test_scenes,
               const std::string& rotation, uint64_t seed) {
  Timer timer;
  AblateOptions opt;
  opt.data_root = data_root;
  opt.out_dir = out;
  opt.iterations = iterations;
  opt.eval_every = eval_every;
  opt.rotation = rotation != "off";
  opt.seeds.clear();
  std::stringstream ss(seeds_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) opt.seeds.push_back(std::strtoull(tok.c_str(), nullptr, 10));
  if (opt.seeds.empty()) throw DataError("ablate: empty --seeds list");

  ensure_benchmark_data(data_root, seed, train_scenes, test_scenes);
  std::vector<AblateRow> rows = ablate(opt);
  fs::create_directories(out);
  atomic_write_file((fs::path(out) / "summary.csv").string(), ablate_summary_csv(rows));
  atomic_write_file((fs::path(out) / "summary.txt").string(), ablate_summary_text(rows));
  std::cout << ablate_summary_text(rows);

  RunManifest m;
  m.command = "ablate";
  m.config = {{"--data-root", data_root}, {"--out", out},
              {"--seeds", seeds_csv},     {"--iterations", std::to_string(iterations)},
              {"--eval-every", std::to_string(eval_every)},
              {"--train-scenes", std::to_string(train_scenes)},
              {"--test-scenes", std::to_string(test_scenes)},
              {"--rotation", rotation},   {"--seed", std::to_string(seed)}};
  m.seed = seed;
  m.inputs = {data_root};
  m.outputs = {out + "/summary.csv", out + "/summary.txt"};
  m.duration_seconds = timer.seconds();
  m.write((fs::path(out) / "manifest.json").string());
  return 0;
}

int run_gradcheck(uint64_t seed, double tolerance, const std::string& ops, int n_seeds) {
  register_builtin_gradchecks();
  GradCheckRegistry& reg = GradCheckRegistry::instance();
  std::vector<std::string> which;
  if (ops == "all") {
    which = reg.names();
  } else {
    std::stringstream ss(ops);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!reg.has(tok)) {
        std::cerr << "gradcheck: unknown op '" << tok << "'. Registered ops:\n";
        for (const std::string& n : reg.names()) std::cerr << "  " << n << "\n";
        return 1;
      }
      which.push_back(tok);
    }
  }
  bool all_pass = true;
  for (const std::string& name : which) {
    double tol = name == "full_model" ? kModelGradTolerance : tolerance;
    GradCheckResult r = reg.run(name, seed, tol, n_seeds);
    std::printf("%-26s %-5s max_rel_err=%.3e (tol %.0e, %d seeds)\n", r.op.c_str(),
                r.pass ? "PASS" : "FAIL", r.max_rel_err, tol, n_seeds);
    all_pass &= r.pass;
  }
  if (!all_pass) {
    std::cerr << "gradcheck: FAILURES present\n";
    return 3;
  }
  return 0;
}

int dispatch(int argc, char** argv);

int run_replay(const std::string& manifest_path) {
  RunManifest m = RunManifest::read(manifest_path);
  std::vector<std::string> args;
  args.push_back("ptdet");
  args.push_back(m.command);
  for (const auto& [flag, value] : m.config) {
    args.push_back(flag);
    if (!value.empty()) args.push_back(value);
  }
  std::vector<char*> argv;
  for (std::string& s : args) argv.push_back(s.data());
  std::cout << "replay: " << m.command << " from " << manifest_path << "\n";
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

int dispatch(int argc, char** argv) {
  CLI::App app{"desk-scale point-query scene text detection"};
  app.require_subcommand(1);
  uint64_t seed = default_seed();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  int scenes = 0, pps = 4, min_inst = 1, max_inst = 3;
  double inverse_prob = 0.03;
  std::string rotation = "none", out_dir;
  bool force = false;
  gen->add_option("--scenes", scenes, "number of base scenes")->required();
  gen->add_option("--inverse-prob", inverse_prob, "per-instance inverse probability");
  gen->add_option("--rotation", rotation, "none|train-set|rot-test-set");
  gen->add_option("--seed", seed, "rng seed");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--points-per-side", pps, "label control points per side");
  gen->add_option("--min-instances", min_inst, "min instances per scene");
  gen->add_option("--max-instances", max_inst, "max instances per scene");
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  // canonicalize
  auto* canon = app.add_subcommand("canonicalize", "rewrite annotation labels");
  std::string c_in, c_out, c_mode = "positional";
  canon->add_option("--in", c_in, "input annotations.json")->required();
  canon->add_option("--out", c_out, "output annotations.json")->required();
  canon->add_option("--mode", c_mode, "positional|clockwise-only");
  canon->add_option("--seed", seed, "rng seed (recorded only)");

  // train
  auto* tr = app.add_subcommand("train", "train a detector");
  TrainArgs ta;
  tr->add_option("--config", ta.config_path, "JSON config file");
  tr->add_option("--query-mode", ta.query_mode, "box_baseline|explicit_point");
  tr->add_option("--efsa", ta.efsa, "fsa|efsa");
  tr->add_option("--label-mode", ta.label_mode, "original|positional");
  tr->add_option("--rotation", ta.rotation, "on|off rotation augmentation");
  tr->add_option("--train-data", ta.train_data, "training dataset directory");
  tr->add_option("--eval-data", ta.eval_data, "held-out dataset directory");
  tr->add_option("--out", ta.out, "output directory");
  tr->add_option("--iterations", ta.iterations, "training iterations");
  tr->add_option("--batch-size", ta.batch_size, "batch size");
  tr->add_option("--decay-step", ta.decay_step, "lr decay step");
  tr->add_option("--eval-every", ta.eval_every, "evaluation period");
  tr->add_option("--lr", ta.lr, "initial learning rate");
  tr->add_option("--score-threshold", ta.score_threshold, "eval score threshold");
  tr->add_option("--iou-threshold", ta.iou_threshold, "eval IoU threshold");
  auto* seed_opt = tr->add_option("--seed", ta.seed, "rng seed");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data, e_out;
  double e_iou = 0.5, e_score = 0.5;
  ev->add_option("--checkpoint", e_ckpt, "model checkpoint")->required();
  ev->add_option("--data", e_data, "dataset directory")->required();
  ev->add_option("--iou-threshold", e_iou, "IoU match threshold");
  ev->add_option("--score-threshold", e_score, "prediction score threshold");
  ev->add_option("--out", e_out, "output directory for eval.json");
  ev->add_option("--seed", seed, "rng seed (recorded only)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the ablation grid");
  std::string a_root, a_out, a_seeds = "1,2,3", a_rot = "on";
  int a_iters = 2000, a_every = 250, a_train_scenes = 500, a_test_scenes = 100;
  ab->add_option("--data-root", a_root, "benchmark data root")->required();
  ab->add_option("--out", a_out, "output directory")->required();
  ab->add_option("--seeds", a_seeds, "comma-separated seeds");
  ab->add_option("--iterations", a_iters, "iterations per run");
  ab->add_option("--eval-every", a_every, "evaluation period");
  ab->add_option("--train-scenes", a_train_scenes, "scenes when generating data");
  ab->add_option("--test-scenes", a_test_scenes, "test scenes when generating data");
  ab->add_option("--rotation", a_rot, "on|off rotation augmentation");
  ab->add_option("--seed", seed, "data generation seed");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  double tolerance = 1e-4;
  std::string ops = "all";
  int n_seeds = 10;
  gc->add_option("--seed", seed, "base seed");
  gc->add_option("--tolerance", tolerance, "relative error tolerance");
  gc->add_option("--ops", ops, "all or comma-separated op list");
  gc->add_option("--seeds", n_seeds, "random seeds per op");

  // replay
  auto* rp = app.add_subcommand("replay", "re-run a command from its manifest");
  std::string manifest_path;
  rp->add_option("manifest", manifest_path, "manifest.json path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed())
      return run_gen_data(scenes, inverse_prob, rotation, seed, out_dir, force, pps, min_inst,
                          max_inst);
    if (canon->parsed()) return run_canonicalize(c_in, c_out, c_mode, seed);
    if (tr->parsed()) {
      ta.seed_set = seed_opt->count() > 0;
      return run_train(ta);
    }
    if (ev->parsed()) return run_eval(e_ckpt, e_data, e_iou, e_score, e_out, seed);
    if (ab->parsed())
      return run_ablate(a_root, a_out, a_seeds, a_iters, a_every, a_train_scenes, a_test_scenes,
                        a_rot, seed);
    if (gc->parsed()) return run_gradcheck(seed, tolerance, ops, n_seeds);
    if (rp->parsed()) return run_replay(manifest_path);
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DegenerateGeometryError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) { return dispatch(argc, argv); }
