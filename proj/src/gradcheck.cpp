#include "ptdet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ptdet/loss.hpp"
#include "ptdet/model.hpp"
#include "ptdet/nn.hpp"
#include "ptdet/ops.hpp"
#include "ptdet/synth.hpp"
#include "ptdet/train.hpp"

namespace ptdet {

namespace {

double rel_err(double a, double n) {
  return std::abs(a - n) / std::max(1e-3, std::abs(a) + std::abs(n));
}

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : *t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Values bounded away from zero, for ops with a kink at the origin.
Tensor random_tensor_off_origin(Rng& rng, std::vector<int> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : *t.data) {
    double m = rng.uniform(0.25, 1.5);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

}  // namespace

double check_gradients(Rng& rng, const std::function<Tensor()>& forward,
                       const std::vector<Tensor>& inputs, double h, int max_elems) {
  Tensor probe = forward();
  Tensor proj = random_tensor(rng, probe.shape, -1.0, 1.0);
  auto scalar_of = [&]() -> double {
    Tensor out = forward();
    double s = 0.0;
    for (int64_t i = 0; i < out.numel(); ++i) s += out.ptr()[i] * proj.ptr()[i];
    return s;
  };

  // analytic pass
  for (const Tensor& in : inputs) const_cast<Tensor&>(in).zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor out = forward();
    Tensor s = sum_all(mul(out, proj));
    tape.backward(s);
  }

  double worst = 0.0;
  for (const Tensor& in : inputs) {
    int64_t n = in.numel();
    std::vector<int64_t> idx(n);
    for (int64_t i = 0; i < n; ++i) idx[i] = i;
    if (max_elems > 0 && n > max_elems) {
      for (int64_t i = 0; i < n; ++i)
        std::swap(idx[i], idx[i + static_cast<int64_t>(rng.raw() % (n - i))]);
      idx.resize(max_elems);
    }
    for (int64_t i : idx) {
      double saved = in.ptr()[i];
      const_cast<Tensor&>(in).ptr()[i] = saved + h;
      double up = scalar_of();
      const_cast<Tensor&>(in).ptr()[i] = saved - h;
      double down = scalar_of();
      const_cast<Tensor&>(in).ptr()[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      double analytic = in.gptr()[i];
      worst = std::max(worst, rel_err(analytic, numeric));
    }
  }
  return worst;
}

GradCheckRegistry& GradCheckRegistry::instance() {
  static GradCheckRegistry reg;
  return reg;
}

void GradCheckRegistry::add(const std::string& name, GradCheckFn fn) {
  for (auto& [n, f] : checks_)
    if (n == name) {
      f = std::move(fn);
      return;
    }
  checks_.emplace_back(name, std::move(fn));
}

bool GradCheckRegistry::has(const std::string& name) const {
  for (const auto& [n, f] : checks_)
    if (n == name) return true;
  return false;
}

std::vector<std::string> GradCheckRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, f] : checks_) out.push_back(n);
  return out;
}

GradCheckResult GradCheckRegistry::run(const std::string& name, uint64_t base_seed,
                                       double tolerance, int n_seeds) const {
  for (const auto& [n, f] : checks_)
    if (n == name) {
      double worst = 0.0;
      for (int s = 0; s < n_seeds; ++s)
        worst = std::max(worst, f(Rng::mix(base_seed, static_cast<uint64_t>(s))));
      return {name, worst, worst < tolerance};
    }
  throw DimensionError("gradcheck: unknown op '" + name + "'");
}

std::vector<GradCheckResult> GradCheckRegistry::run_many(const std::vector<std::string>& which,
                                                         uint64_t base_seed, double tolerance,
                                                         int n_seeds) const {
  std::vector<GradCheckResult> out;
  for (const std::string& name : which) {
    double tol = name == "full_model" ? kModelGradTolerance : tolerance;
    out.push_back(run(name, base_seed, tol, n_seeds));
  }
  return out;
}

namespace {

double check_full_model(uint64_t seed) {
  // frozen tiny configuration: K=2, N=4, d=16, 4x4 feature grid (32x32 image)
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 8;
  mc.n_encoder_layers = 1;
  mc.n_decoder_layers = 2;
  mc.num_queries = 2;
  mc.n_ctrl_points = 4;
  mc.efsa_neighborhood = 2;  // kernel 3 <= N
  mc.d_ffn = 32;
  mc.stem_channels = {4, 8};
  TextDetector model(mc, Rng::mix(seed, 7));

  SceneParams sp;
  sp.width = 32;
  sp.height = 32;
  sp.min_instances = 1;
  sp.max_instances = 1;
  sp.halfwidth_min = 3.0;
  sp.halfwidth_max = 5.0;
  sp.points_per_side = 2;
  SceneRecord scene = generate_synthetic_scene(Rng::mix(seed, 11), sp);
  Dataset ds;
  ds.scenes.push_back(scene);
  std::vector<TrainScene> prepared = prepare_scenes(ds, "positional", mc.n_ctrl_points);
  const TrainScene& sc = prepared[0];

  // the analytic pass records the detached references (proposal selection,
  // per-layer points); finite differences pin them so both sides
  // differentiate the same stop-gradient semantics
  model.params().zero_grad();
  ReferenceTrace refs;
  Tape tape;
  {
    TapeScope scope(tape);
    DetectionOutput out = model.forward(sc.image, /*training=*/false);
    refs = out.refs;
    LossBreakdown lb = detection_loss(out, sc.gts);
    tape.backward(lb.total);
  }
  auto forward_loss = [&]() -> double {
    DetectionOutput out = model.forward(sc.image, /*training=*/false, &refs);
    return detection_loss(out, sc.gts).total_value;
  };

  Rng rng(Rng::mix(seed, 13));
  auto& params = model.params().params();
  const double h = 1e-5;
  double worst = 0.0;
  for (int probe = 0; probe < 20; ++probe) {
    size_t pi = rng.raw() % params.size();
    Tensor& t = params[pi].second;
    int64_t ei = static_cast<int64_t>(rng.raw() % static_cast<uint64_t>(t.numel()));
    double saved = t.ptr()[ei];
    t.ptr()[ei] = saved + h;
    double up = forward_loss();
    t.ptr()[ei] = saved - h;
    double down = forward_loss();
    t.ptr()[ei] = saved;
    double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, rel_err(t.gptr()[ei], numeric));
  }
  return worst;
}

}  // namespace

void register_builtin_gradchecks() {
  GradCheckRegistry& reg = GradCheckRegistry::instance();
  if (reg.has("add")) return;

  reg.add("add", [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor(rng, {3, 5});
    Tensor b = random_tensor(rng, {3, 5});
    a.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return add(a, b); }, {a, b});
  });
  reg.add("sub", [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor(rng, {4, 3});
    Tensor b = random_tensor(rng, {4, 3});
    a.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return sub(a, b); }, {a, b});
  });
  reg.add("mul", [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor(rng, {4, 3});
    Tensor b = random_tensor(rng, {4, 3});
    a.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return mul(a, b); }, {a, b});
  });
  reg.add("scale", [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor(rng, {2, 6});
    a.ensure_grad();
    double s = rng.uniform(-2.0, 2.0);
    return check_gradients(rng, [&] { return scale(a, s); }, {a});
  });
  reg.add("matmul", [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor(rng, {4, 6});
    Tensor b = random_tensor(rng, {6, 3});
    a.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return matmul(a, b); }, {a, b});
  });
  reg.add("bmm", [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor(rng, {2, 3, 4});
    Tensor b = random_tensor(rng, {2, 5, 4});
    a.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return bmm(a, b, true); }, {a, b});
  });
  reg.add("linear", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {5, 4});
    Tensor w = random_tensor(rng, {4, 3});
    Tensor b = random_tensor(rng, {3});
    x.ensure_grad();
    w.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return linear(x, w, b); }, {x, w, b});
  });
  reg.add("relu", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor_off_origin(rng, {4, 5});
    x.ensure_grad();
    return check_gradients(rng, [&] { return relu(x); }, {x});
  });
  reg.add("sigmoid", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {4, 5}, -3.0, 3.0);
    x.ensure_grad();
    return check_gradients(rng, [&] { return sigmoid(x); }, {x});
  });
  reg.add("inverse_sigmoid", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {4, 5}, 0.05, 0.95);
    x.ensure_grad();
    return check_gradients(rng, [&] { return inverse_sigmoid(x); }, {x});
  });
  reg.add("softmax", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {5, 7}, -2.0, 2.0);
    x.ensure_grad();
    return check_gradients(rng, [&] { return softmax(x); }, {x});
  });
  reg.add("layer_norm", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {4, 8});
    Tensor g = random_tensor(rng, {8}, 0.5, 1.5);
    Tensor b = random_tensor(rng, {8});
    x.ensure_grad();
    g.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return layer_norm(x, g, b); }, {x, g, b});
  });
  reg.add("batch_norm", [](uint64_t seed) {
    Rng rng(seed);
    ParamStore store;
    BatchNorm1d bn(store, "bn", 6);
    Tensor x = random_tensor(rng, {8, 6});
    x.ensure_grad();
    for (double& v : *bn.gamma.data) v = rng.uniform(0.5, 1.5);
    for (double& v : *bn.beta.data) v = rng.uniform(-0.5, 0.5);
    return check_gradients(rng, [&] { return bn.forward(x, /*training=*/true); },
                           {x, bn.gamma, bn.beta});
  });
  reg.add("l1_loss", [](uint64_t seed) {
    Rng rng(seed);
    Tensor p = random_tensor(rng, {4, 6});
    Tensor t = add_scalar(random_tensor(rng, {4, 6}, 1.2, 2.0), 0.5);  // keep |p-t| > 0
    p.ensure_grad();
    return check_gradients(rng, [&] { return l1_loss(p, t); }, {p});
  });
  reg.add("focal_loss", [](uint64_t seed) {
    Rng rng(seed);
    Tensor p = random_tensor(rng, {12}, 0.1, 0.9);
    p.ensure_grad();
    std::vector<double> targets(12);
    for (double& t : targets) t = rng.bernoulli(0.4) ? 1.0 : 0.0;
    return check_gradients(rng, [&] { return focal_loss_sum(p, targets, 0.25, 2.0); }, {p});
  });
  reg.add("circular_conv1d", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {2, 6, 3});
    Tensor k = random_tensor(rng, {4, 3, 3});
    Tensor b = random_tensor(rng, {4});
    x.ensure_grad();
    k.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return circular_conv1d(x, k, b); }, {x, k, b});
  });
  reg.add("sine_positional_encoding", [](uint64_t seed) {
    Rng rng(seed);
    Tensor pts = random_tensor(rng, {5, 2}, 0.1, 0.9);
    pts.ensure_grad();
    return check_gradients(rng, [&] { return sine_positional_encoding(pts, 16); }, {pts});
  });
  reg.add("bilinear_sample", [](uint64_t seed) {
    Rng rng(seed);
    Tensor map = random_tensor(rng, {5, 6, 3});
    // keep sample points off cell boundaries so the derivative exists
    Tensor locs = Tensor::zeros({7, 2});
    for (int i = 0; i < 7; ++i) {
      locs.ptr()[i * 2] = (rng.uniform_int(0, 4) + 0.3 + 0.4 * rng.uniform() + 0.5) / 6.0;
      locs.ptr()[i * 2 + 1] = (rng.uniform_int(0, 3) + 0.3 + 0.4 * rng.uniform() + 0.5) / 5.0;
    }
    map.ensure_grad();
    locs.ensure_grad();
    return check_gradients(rng, [&] { return bilinear_sample(map, locs); }, {map, locs});
  });
  reg.add("conv2d", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {6, 6, 2});
    Tensor k = random_tensor(rng, {3, 3, 2, 4});
    Tensor b = random_tensor(rng, {4});
    x.ensure_grad();
    k.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return conv2d(x, k, b, 2, 1); }, {x, k, b});
  });
  reg.add("deformable_attention", [](uint64_t seed) {
    Rng rng(seed);
    Tensor map = random_tensor(rng, {4, 4, 8});  // 4x4 feature map
    Tensor locs = Tensor::zeros({3, 2, 2, 2});
    for (int64_t i = 0; i < locs.numel() / 2; ++i) {
      locs.ptr()[i * 2] = (rng.uniform_int(0, 2) + 0.3 + 0.4 * rng.uniform() + 0.5) / 4.0;
      locs.ptr()[i * 2 + 1] = (rng.uniform_int(0, 2) + 0.3 + 0.4 * rng.uniform() + 0.5) / 4.0;
    }
    Tensor raw = random_tensor(rng, {3 * 2, 2});
    map.ensure_grad();
    locs.ensure_grad();
    raw.ensure_grad();
    return check_gradients(
        rng,
        [&] {
          Tensor w = reshape(softmax(raw), {3, 2, 2});
          return deform_sample_agg(map, locs, w, 2);
        },
        {map, locs, raw});
  });
  reg.add("multi_head_attention", [](uint64_t seed) {
    Rng rng(seed);
    ParamStore store;
    MultiHeadAttention mha(store, "mha", 8, 2, rng);
    Tensor q = random_tensor(rng, {2, 3, 8});
    Tensor k = random_tensor(rng, {2, 4, 8});
    Tensor v = random_tensor(rng, {2, 4, 8});
    q.ensure_grad();
    k.ensure_grad();
    v.ensure_grad();
    return check_gradients(rng, [&] { return mha.forward(q, k, v); },
                           {q, k, v, mha.wq.w, mha.wo.w});
  });
  reg.add("permute", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {2, 3, 4});
    x.ensure_grad();
    return check_gradients(rng, [&] { return permute(x, {1, 2, 0}); }, {x});
  });
  reg.add("concat_last", [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor(rng, {3, 2});
    Tensor b = random_tensor(rng, {3, 4});
    a.ensure_grad();
    b.ensure_grad();
    return check_gradients(rng, [&] { return concat_last(a, b); }, {a, b});
  });
  reg.add("gather_rows", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {6, 3});
    x.ensure_grad();
    std::vector<int> rows = {4, 1, 1, 5};
    return check_gradients(rng, [&] { return gather_rows(x, rows); }, {x});
  });
  reg.add("mean_axis", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {3, 4, 5});
    x.ensure_grad();
    return check_gradients(rng, [&] { return mean_axis(x, 1); }, {x});
  });
  reg.add("tile_broadcast", [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, {3, 4});
    x.ensure_grad();
    return check_gradients(rng, [&] { return repeat_axis1(tile0(x, 2), 3); }, {x});
  });
  reg.add("point_update", [](uint64_t seed) {
    Rng rng(seed);
    Tensor pts = random_tensor(rng, {4, 2}, 0.15, 0.85);
    Tensor off = random_tensor(rng, {4, 2}, -0.8, 0.8);
    off.ensure_grad();
    return check_gradients(rng, [&] { return sigmoid(add(inverse_sigmoid(pts), off)); }, {off});
  });
  reg.add("detection_loss", [](uint64_t seed) {
    Rng rng(seed);
    // gradient of the matched point/class losses w.r.t. raw predictions
    int k = 5, n = 4;
    Tensor logits = random_tensor(rng, {k}, -1.5, 1.5);
    Tensor pts = random_tensor(rng, {k, n, 2}, 0.15, 0.85);
    Tensor enc_logits = random_tensor(rng, {9}, -1.5, 1.5);
    Tensor enc_wh = random_tensor(rng, {9, 2}, 0.1, 0.6);
    logits.ensure_grad();
    pts.ensure_grad();
    enc_logits.ensure_grad();
    enc_wh.ensure_grad();
    std::vector<GroundTruthInstance> gts(2);
    for (GroundTruthInstance& gt : gts) {
      for (int j = 0; j < n; ++j) gt.points.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)});
      gt.box = {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.4),
                rng.uniform(0.1, 0.4)};
    }
    Tensor grid = Tensor::zeros({9, 2});
    for (int i = 0; i < 9; ++i) {
      grid.ptr()[i * 2] = (i % 3 + 0.5) / 3.0;
      grid.ptr()[i * 2 + 1] = (i / 3 + 0.5) / 3.0;
    }
    return check_gradients(
        rng,
        [&] {
          DetectionOutput out;
          out.encoder.obj_logits = enc_logits;
          out.encoder.boxes = concat_last(grid, enc_wh);
          out.layers.push_back({logits, pts});
          return detection_loss(out, gts).total;
        },
        {logits, pts, enc_logits, enc_wh});
  });
  reg.add("full_model", [](uint64_t seed) { return check_full_model(seed); });
}

}  // namespace ptdet
