#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ptdet/geometry.hpp"
#include "ptdet/gradcheck.hpp"
#include "ptdet/model.hpp"
#include "ptdet/rng.hpp"

using namespace ptdet;

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

Tensor random_image(Rng& rng, int h, int w) {
  Tensor img = Tensor::zeros({h, w, 1});
  for (double& v : *img.data) v = rng.uniform(-1.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("prior points sampling reproduces the derived example exactly") {
  AnchorBoxProposal box{0.5, 0.5, 0.4, 0.2, 1.0};
  std::vector<Vec2> pts = prior_points_sampling(box, 4);
  REQUIRE(pts.size() == 4);
  // bit-exact against the formula terms evaluated the same way
  CHECK(pts[0].x == box.cx - box.w / 2.0);
  CHECK(pts[0].y == box.cy - box.h / 2.0);
  CHECK(pts[1].x == box.cx - box.w / 2.0 + box.w);
  CHECK(pts[1].y == box.cy - box.h / 2.0);
  CHECK(pts[2].x == box.cx - box.w / 2.0 + box.w);
  CHECK(pts[2].y == box.cy + box.h / 2.0);
  CHECK(pts[3].x == box.cx - box.w / 2.0);
  CHECK(pts[3].y == box.cy + box.h / 2.0);
  // and against the stated values
  CHECK(pts[0].x == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(pts[0].y == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(pts[1].x == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(pts[2].y == doctest::Approx(0.6).epsilon(1e-12));

  // degenerate box: all points collapse onto the center
  AnchorBoxProposal degen{0.4, 0.6, 0.0, 0.0, 1.0};
  for (const Vec2& p : prior_points_sampling(degen, 8)) {
    CHECK(p.x == 0.4);
    CHECK(p.y == 0.6);
  }

  CHECK_THROWS_AS((void)prior_points_sampling(box, 2), DimensionError);
}

TEST_CASE("prior points sampling is clockwise for 1000 random boxes") {
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    AnchorBoxProposal box;
    box.cx = rng.uniform(0.1, 0.9);
    box.cy = rng.uniform(0.1, 0.9);
    box.w = rng.uniform(0.02, 0.6);
    box.h = rng.uniform(0.02, 0.6);
    int n = 2 * (2 + rng.uniform_int(0, 6));
    std::vector<Vec2> pts = prior_points_sampling(box, n);
    Polygon2D poly;
    poly.points = pts;
    CHECK(is_clockwise(poly));
    for (const Vec2& p : pts) {
      CHECK(p.x >= 0.0);
      CHECK(p.x <= 1.0);
      CHECK(p.y >= 0.0);
      CHECK(p.y <= 1.0);
    }
  }
}

TEST_CASE("positional query encode: determinism, shape, distinct rows") {
  TextDetector model(tiny_config(), 7);
  Tensor pts = Tensor::zeros({2, 4, 2});
  Rng rng(5);
  AnchorBoxProposal box{0.5, 0.45, 0.5, 0.3, 1.0};
  std::vector<Vec2> sampled = prior_points_sampling(box, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) {
      pts.ptr()[(i * 4 + j) * 2] = sampled[j].x;
      pts.ptr()[(i * 4 + j) * 2 + 1] = sampled[j].y;
    }
  Tensor p = model.positional_query_encode(pts);
  CHECK(p.shape == std::vector<int>({2, 4, 16}));
  // identical point sets give identical rows
  for (int j = 0; j < 4 * 16; ++j) CHECK(p.ptr()[j] == p.ptr()[4 * 16 + j]);
  // distinct points give distinct positional vectors (w, h > 0)
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) {
      bool differ = false;
      for (int c = 0; c < 16; ++c) differ |= p.ptr()[a * 16 + c] != p.ptr()[b * 16 + c];
      CHECK(differ);
    }
}

TEST_CASE("baseline box query encode broadcasts one vector to all N rows") {
  TextDetector model(tiny_config(), 7);
  std::vector<AnchorBoxProposal> boxes = {{0.3, 0.4, 0.2, 0.1, 1.0}, {0.6, 0.5, 0.3, 0.2, 1.0}};
  Tensor p = model.baseline_box_query_encode(boxes);
  CHECK(p.shape == std::vector<int>({2, 4, 16}));
  for (int i = 0; i < 2; ++i)
    for (int j = 1; j < 4; ++j)
      for (int c = 0; c < 16; ++c)
        CHECK(p.ptr()[(i * 4 + j) * 16 + c] == p.ptr()[(i * 4 + 0) * 16 + c]);
  // two distinct boxes yield distinct positional parts
  bool differ = false;
  for (int c = 0; c < 16; ++c) differ |= p.ptr()[c] != p.ptr()[4 * 16 + c];
  CHECK(differ);
}

TEST_CASE("point update examples") {
  Tensor pts = Tensor::from({1, 2}, {0.5, 0.5});
  Tensor zero_off = Tensor::zeros({1, 2});
  Tensor same = sigmoid(add(inverse_sigmoid(pts), zero_off));
  CHECK(std::abs(same.ptr()[0] - 0.5) < 1e-9);
  CHECK(std::abs(same.ptr()[1] - 0.5) < 1e-9);

  Tensor ln3 = Tensor::from({1, 2}, {std::log(3.0), std::log(3.0)});
  Tensor moved = sigmoid(add(inverse_sigmoid(pts), ln3));
  CHECK(moved.ptr()[0] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(77);
  for (int t = 0; t < 200; ++t) {
    Tensor p0 = Tensor::from({1, 2}, {rng.uniform(0.001, 0.999), rng.uniform(0.001, 0.999)});
    Tensor off = Tensor::from({1, 2}, {rng.uniform(-8, 8), rng.uniform(-8, 8)});
    Tensor upd = sigmoid(add(inverse_sigmoid(p0), off));
    for (int i = 0; i < 2; ++i) {
      CHECK(upd.ptr()[i] > 0.0);
      CHECK(upd.ptr()[i] < 1.0);
    }
  }
}

TEST_CASE("efsa: shape contract, K-permutation equivariance, local-branch rotation") {
  ModelConfig mc = tiny_config();
  TextDetector model(mc, 21);
  Rng rng(13);
  int k = 3, n = 4, d = 16;
  Tensor c = Tensor::zeros({k, n, d});
  Tensor p = Tensor::zeros({k, n, d});
  for (double& v : *c.data) v = rng.uniform(-1.0, 1.0);
  for (double& v : *p.data) v = rng.uniform(-1.0, 1.0);
  Tensor q = add(c, p);

  Tensor out = model.efsa(0, q, c, p, /*training=*/false);
  CHECK(out.shape == std::vector<int>({k, n, d}));

  // permuting the K instances permutes the output identically
  std::vector<int> perm = {2, 0, 1};
  auto permute_k = [&](const Tensor& t) {
    Tensor r = Tensor::zeros({k, n, d});
    for (int i = 0; i < k; ++i)
      std::copy(t.ptr() + perm[i] * n * d, t.ptr() + (perm[i] + 1) * n * d,
                r.ptr() + i * n * d);
    return r;
  };
  Tensor out_p = model.efsa(0, permute_k(q), permute_k(c), permute_k(p), false);
  Tensor expect = permute_k(out);
  for (int64_t i = 0; i < out_p.numel(); ++i)
    CHECK(out_p.ptr()[i] == doctest::Approx(expect.ptr()[i]).epsilon(1e-9));

  // cyclically rotating one instance's points rotates Q_local identically
  Tensor local = model.efsa_local_branch(0, q, false);
  int shift = 1;
  Tensor q_rot = Tensor::zeros({k, n, d});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j)
      std::copy(q.ptr() + (i * n + j) * d, q.ptr() + (i * n + j + 1) * d,
                q_rot.ptr() + (i * n + (j + shift) % n) * d);
  Tensor local_rot = model.efsa_local_branch(0, q_rot, false);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j)
      for (int ch = 0; ch < d; ++ch)
        CHECK(local_rot.ptr()[(i * n + (j + shift) % n) * d + ch] ==
              doctest::Approx(local.ptr()[(i * n + j) * d + ch]).epsilon(1e-9));
}

TEST_CASE("encoder: proposal contracts") {
  ModelConfig mc = tiny_config();
  TextDetector model(mc, 3);
  Rng rng(2);
  Tensor img = random_image(rng, 32, 32);
  DetectionOutput out = model.forward(img, false);
  CHECK(out.encoder.proposals.size() == static_cast<size_t>(mc.num_queries));
  for (const AnchorBoxProposal& b : out.encoder.proposals) {
    CHECK(b.w > 0.0);
    CHECK(b.h > 0.0);
    CHECK(b.cx - b.w / 2 >= -1e-12);
    CHECK(b.cx + b.w / 2 <= 1.0 + 1e-12);
    CHECK(b.cy - b.h / 2 >= -1e-12);
    CHECK(b.cy + b.h / 2 <= 1.0 + 1e-12);
  }

  // K larger than the number of memory positions is a configuration error
  ModelConfig big = tiny_config();
  big.num_queries = 17;  // 4x4 grid = 16 positions
  TextDetector model_big(big, 3);
  CHECK_THROWS_AS((void)model_big.forward(img, false), DimensionError);
}

TEST_CASE("decoder forward: per-layer outputs, points in the unit square") {
  for (QueryMode qm : {QueryMode::kExplicitPoint, QueryMode::kBoxBaseline}) {
    ModelConfig mc = tiny_config();
    mc.query_mode = qm;
    TextDetector model(mc, 11);
    Rng rng(8);
    Tensor img = random_image(rng, 32, 32);
    DetectionOutput out = model.forward(img, false);
    CHECK(out.layers.size() == static_cast<size_t>(mc.n_decoder_layers));
    for (const LayerOutput& lo : out.layers) {
      CHECK(lo.class_logits.shape == std::vector<int>({mc.num_queries}));
      CHECK(lo.points.shape == std::vector<int>({mc.num_queries, mc.n_ctrl_points, 2}));
      for (int64_t i = 0; i < lo.points.numel(); ++i) {
        CHECK(lo.points.ptr()[i] >= 0.0);
        CHECK(lo.points.ptr()[i] <= 1.0);
      }
    }
  }
}

TEST_CASE("forward is deterministic for a fixed seed") {
  ModelConfig mc = tiny_config();
  Rng rng(31);
  Tensor img = random_image(rng, 32, 32);
  TextDetector m1(mc, 42);
  TextDetector m2(mc, 42);
  DetectionOutput o1 = m1.forward(img, false);
  DetectionOutput o2 = m2.forward(img, false);
  CHECK(*o1.layers.back().points.data == *o2.layers.back().points.data);
  CHECK(*o1.layers.back().class_logits.data == *o2.layers.back().class_logits.data);
  DetectionOutput o3 = m1.forward(img, false);
  CHECK(*o1.layers.back().points.data == *o3.layers.back().points.data);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  namespace fs = std::filesystem;
  ModelConfig mc = tiny_config();
  mc.query_mode = QueryMode::kExplicitPoint;
  TextDetector model(mc, 2024);
  Rng rng(12);
  Tensor img = random_image(rng, 32, 32);
  DetectionOutput before = model.forward(img, false);

  fs::path dir = fs::temp_directory_path() / "ptdet_ckpt_test";
  fs::create_directories(dir);
  std::string path = (dir / "model.ckpt").string();
  model.save_checkpoint(path);
  auto loaded = TextDetector::load_checkpoint(path);

  auto& pa = model.params().params();
  auto& pb = loaded->params().params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(*pa[i].second.data == *pb[i].second.data);
  }
  DetectionOutput after = loaded->forward(img, false);
  CHECK(*before.layers.back().points.data == *after.layers.back().points.data);

  // save -> load -> save produces identical bytes
  std::string path2 = (dir / "model2.ckpt").string();
  loaded->save_checkpoint(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
  fs::remove_all(dir);
}

TEST_CASE("frozen tiny full model passes the finite-difference check") {
  register_builtin_gradchecks();
  GradCheckResult r =
      GradCheckRegistry::instance().run("full_model", 881, kModelGradTolerance, 2);
  INFO("max_rel_err: ", r.max_rel_err);
  CHECK(r.pass);
}
