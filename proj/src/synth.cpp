#include "ptdet/synth.hpp"

#include <cmath>

#include "ptdet/rng.hpp"

namespace ptdet {

namespace {

constexpr uint8_t kBackground = 14;
constexpr int kSpineSamples = 33;

struct Spine {
  Vec2 a, c, b;  // quadratic Bezier: a at t=0 (reading start), b at t=1
  Vec2 eval(double t) const {
    double u = 1.0 - t;
    return a * (u * u) + c * (2.0 * u * t) + b * (t * t);
  }
  Vec2 tangent(double t) const {
    return (c - a) * (2.0 * (1.0 - t)) + (b - c) * (2.0 * t);
  }
  /// Unit normal to the left of the travel direction; for left-to-right
  /// travel this points up (negative y), toward the reading-order top side.
  Vec2 left_normal(double t) const {
    Vec2 d = tangent(t);
    double len = norm(d);
    if (len < 1e-9) return {0.0, -1.0};
    return {d.y / len, -d.x / len};
  }
};

struct RibbonInstance {
  Spine spine;
  double halfwidth = 0.0;
  Polygon2D label;  // reading order, 2 * pps points
  Orientation tag = Orientation::kNormal;
};

Polygon2D ribbon_polygon(const Spine& sp, double hw, int pts_per_side) {
  Polygon2D poly;
  for (int i = 0; i < pts_per_side; ++i) {
    double t = static_cast<double>(i) / (pts_per_side - 1);
    poly.points.push_back(sp.eval(t) + sp.left_normal(t) * hw);
  }
  for (int i = pts_per_side - 1; i >= 0; --i) {
    double t = static_cast<double>(i) / (pts_per_side - 1);
    poly.points.push_back(sp.eval(t) - sp.left_normal(t) * hw);
  }
  return poly;
}

bool in_bounds(const Polygon2D& poly, double margin, int w, int h) {
  for (const Vec2& p : poly.points)
    if (p.x < margin || p.y < margin || p.x > w - margin || p.y > h - margin) return false;
  return true;
}

struct Bbox {
  double x0, y0, x1, y1;
};

Bbox label_bbox(const Polygon2D& p) {
  Bbox b{p.points[0].x, p.points[0].y, p.points[0].x, p.points[0].y};
  for (const Vec2& v : p.points) {
    b.x0 = std::min(b.x0, v.x);
    b.y0 = std::min(b.y0, v.y);
    b.x1 = std::max(b.x1, v.x);
    b.y1 = std::max(b.y1, v.y);
  }
  return b;
}

bool bboxes_overlap(const Bbox& a, const Bbox& b) {
  return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

/// Even-odd scanline fill over integer pixel centers.
void fill_polygon_pixels(const Polygon2D& poly, int w, int h,
                         std::vector<std::pair<int, int>>& pixels) {
  Bbox bb = label_bbox(poly);
  int y0 = std::max(0, static_cast<int>(std::floor(bb.y0)));
  int y1 = std::min(h - 1, static_cast<int>(std::ceil(bb.y1)));
  int nedges = poly.size();
  std::vector<double> xs;
  for (int row = y0; row <= y1; ++row) {
    double y = row + 0.5;
    xs.clear();
    for (int i = 0; i < nedges; ++i) {
      const Vec2& p = poly.points[i];
      const Vec2& q = poly.points[(i + 1) % nedges];
      if ((p.y <= y && q.y > y) || (q.y <= y && p.y > y))
        xs.push_back(p.x + (y - p.y) / (q.y - p.y) * (q.x - p.x));
    }
    std::sort(xs.begin(), xs.end());
    for (size_t m = 0; m + 1 < xs.size(); m += 2) {
      int c0 = std::max(0, static_cast<int>(std::ceil(xs[m] - 0.5)));
      int c1 = std::min(w - 1, static_cast<int>(std::floor(xs[m + 1] - 0.5)));
      for (int col = c0; col <= c1; ++col) pixels.emplace_back(row, col);
    }
  }
}

}  // namespace

SceneRecord generate_synthetic_scene(uint64_t seed, const SceneParams& prm) {
  Rng rng(seed);
  SceneRecord scene;
  scene.width = prm.width;
  scene.height = prm.height;
  scene.pixels.resize(static_cast<size_t>(prm.width) * prm.height);
  for (uint8_t& p : scene.pixels) p = static_cast<uint8_t>(kBackground + rng.uniform_int(0, 7));

  int n_inst = rng.uniform_int(prm.min_instances, prm.max_instances);
  std::vector<RibbonInstance> placed;
  std::vector<Bbox> boxes;
  double min_side = std::min(prm.width, prm.height);
  double usable = min_side - 2.0 * (prm.margin + prm.halfwidth_max);
  for (int inst = 0; inst < n_inst; ++inst) {
    bool ok = false;
    RibbonInstance rb;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      double chord = std::max(4.0, rng.uniform(0.35, 0.7) * usable);
      // base reading direction points rightward (normal text); the inverse
      // flag alone flips it
      double angle = rng.uniform(-1.5, 1.5);
      double hw = rng.uniform(prm.halfwidth_min, prm.halfwidth_max);
      double reach = chord * 0.5 + hw + prm.margin;
      Vec2 dir{std::cos(angle), std::sin(angle)};
      Vec2 center{rng.uniform(reach, prm.width - reach),
                  rng.uniform(reach, prm.height - reach)};
      Vec2 a = center - dir * (chord * 0.5);
      Vec2 b = center + dir * (chord * 0.5);
      double bend = rng.uniform(prm.curvature_min, prm.curvature_max) * chord;
      if (rng.bernoulli(0.5)) bend = -bend;
      Vec2 perp{-dir.y, dir.x};
      Vec2 ctrl = center + perp * bend;
      if (rng.bernoulli(prm.inverse_prob)) std::swap(a, b);  // reversed reading direction
      if (prm.width - reach <= reach || prm.height - reach <= reach) continue;

      rb.spine = {a, ctrl, b};
      rb.halfwidth = hw;
      rb.label = ribbon_polygon(rb.spine, rb.halfwidth, prm.points_per_side);
      if (!in_bounds(rb.label, prm.margin, prm.width, prm.height)) continue;
      Bbox bb = label_bbox(rb.label);
      bool overlap = false;
      for (const Bbox& other : boxes) overlap |= bboxes_overlap(bb, other);
      if (overlap) continue;
      rb.tag = rb.spine.left_normal(0.5).y > 0.0 ? Orientation::kInverse : Orientation::kNormal;
      boxes.push_back(bb);
      ok = true;
    }
    if (!ok) {
      // a crowded canvas may not fit the extra instances; the minimum must fit
      if (static_cast<int>(placed.size()) >= prm.min_instances) break;
      throw DataError("generate_synthetic_scene: could not place instance " +
                      std::to_string(inst) + " within 100 attempts (seed " +
                      std::to_string(seed) + ")");
    }
    placed.push_back(rb);
  }

  int instance_id = 0;
  for (const RibbonInstance& rb : placed) {
    // dense outline for rasterization; the label itself stays coarse
    Polygon2D dense = ribbon_polygon(rb.spine, rb.halfwidth, 24);
    std::vector<std::pair<int, int>> pixels;
    fill_polygon_pixels(dense, prm.width, prm.height, pixels);

    std::vector<Vec2> spine_pts(kSpineSamples);
    for (int i = 0; i < kSpineSamples; ++i)
      spine_pts[i] = rb.spine.eval(static_cast<double>(i) / (kSpineSamples - 1));

    for (const auto& [row, col] : pixels) {
      Vec2 p{col + 0.5, row + 0.5};
      double best = 1e30;
      int best_i = 0;
      for (int i = 0; i < kSpineSamples; ++i) {
        double d = norm(p - spine_pts[i]);
        if (d < best) {
          best = d;
          best_i = i;
        }
      }
      double t = static_cast<double>(best_i) / (kSpineSamples - 1);
      double intensity = 225.0 - 95.0 * t + rng.uniform(-6.0, 6.0);
      scene.pixels[static_cast<size_t>(row) * prm.width + col] =
          static_cast<uint8_t>(std::min(std::max(intensity, 0.0), 255.0));
    }

    TextAnnotation ann;
    ann.polygon = rb.label;
    ann.orientation = rb.tag;
    ann.instance_id = instance_id++;
    scene.annotations.push_back(std::move(ann));
  }
  return scene;
}

const std::vector<double>& RotationAngles::train_set() {
  static const std::vector<double> angles = {-45, -30, -15, 15, 30, 45};
  return angles;
}

const std::vector<double>& RotationAngles::rot_test_set() {
  static const std::vector<double> angles = {45, 135, 180, 225, 315};
  return angles;
}

RotationMode rotation_mode_from_name(const std::string& s) {
  if (s == "none") return RotationMode::kNone;
  if (s == "train-set") return RotationMode::kTrainSet;
  if (s == "rot-test-set") return RotationMode::kRotTestSet;
  throw DataError("unknown rotation mode '" + s + "' (none|train-set|rot-test-set)");
}

std::string rotation_mode_name(RotationMode m) {
  switch (m) {
    case RotationMode::kNone: return "none";
    case RotationMode::kTrainSet: return "train-set";
    case RotationMode::kRotTestSet: return "rot-test-set";
  }
  return "none";
}

Dataset expand_rotation(const Dataset& ds, RotationMode rotation) {
  Dataset out;
  if (rotation == RotationMode::kTrainSet) {
    for (const SceneRecord& s : ds.scenes) {
      out.scenes.push_back(s);
      for (double a : RotationAngles::train_set()) out.scenes.push_back(rotate_scene(s, a));
      bool all_normal = true;
      for (const TextAnnotation& an : s.annotations)
        all_normal &= an.orientation == Orientation::kNormal;
      if (all_normal) out.scenes.push_back(rotate_scene(s, 180.0));
    }
  } else if (rotation == RotationMode::kRotTestSet) {
    for (const SceneRecord& s : ds.scenes) {
      out.scenes.push_back(s);
      for (double a : RotationAngles::rot_test_set()) out.scenes.push_back(rotate_scene(s, a));
    }
  } else {
    out = ds;
  }
  for (size_t i = 0; i < out.scenes.size(); ++i) {
    out.scenes[i].id = static_cast<int>(i);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05zu.pgm", i);
    out.scenes[i].file = name;
  }
  return out;
}

Dataset generate_dataset(uint64_t seed, int n_scenes, const SceneParams& params,
                         RotationMode rotation) {
  Dataset ds;
  for (int i = 0; i < n_scenes; ++i)
    ds.scenes.push_back(generate_synthetic_scene(Rng::mix(seed, i), params));
  return expand_rotation(ds, rotation);
}

}  // namespace ptdet
