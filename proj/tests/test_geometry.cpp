#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ptdet/annotations.hpp"
#include "ptdet/geometry.hpp"
#include "ptdet/rng.hpp"
#include "ptdet/synth.hpp"

using namespace ptdet;

namespace {

Polygon2D quad(std::initializer_list<Vec2> pts) {
  Polygon2D p;
  p.points = pts;
  return p;
}

const Vec2 TL{0, 0}, TR{1, 0}, BR{1, 1}, BL{0, 1};

/// Random ribbon-like polygons with clearly nonzero area, for the
/// canonicalizer property tests.
Polygon2D random_polygon(Rng& rng) {
  int half = 2 + rng.uniform_int(0, 3);  // 4..10 points total
  double cx = rng.uniform(20, 44), cy = rng.uniform(20, 44);
  double angle = rng.uniform(0, 2 * 3.14159265358979323846);
  double len = rng.uniform(12, 24), width = rng.uniform(3, 8);
  Vec2 dir{std::cos(angle), std::sin(angle)};
  Vec2 n{dir.y, -dir.x};
  Polygon2D p;
  for (int i = 0; i < half; ++i) {
    double t = static_cast<double>(i) / (half - 1);
    Vec2 spine{cx + dir.x * (t - 0.5) * len, cy + dir.y * (t - 0.5) * len};
    double jitter = rng.uniform(-0.8, 0.8);
    p.points.push_back(spine + n * (width + jitter));
  }
  for (int i = half - 1; i >= 0; --i) {
    double t = static_cast<double>(i) / (half - 1);
    Vec2 spine{cx + dir.x * (t - 0.5) * len, cy + dir.y * (t - 0.5) * len};
    double jitter = rng.uniform(-0.8, 0.8);
    p.points.push_back(spine - n * (width + jitter));
  }
  if (rng.bernoulli(0.5)) {  // random direction flip
    Polygon2D q;
    for (int i = 0; i < p.size(); ++i) q.points.push_back(p.points[(p.size() - i) % p.size()]);
    p = q;
  }
  if (rng.bernoulli(0.5)) {  // random start rotation by half
    std::rotate(p.points.begin(), p.points.begin() + p.size() / 2, p.points.end());
  }
  return p;
}

bool same_multiset(const Polygon2D& a, const Polygon2D& b) {
  auto key = [](const Vec2& v) { return std::pair<double, double>(v.x, v.y); };
  std::vector<std::pair<double, double>> ka, kb;
  for (const Vec2& v : a.points) ka.push_back(key(v));
  for (const Vec2& v : b.points) kb.push_back(key(v));
  std::sort(ka.begin(), ka.end());
  std::sort(kb.begin(), kb.end());
  return ka == kb;
}

}  // namespace

TEST_CASE("shoelace area and clockwise checks") {
  Polygon2D sq = quad({TL, TR, BR, BL});
  CHECK(signed_area(sq) == doctest::Approx(1.0));
  CHECK(is_clockwise(sq));

  Polygon2D rev = quad({BL, BR, TR, TL});
  CHECK(signed_area(rev) == doctest::Approx(-1.0));
  CHECK_FALSE(is_clockwise(rev));

  Polygon2D collinear = quad({{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  CHECK_THROWS_AS((void)is_clockwise(collinear), DegenerateGeometryError);
}

TEST_CASE("bezier sampling hits endpoints and known midpoints") {
  BezierSide line = {Vec2{0, 0}, Vec2{1, 0}, Vec2{2, 0}, Vec2{3, 0}};
  std::vector<Vec2> pts = bezier_sample(line, 3);
  CHECK(pts[0] == line[0]);
  CHECK(pts[2] == line[3]);
  CHECK(pts[1].x == doctest::Approx(1.5));
  CHECK(pts[1].y == doctest::Approx(0.0));

  BezierSide arc = {Vec2{0, 0}, Vec2{0, 1}, Vec2{1, 1}, Vec2{1, 0}};
  std::vector<Vec2> mid = bezier_sample(arc, 3);
  CHECK(mid[1].x == doctest::Approx(0.5));
  CHECK(mid[1].y == doctest::Approx(0.75));

  CHECK_THROWS_AS((void)bezier_sample(arc, 1), std::invalid_argument);
}

TEST_CASE("bezier fit recovers control points and round-trips") {
  BezierSide curve = {Vec2{3, 14}, Vec2{9, 4}, Vec2{22, 25}, Vec2{30, 12}};
  std::vector<Vec2> sampled = bezier_sample(curve, 8);
  BezierSide fit = bezier_fit(sampled);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(fit[i].x - curve[i].x) < 1e-6);
    CHECK(std::abs(fit[i].y - curve[i].y) < 1e-6);
  }
  // round-trip error stays tiny at the original samples
  std::vector<Vec2> resampled = bezier_sample(fit, 8);
  for (size_t i = 0; i < sampled.size(); ++i) {
    CHECK(std::abs(resampled[i].x - sampled[i].x) < 1e-6);
    CHECK(std::abs(resampled[i].y - sampled[i].y) < 1e-6);
  }

  // collinear equally spaced points keep the interior points on the line
  std::vector<Vec2> line_pts = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  BezierSide lf = bezier_fit(line_pts);
  CHECK(std::abs(lf[1].y - lf[1].x) < 1e-9);
  CHECK(std::abs(lf[2].y - lf[2].x) < 1e-9);

  // two distinct points repeated: rank-deficient
  std::vector<Vec2> degen = {{0, 0}, {0, 0}, {5, 5}, {5, 5}};
  CHECK_THROWS_AS((void)bezier_fit(degen), DegenerateGeometryError);
}

TEST_CASE("canonicalizer spec examples") {
  // already canonical: unchanged
  Polygon2D canon = canonicalize_positional_label(quad({TL, TR, BR, BL}));
  CHECK(canon.points == std::vector<Vec2>({TL, TR, BR, BL}));

  // 180-degree reading order relocates the start to the upper side
  Polygon2D inv = canonicalize_positional_label(quad({BR, BL, TL, TR}));
  CHECK(inv.points == std::vector<Vec2>({TL, TR, BR, BL}));

  // counter-clockwise input: reversed, then start-adjusted
  Polygon2D ccw = canonicalize_positional_label(quad({TL, BL, BR, TR}));
  CHECK(ccw.points == std::vector<Vec2>({TL, TR, BR, BL}));

  Polygon2D degen = quad({{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  CHECK_THROWS_AS((void)canonicalize_positional_label(degen), DegenerateGeometryError);
}

TEST_CASE("canonicalizer is idempotent, clockwise and multiset-preserving") {
  Rng rng(1234);
  for (int trial = 0; trial < 10000; ++trial) {
    Polygon2D p = random_polygon(rng);
    Polygon2D c1 = canonicalize_positional_label(p);
    Polygon2D c2 = canonicalize_positional_label(c1);
    CHECK(c1.points == c2.points);  // exact idempotence
    CHECK(is_clockwise(c1));
    CHECK(same_multiset(p, c1));
  }
}

TEST_CASE("canonicalizer starts on the spatially upper side for top/bottom instances") {
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    Polygon2D p = random_polygon(rng);
    Polygon2D c = canonicalize_positional_label(p);
    int half = c.size() / 2;
    double ya = 0, yb = 0;
    for (int i = 0; i < half; ++i) ya += c.points[i].y;
    for (int i = half; i < c.size(); ++i) yb += c.points[i].y;
    double xa = 0, xb = 0;
    for (int i = 0; i < half; ++i) xa += c.points[i].x;
    for (int i = half; i < c.size(); ++i) xb += c.points[i].x;
    if (std::abs(ya - yb) >= std::abs(xa - xb)) {
      // top/bottom arranged: the start side must be the upper one; a 180
      // degree rotation must land on the (new) upper side as well
      CHECK(ya <= yb);
      Polygon2D rotated = p;
      for (Vec2& v : rotated.points) v = {64.0 - v.x, 64.0 - v.y};
      Polygon2D cr = canonicalize_positional_label(rotated);
      double rya = 0, ryb = 0;
      for (int i = 0; i < half; ++i) rya += cr.points[i].y;
      for (int i = half; i < cr.size(); ++i) ryb += cr.points[i].y;
      CHECK(rya <= ryb);
    }
  }
}

TEST_CASE("rotation frame: point symmetry, identity, left/right start rule") {
  const int w = 64, h = 48;
  RotatedFrame f180 = rotation_frame(w, h, 180.0);
  Vec2 p{0.25 * w, 0.25 * h};
  Vec2 r = f180.apply(p);
  CHECK(r.x == doctest::Approx(0.75 * w).epsilon(1e-12));
  CHECK(r.y == doctest::Approx(0.75 * h).epsilon(1e-12));

  RotatedFrame f360 = rotation_frame(w, h, 360.0);
  Vec2 q{17.0, 31.0};
  Vec2 rq = f360.apply(q);
  CHECK(std::abs(rq.x - q.x) < 1e-9);
  CHECK(std::abs(rq.y - q.y) < 1e-9);

  // wide, slightly slanted quad: after 90 degrees the sides sit left/right
  // and the start side is the one with the smaller minimum y
  TextAnnotation ann;
  ann.polygon = quad({{10, 20}, {50, 22}, {50, 30}, {10, 28}});
  TextAnnotation rot = rotate_annotation(ann, 90.0, w, h, /*positional_mode=*/true);
  const Polygon2D& c = rot.polygon;
  int half = c.size() / 2;
  double min_start = 1e30, min_other = 1e30;
  for (int i = 0; i < half; ++i) min_start = std::min(min_start, c.points[i].y);
  for (int i = half; i < c.size(); ++i) min_other = std::min(min_other, c.points[i].y);
  CHECK(min_start <= min_other);
  CHECK(is_clockwise(c));
}

TEST_CASE("polygon IoU: identical, disjoint, analytic rectangles") {
  Polygon2D a = quad({{0, 0}, {2, 0}, {2, 2}, {0, 2}});
  CHECK(polygon_iou(a, a).iou == doctest::Approx(1.0));

  Polygon2D far = quad({{10, 10}, {12, 10}, {12, 12}, {10, 12}});
  CHECK(polygon_iou(a, far).iou == 0.0);

  Polygon2D b = quad({{1, 1}, {3, 1}, {3, 3}, {1, 3}});
  double iou = polygon_iou(a, b, 512).iou;
  CHECK(std::abs(iou - 1.0 / 7.0) < 0.01);

  // zero-area union flags degeneracy
  Polygon2D flat = quad({{0, 0}, {1, 0}, {1, 0}, {0, 0}});
  CHECK(polygon_iou(flat, flat).degenerate);
}

TEST_CASE("polygon IoU is symmetric and stable across raster resolutions") {
  Rng rng(55);
  for (int trial = 0; trial < 40; ++trial) {
    double x0 = rng.uniform(0, 10), y0 = rng.uniform(0, 10);
    double w0 = rng.uniform(2, 12), h0 = rng.uniform(2, 12);
    double x1 = rng.uniform(0, 10), y1 = rng.uniform(0, 10);
    double w1 = rng.uniform(2, 12), h1 = rng.uniform(2, 12);
    Polygon2D a = quad({{x0, y0}, {x0 + w0, y0}, {x0 + w0, y0 + h0}, {x0, y0 + h0}});
    Polygon2D b = quad({{x1, y1}, {x1 + w1, y1}, {x1 + w1, y1 + h1}, {x1, y1 + h1}});
    double ab = polygon_iou(a, b, 512).iou;
    double ba = polygon_iou(b, a, 512).iou;
    CHECK(ab == ba);
    double coarse = polygon_iou(a, b, 256).iou;
    CHECK(std::abs(ab - coarse) < 0.01);
    // analytic rectangle overlap
    double ix = std::max(0.0, std::min(x0 + w0, x1 + w1) - std::max(x0, x1));
    double iy = std::max(0.0, std::min(y0 + h0, y1 + h1) - std::max(y0, y1));
    double inter = ix * iy;
    double uni = w0 * h0 + w1 * h1 - inter;
    CHECK(std::abs(ab - inter / uni) < 0.01);
  }
}

TEST_CASE("f-measure: perfect, partial, duplicate predictions") {
  Polygon2D g1 = quad({{0, 0}, {4, 0}, {4, 2}, {0, 2}});
  Polygon2D g2 = quad({{10, 10}, {14, 10}, {14, 12}, {10, 12}});

  std::vector<ScoredPolygon> perfect = {{g1, 0.9}, {g2, 0.8}};
  FMeasure fm = f_measure(perfect, {g1, g2});
  CHECK(fm.precision == doctest::Approx(1.0));
  CHECK(fm.recall == doctest::Approx(1.0));
  CHECK(fm.f == doctest::Approx(1.0));

  std::vector<ScoredPolygon> one = {{g1, 0.9}};
  FMeasure half = f_measure(one, {g1, g2});
  CHECK(half.precision == doctest::Approx(1.0));
  CHECK(half.recall == doctest::Approx(0.5));
  CHECK(half.f == doctest::Approx(2.0 / 3.0));

  // a duplicate of a matched instance counts as a false positive
  std::vector<ScoredPolygon> dup = {{g1, 0.9}, {g1, 0.8}};
  FMeasure d = f_measure(dup, {g1, g2});
  CHECK(d.true_positives == 1);
  CHECK(d.precision == doctest::Approx(0.5));

  FMeasure vac = f_measure({}, {});
  CHECK(vac.vacuous);
  CHECK(vac.f == 0.0);
}
