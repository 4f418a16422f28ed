#include "ptdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ptdet {

double norm(const Vec2& v) { return std::sqrt(v.x * v.x + v.y * v.y); }

void Polygon2D::validate() const {
  int n = size();
  if (n < 4 || n % 2 != 0)
    throw DegenerateGeometryError("polygon: needs an even point count >= 4, got " +
                                  std::to_string(n));
  for (const Vec2& p : points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw DegenerateGeometryError("polygon: non-finite coordinate");
}

double signed_area(const Polygon2D& poly) {
  int n = poly.size();
  if (n < 3) throw DegenerateGeometryError("signed_area: needs at least 3 points");
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec2& p = poly.points[i];
    const Vec2& q = poly.points[(i + 1) % n];
    s += p.x * q.y - q.x * p.y;
  }
  return s / 2.0;
}

bool is_clockwise(const Polygon2D& poly) {
  double a = signed_area(poly);
  if (std::abs(a) < 1e-9)
    throw DegenerateGeometryError("is_clockwise: degenerate polygon (|area| < 1e-9)");
  return a > 0.0;
}

// --- Bezier ------------------------------------------------------------

std::vector<Vec2> bezier_sample(const BezierSide& side, int m) {
  if (m < 2) throw std::invalid_argument("bezier_sample: need at least 2 samples");
  std::vector<Vec2> out;
  out.reserve(m);
  for (int i = 0; i < m; ++i) {
    double t = static_cast<double>(i) / (m - 1);
    double u = 1.0 - t;
    double b0 = u * u * u;
    double b1 = 3.0 * u * u * t;
    double b2 = 3.0 * u * t * t;
    double b3 = t * t * t;
    out.push_back(side[0] * b0 + side[1] * b1 + side[2] * b2 + side[3] * b3);
  }
  return out;
}

namespace {

Vec2 bezier_eval(const BezierSide& s, double t) {
  double u = 1.0 - t;
  return s[0] * (u * u * u) + s[1] * (3.0 * u * u * t) + s[2] * (3.0 * u * t * t) +
         s[3] * (t * t * t);
}

Vec2 bezier_deriv(const BezierSide& s, double t) {
  double u = 1.0 - t;
  return (s[1] - s[0]) * (3.0 * u * u) + (s[2] - s[1]) * (6.0 * u * t) +
         (s[3] - s[2]) * (3.0 * t * t);
}

Vec2 bezier_deriv2(const BezierSide& s, double t) {
  return (s[2] - s[1] * 2.0 + s[0]) * (6.0 * (1.0 - t)) + (s[3] - s[2] * 2.0 + s[1]) * (6.0 * t);
}

/// Pinned-endpoint least squares for the two interior control points at the
/// given parameters.
BezierSide solve_interior(const std::vector<Vec2>& pts, const std::vector<double>& t) {
  const Vec2 p0 = pts.front();
  const Vec2 p3 = pts.back();
  double a11 = 0.0, a12 = 0.0, a22 = 0.0;
  Vec2 r1{0, 0}, r2{0, 0};
  for (size_t j = 0; j < pts.size(); ++j) {
    double u = 1.0 - t[j];
    double b0 = u * u * u;
    double b1 = 3.0 * u * u * t[j];
    double b2 = 3.0 * u * t[j] * t[j];
    double b3 = t[j] * t[j] * t[j];
    Vec2 r = pts[j] - p0 * b0 - p3 * b3;
    a11 += b1 * b1;
    a12 += b1 * b2;
    a22 += b2 * b2;
    r1 = r1 + r * b1;
    r2 = r2 + r * b2;
  }
  double det = a11 * a22 - a12 * a12;
  if (std::abs(det) < 1e-12)
    throw DegenerateGeometryError("bezier_fit: rank-deficient normal equations");
  double inv = 1.0 / det;
  Vec2 p1{(a22 * r1.x - a12 * r2.x) * inv, (a22 * r1.y - a12 * r2.y) * inv};
  Vec2 p2{(a11 * r2.x - a12 * r1.x) * inv, (a11 * r2.y - a12 * r1.y) * inv};
  return {p0, p1, p2, p3};
}

}  // namespace

BezierSide bezier_fit(const std::vector<Vec2>& pts) {
  int k = static_cast<int>(pts.size());
  if (k < 4) throw std::invalid_argument("bezier_fit: need at least 4 points");
  // parameters start from cumulative chord length, then Newton projection
  // refines them against the current fit
  std::vector<double> t(k, 0.0);
  for (int i = 1; i < k; ++i) t[i] = t[i - 1] + norm(pts[i] - pts[i - 1]);
  double total = t.back();
  if (total < 1e-12) throw DegenerateGeometryError("bezier_fit: all points coincident");
  for (double& v : t) v /= total;

  BezierSide side = solve_interior(pts, t);
  for (int iter = 0; iter < 600; ++iter) {
    double max_step = 0.0;
    for (int j = 1; j + 1 < k; ++j) {
      for (int newton = 0; newton < 3; ++newton) {
        Vec2 e = bezier_eval(side, t[j]) - pts[j];
        Vec2 d1 = bezier_deriv(side, t[j]);
        Vec2 d2 = bezier_deriv2(side, t[j]);
        double num = e.x * d1.x + e.y * d1.y;
        double den = d1.x * d1.x + d1.y * d1.y + e.x * d2.x + e.y * d2.y;
        if (std::abs(den) < 1e-12) break;
        double next = std::min(std::max(t[j] - num / den, 0.0), 1.0);
        max_step = std::max(max_step, std::abs(next - t[j]));
        t[j] = next;
      }
    }
    side = solve_interior(pts, t);
    if (max_step < 1e-14) break;
  }
  return side;
}

// --- Positional label form ----------------------------------------------

namespace {

/// Direction reversal anchored at points[0]: r[i] = p[(N - i) mod N]. The
/// halves of the result become the new side split (re-pairing).
Polygon2D reverse_anchored(const Polygon2D& poly) {
  int n = poly.size();
  Polygon2D out;
  out.points.resize(n);
  for (int i = 0; i < n; ++i) out.points[i] = poly.points[(n - i) % n];
  return out;
}

Vec2 half_centroid(const Polygon2D& poly, int begin, int count) {
  Vec2 c{0, 0};
  for (int i = 0; i < count; ++i) c = c + poly.points[begin + i];
  return c * (1.0 / count);
}

double half_min_y(const Polygon2D& poly, int begin, int count) {
  double m = poly.points[begin].y;
  for (int i = 1; i < count; ++i) m = std::min(m, poly.points[begin + i].y);
  return m;
}

}  // namespace

Polygon2D make_clockwise(const Polygon2D& poly) {
  poly.validate();
  if (is_clockwise(poly)) return poly;
  return reverse_anchored(poly);
}

Polygon2D canonicalize_positional_label(const Polygon2D& poly) {
  poly.validate();
  Polygon2D work = make_clockwise(poly);
  int n = work.size();
  int half = n / 2;

  Vec2 ca = half_centroid(work, 0, half);
  Vec2 cb = half_centroid(work, half, half);
  bool start_on_second;
  if (std::abs(ca.y - cb.y) >= std::abs(ca.x - cb.x)) {
    // top/bottom arrangement: start on the upper side
    start_on_second = cb.y < ca.y;
  } else {
    // left/right arrangement: smaller minimum y wins; ties keep the side
    // that currently holds points[0]
    double ma = half_min_y(work, 0, half);
    double mb = half_min_y(work, half, half);
    start_on_second = (std::abs(ma - mb) >= 1e-6) && (mb < ma);
  }
  if (start_on_second)
    std::rotate(work.points.begin(), work.points.begin() + half, work.points.end());
  return work;
}

// --- Rotation -------------------------------------------------------------

Vec2 RotatedFrame::apply(const Vec2& p) const {
  double dx = p.x - c_in.x, dy = p.y - c_in.y;
  return {m[0][0] * dx + m[0][1] * dy + c_out.x, m[1][0] * dx + m[1][1] * dy + c_out.y};
}

RotatedFrame rotation_frame(int width, int height, double angle_degrees) {
  double c, s;
  double a = std::fmod(angle_degrees, 360.0);
  if (a < 0) a += 360.0;
  // exact values on quarter turns keep rasters and labels clean
  if (a == 0.0) {
    c = 1.0; s = 0.0;
  } else if (a == 90.0) {
    c = 0.0; s = 1.0;
  } else if (a == 180.0) {
    c = -1.0; s = 0.0;
  } else if (a == 270.0) {
    c = 0.0; s = -1.0;
  } else {
    double rad = a * 3.14159265358979323846 / 180.0;
    c = std::cos(rad);
    s = std::sin(rad);
  }
  RotatedFrame f;
  f.m[0][0] = c;
  f.m[0][1] = -s;
  f.m[1][0] = s;
  f.m[1][1] = c;
  f.width = static_cast<int>(std::ceil(std::abs(width * c) + std::abs(height * s) - 1e-9));
  f.height = static_cast<int>(std::ceil(std::abs(width * s) + std::abs(height * c) - 1e-9));
  f.c_in = {width / 2.0, height / 2.0};
  f.c_out = {f.width / 2.0, f.height / 2.0};
  return f;
}

// --- Evaluation ------------------------------------------------------------

namespace {

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

Box bounding_box(const Polygon2D& p) {
  Box b{p.points[0].x, p.points[0].y, p.points[0].x, p.points[0].y};
  for (const Vec2& v : p.points) {
    b.x0 = std::min(b.x0, v.x);
    b.y0 = std::min(b.y0, v.y);
    b.x1 = std::max(b.x1, v.x);
    b.y1 = std::max(b.y1, v.y);
  }
  return b;
}

/// Even-odd scanline fill of `poly` over a grid of `nx` x `ny` pixel centers
/// spanning [x0,x1] x [y0,y1]; sets bits in `mask`.
void rasterize(const Polygon2D& poly, const Box& span, int nx, int ny,
               std::vector<uint8_t>& mask) {
  int n = poly.size();
  double sx = (span.x1 - span.x0) / nx;
  double sy = (span.y1 - span.y0) / ny;
  std::vector<double> xs;
  for (int row = 0; row < ny; ++row) {
    double y = span.y0 + (row + 0.5) * sy;
    xs.clear();
    for (int i = 0; i < n; ++i) {
      const Vec2& p = poly.points[i];
      const Vec2& q = poly.points[(i + 1) % n];
      if ((p.y <= y && q.y > y) || (q.y <= y && p.y > y))
        xs.push_back(p.x + (y - p.y) / (q.y - p.y) * (q.x - p.x));
    }
    std::sort(xs.begin(), xs.end());
    for (size_t k = 0; k + 1 < xs.size(); k += 2) {
      int c0 = static_cast<int>(std::ceil((xs[k] - span.x0) / sx - 0.5));
      int c1 = static_cast<int>(std::floor((xs[k + 1] - span.x0) / sx - 0.5));
      c0 = std::max(c0, 0);
      c1 = std::min(c1, nx - 1);
      for (int col = c0; col <= c1; ++col) mask[static_cast<size_t>(row) * nx + col] = 1;
    }
  }
}

}  // namespace

IouResult polygon_iou(const Polygon2D& a, const Polygon2D& b, int raster) {
  a.validate();
  b.validate();
  Box ba = bounding_box(a), bb = bounding_box(b);
  Box u{std::min(ba.x0, bb.x0), std::min(ba.y0, bb.y0), std::max(ba.x1, bb.x1),
        std::max(ba.y1, bb.y1)};
  double w = u.x1 - u.x0, h = u.y1 - u.y0;
  if (w <= 0.0 || h <= 0.0) return {0.0, true};
  // disjoint bounding boxes cannot intersect
  if (!(ba.x0 < bb.x1 && bb.x0 < ba.x1 && ba.y0 < bb.y1 && bb.y0 < ba.y1)) return {0.0, false};

  int nx, ny;
  if (w >= h) {
    nx = raster;
    ny = std::max(1, static_cast<int>(std::lround(raster * h / w)));
  } else {
    ny = raster;
    nx = std::max(1, static_cast<int>(std::lround(raster * w / h)));
  }
  std::vector<uint8_t> ma(static_cast<size_t>(nx) * ny, 0), mb(static_cast<size_t>(nx) * ny, 0);
  rasterize(a, u, nx, ny, ma);
  rasterize(b, u, nx, ny, mb);
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < ma.size(); ++i) {
    if (ma[i] & mb[i]) ++inter;
    if (ma[i] | mb[i]) ++uni;
  }
  if (uni == 0) return {0.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

FMeasure f_measure_from_counts(int tp, int n_pred, int n_gt) {
  FMeasure r;
  r.true_positives = tp;
  r.n_predictions = n_pred;
  r.n_ground_truth = n_gt;
  if (n_pred == 0 && n_gt == 0) {
    r.vacuous = true;
    return r;
  }
  r.precision = n_pred > 0 ? static_cast<double>(tp) / n_pred : 0.0;
  r.recall = n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0;
  r.f = (r.precision + r.recall) > 0.0
            ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
            : 0.0;
  return r;
}

FMeasure f_measure(const std::vector<ScoredPolygon>& predictions,
                   const std::vector<Polygon2D>& ground_truth, double iou_threshold,
                   int raster) {
  int np = static_cast<int>(predictions.size());
  int ng = static_cast<int>(ground_truth.size());
  std::vector<int> order(np);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    return predictions[i].score > predictions[j].score;
  });
  std::vector<char> gt_used(ng, 0);
  int tp = 0;
  for (int oi : order) {
    double best = 0.0;
    int best_j = -1;
    for (int j = 0; j < ng; ++j) {
      if (gt_used[j]) continue;
      double iou = polygon_iou(predictions[oi].polygon, ground_truth[j], raster).iou;
      if (iou > best) {
        best = iou;
        best_j = j;
      }
    }
    if (best_j >= 0 && best >= iou_threshold) {
      gt_used[best_j] = 1;
      ++tp;
    }
  }
  return f_measure_from_counts(tp, np, ng);
}

}  // namespace ptdet
