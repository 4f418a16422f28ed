#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ptdet {

struct Vec2 {
  double x = 0.0, y = 0.0;
  Vec2() = default;
  Vec2(double x, double y) : x(x), y(y) {}
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }
};

double norm(const Vec2& v);

struct DegenerateGeometryError : std::runtime_error {
  explicit DegenerateGeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Ordered control points of one text instance, image coordinates with the
/// origin at the top-left and y growing downward. points[0 .. N/2-1] form one
/// long side, points[N/2 .. N-1] the other, traversed in opposite directions.
struct Polygon2D {
  std::vector<Vec2> points;

  int size() const { return static_cast<int>(points.size()); }
  void validate() const;  // even N >= 4, finite coordinates
};

/// Shoelace area; positive means clockwise under the y-down convention.
double signed_area(const Polygon2D& poly);
bool is_clockwise(const Polygon2D& poly);  // throws DegenerateGeometryError near zero area

// --- Bezier ------------------------------------------------------------

using BezierSide = std::array<Vec2, 4>;

struct BezierSidePair {
  BezierSide top;
  BezierSide bottom;
};

/// Cubic Bernstein evaluation at m uniform parameters on [0, 1] inclusive.
std::vector<Vec2> bezier_sample(const BezierSide& side, int m);

/// Least-squares cubic fit with pinned endpoints; parameters by cumulative
/// chord length. Needs k >= 4 ordered points.
BezierSide bezier_fit(const std::vector<Vec2>& side_points);

// --- Positional label form ----------------------------------------------

/// Canonical control-point order: clockwise, start side chosen spatially
/// (top/bottom by side-centroid y, left/right by smaller minimum y with a
/// deterministic tie rule). Idempotent.
Polygon2D canonicalize_positional_label(const Polygon2D& poly);

/// Clockwise-only normalization (orientation fixed, start left alone).
Polygon2D make_clockwise(const Polygon2D& poly);

// --- Rotation -------------------------------------------------------------

struct RotatedFrame {
  int width = 0, height = 0;       // expanded canvas
  double m[2][2] = {{1, 0}, {0, 1}};  // point map: new = m * (p - c_in) + c_out
  Vec2 c_in, c_out;
  Vec2 apply(const Vec2& p) const;
};

/// Rotation about the image center with the canvas expanded to contain the
/// rotated raster.
RotatedFrame rotation_frame(int width, int height, double angle_degrees);

// --- Evaluation ------------------------------------------------------------

struct IouResult {
  double iou = 0.0;
  bool degenerate = false;
};

/// IoU by deterministic scanline rasterization over the union bounding box
/// (even-odd fill). `raster` is the pixel count along the longer edge.
IouResult polygon_iou(const Polygon2D& a, const Polygon2D& b, int raster = 512);

struct ScoredPolygon {
  Polygon2D polygon;
  double score = 0.0;
};

struct FMeasure {
  double precision = 0.0, recall = 0.0, f = 0.0;
  int true_positives = 0, n_predictions = 0, n_ground_truth = 0;
  bool vacuous = false;  // no predictions and no ground truth
};

/// Greedy one-to-one matching in descending confidence; a prediction takes
/// the unmatched ground truth of highest IoU >= threshold.
FMeasure f_measure(const std::vector<ScoredPolygon>& predictions,
                   const std::vector<Polygon2D>& ground_truth, double iou_threshold = 0.5,
                   int raster = 512);

FMeasure f_measure_from_counts(int tp, int n_pred, int n_gt);

}  // namespace ptdet
