#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptdet/geometry.hpp"

namespace ptdet {

enum class Orientation { kNormal, kInverse, kMirrored };

std::string orientation_name(Orientation o);
Orientation orientation_from_name(const std::string& name);

/// Metadata tag for test stratification; not consumed by the model.
struct TextAnnotation {
  Polygon2D polygon;  // image-pixel coordinates
  Orientation orientation = Orientation::kNormal;
  int instance_id = 0;
};

struct SceneRecord {
  int id = 0;
  int width = 0, height = 0;
  std::string file;                   // PGM file name, relative to dataset dir
  std::vector<uint8_t> pixels;        // 8-bit grayscale, row-major
  std::vector<TextAnnotation> annotations;
};

struct Dataset {
  std::vector<SceneRecord> scenes;
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Binary PGM (P5), 8-bit grayscale.
void write_pgm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& pixels);
std::vector<uint8_t> read_pgm(const std::string& path, int& width, int& height);

/// One annotations.json per split:
/// {"images": [{"id","width","height","file"}],
///  "annotations": [{"image_id","points":[[x,y],...],"orientation":...}]}
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

std::string annotations_to_json(const Dataset& ds);
void parse_annotations_json(const std::string& text, Dataset& ds);

/// Writes content to a temp file in the same directory, then renames.
void atomic_write_file(const std::string& path, const std::string& content);

/// Tag from the reading-order label: inverse when the label's first side sits
/// spatially below the second.
Orientation infer_orientation(const Polygon2D& reading_order_label);

/// Rotate one annotation about the image center; the canvas expands to
/// contain the rotated raster. With `positional_mode` the result is
/// re-canonicalized, otherwise left in reading order.
TextAnnotation rotate_annotation(const TextAnnotation& annotation, double angle_degrees,
                                 int width, int height, bool positional_mode = false);

/// Rotate a whole scene (raster + labels); raster resampled bilinearly,
/// exterior filled with `fill`.
SceneRecord rotate_scene(const SceneRecord& scene, double angle_degrees, uint8_t fill = 14);

}  // namespace ptdet
