#include "ptdet/annotations.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ptdet {

std::string orientation_name(Orientation o) {
  switch (o) {
    case Orientation::kNormal: return "normal";
    case Orientation::kInverse: return "inverse";
    case Orientation::kMirrored: return "mirrored";
  }
  return "normal";
}

Orientation orientation_from_name(const std::string& name) {
  if (name == "normal") return Orientation::kNormal;
  if (name == "inverse") return Orientation::kInverse;
  if (name == "mirrored") return Orientation::kMirrored;
  throw DataError("unknown orientation tag '" + name + "'");
}

void atomic_write_file(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

void write_pgm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& pixels) {
  if (static_cast<int64_t>(pixels.size()) != static_cast<int64_t>(width) * height)
    throw DataError("write_pgm: pixel count does not match dimensions");
  std::ostringstream os;
  os << "P5\n" << width << " " << height << "\n255\n";
  std::string header = os.str();
  std::string content;
  content.reserve(header.size() + pixels.size());
  content += header;
  content.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  atomic_write_file(path, content);
}

std::vector<uint8_t> read_pgm(const std::string& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open PGM file " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw DataError(path + ": not a binary PGM (P5) file");
  int maxval = 0;
  in >> width >> height >> maxval;
  if (!in || width <= 0 || height <= 0 || maxval != 255)
    throw DataError(path + ": malformed PGM header");
  in.get();  // single whitespace after maxval
  std::vector<uint8_t> pixels(static_cast<size_t>(width) * height);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!in) throw DataError(path + ": truncated PGM data");
  return pixels;
}

std::string annotations_to_json(const Dataset& ds) {
  json images = json::array();
  json annots = json::array();
  for (const SceneRecord& s : ds.scenes) {
    images.push_back({{"id", s.id}, {"width", s.width}, {"height", s.height}, {"file", s.file}});
    for (const TextAnnotation& a : s.annotations) {
      json pts = json::array();
      for (const Vec2& p : a.polygon.points) pts.push_back({p.x, p.y});
      annots.push_back({{"image_id", s.id},
                        {"points", pts},
                        {"orientation", orientation_name(a.orientation)}});
    }
  }
  json root = {{"images", images}, {"annotations", annots}};
  return root.dump(2) + "\n";
}

void parse_annotations_json(const std::string& text, Dataset& ds) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("annotation JSON parse error: ") + e.what());
  }
  try {
    std::vector<SceneRecord> scenes;
    std::unordered_map<int, size_t> by_id;
    for (const json& im : root.at("images")) {
      SceneRecord s;
      s.id = im.at("id").get<int>();
      s.width = im.at("width").get<int>();
      s.height = im.at("height").get<int>();
      s.file = im.at("file").get<std::string>();
      by_id[s.id] = scenes.size();
      scenes.push_back(std::move(s));
    }
    int next_instance = 0;
    for (const json& an : root.at("annotations")) {
      int image_id = an.at("image_id").get<int>();
      auto it = by_id.find(image_id);
      if (it == by_id.end())
        throw DataError("annotation references unknown image_id " + std::to_string(image_id));
      TextAnnotation a;
      for (const json& p : an.at("points"))
        a.polygon.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      a.orientation = orientation_from_name(an.at("orientation").get<std::string>());
      a.instance_id = next_instance++;
      scenes[it->second].annotations.push_back(std::move(a));
    }
    ds.scenes = std::move(scenes);
  } catch (const json::exception& e) {
    throw DataError(std::string("annotation JSON field error: ") + e.what());
  }
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  for (const SceneRecord& s : ds.scenes)
    write_pgm((fs::path(dir) / s.file).string(), s.width, s.height, s.pixels);
  atomic_write_file((fs::path(dir) / "annotations.json").string(), annotations_to_json(ds));
}

Dataset load_dataset(const std::string& dir) {
  fs::path ann = fs::path(dir) / "annotations.json";
  std::ifstream in(ann);
  if (!in) throw DataError("cannot open " + ann.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Dataset ds;
  parse_annotations_json(ss.str(), ds);
  for (SceneRecord& s : ds.scenes) {
    int w = 0, h = 0;
    s.pixels = read_pgm((fs::path(dir) / s.file).string(), w, h);
    if (w != s.width || h != s.height)
      throw DataError(s.file + ": PGM dimensions disagree with annotation entry");
  }
  return ds;
}

Orientation infer_orientation(const Polygon2D& label) {
  int n = label.size();
  int half = n / 2;
  double ya = 0.0, yb = 0.0;
  for (int i = 0; i < half; ++i) ya += label.points[i].y;
  for (int i = half; i < n; ++i) yb += label.points[i].y;
  return ya > yb ? Orientation::kInverse : Orientation::kNormal;
}

TextAnnotation rotate_annotation(const TextAnnotation& annotation, double angle_degrees,
                                 int width, int height, bool positional_mode) {
  RotatedFrame f = rotation_frame(width, height, angle_degrees);
  TextAnnotation out = annotation;
  for (Vec2& p : out.polygon.points) p = f.apply(p);
  if (positional_mode)
    out.polygon = canonicalize_positional_label(out.polygon);
  else
    out.orientation = infer_orientation(out.polygon);
  return out;
}

SceneRecord rotate_scene(const SceneRecord& scene, double angle_degrees, uint8_t fill) {
  RotatedFrame f = rotation_frame(scene.width, scene.height, angle_degrees);
  SceneRecord out;
  out.id = scene.id;
  out.width = f.width;
  out.height = f.height;
  out.file = scene.file;
  out.pixels.assign(static_cast<size_t>(f.width) * f.height, fill);
  // inverse map: source = R^T * (dst - c_out) + c_in
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      double dx = (x + 0.5) - f.c_out.x;
      double dy = (y + 0.5) - f.c_out.y;
      double sx = f.m[0][0] * dx + f.m[1][0] * dy + f.c_in.x - 0.5;
      double sy = f.m[0][1] * dx + f.m[1][1] * dy + f.c_in.y - 0.5;
      if (sx < -0.5 || sy < -0.5 || sx > scene.width - 0.5 || sy > scene.height - 0.5) continue;
      int x0 = static_cast<int>(std::floor(sx));
      int y0 = static_cast<int>(std::floor(sy));
      double fx = sx - x0, fy = sy - y0;
      auto px = [&](int yy, int xx) -> double {
        yy = std::min(std::max(yy, 0), scene.height - 1);
        xx = std::min(std::max(xx, 0), scene.width - 1);
        return scene.pixels[static_cast<size_t>(yy) * scene.width + xx];
      };
      double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                 fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
      out.pixels[static_cast<size_t>(y) * f.width + x] =
          static_cast<uint8_t>(std::min(std::max(v + 0.5, 0.0), 255.0));
    }
  for (const TextAnnotation& a : scene.annotations)
    out.annotations.push_back(rotate_annotation(a, angle_degrees, scene.width, scene.height));
  return out;
}

}  // namespace ptdet
