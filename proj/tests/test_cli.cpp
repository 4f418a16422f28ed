#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ptdet/annotations.hpp"
#include "ptdet/synth.hpp"

namespace fs = std::filesystem;
using namespace ptdet;

static std::string g_cli;

namespace {

int run_cli(const std::string& args) {
  std::string cmd = g_cli + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) out[e.path().filename().string()] = read_file(e.path().string());
  return out;
}

int count_files(const fs::path& dir, const std::string& ext) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

}  // namespace

TEST_CASE("gen-data: counts, determinism, refusal without --force") {
  fs::path root = fs::temp_directory_path() / "ptdet_cli_gen";
  fs::remove_all(root);

  std::string base = " --scenes 10 --seed 5 --points-per-side 2 ";
  CHECK(run_cli("gen-data" + base + "--out " + (root / "a").string()) == 0);
  CHECK(count_files(root / "a", ".pgm") == 10);
  CHECK(fs::exists(root / "a" / "annotations.json"));
  CHECK(fs::exists(root / "a" / "manifest.json"));

  // refuse to clobber without --force
  CHECK(run_cli("gen-data" + base + "--out " + (root / "a").string()) == 2);
  CHECK(run_cli("gen-data" + base + "--force --out " + (root / "a").string()) == 0);

  // same flags + seed give byte-identical outputs
  CHECK(run_cli("gen-data" + base + "--out " + (root / "b").string()) == 0);
  auto ca = dir_contents(root / "a");
  auto cb = dir_contents(root / "b");
  ca.erase("manifest.json");  // records wall-clock duration
  cb.erase("manifest.json");
  CHECK(ca == cb);

  // rot-test-set multiplies scene count by 6 (originals + 5 angles)
  CHECK(run_cli("gen-data" + base + "--rotation rot-test-set --out " +
                (root / "rot").string()) == 0);
  CHECK(count_files(root / "rot", ".pgm") == 60);
  fs::remove_all(root);
}

TEST_CASE("canonicalize: idempotence, inverted labels, empty input") {
  fs::path root = fs::temp_directory_path() / "ptdet_cli_canon";
  fs::remove_all(root);
  fs::create_directories(root);

  // dataset of 180-degree-reading-order rectangles: every start point moves
  Dataset ds;
  SceneRecord s;
  s.id = 0;
  s.width = 64;
  s.height = 64;
  s.file = "scene_00000.pgm";
  s.pixels.assign(64 * 64, 0);
  for (int i = 0; i < 5; ++i) {
    TextAnnotation a;
    double x = 4 + 3 * i, y = 6 + 2 * i;
    a.polygon.points = {{x + 20, y + 8}, {x, y + 8}, {x, y}, {x + 20, y}};  // BR BL TL TR
    a.orientation = Orientation::kInverse;
    a.instance_id = i;
    s.annotations.push_back(a);
  }
  ds.scenes.push_back(s);
  atomic_write_file((root / "inverted.json").string(), annotations_to_json(ds));

  std::string in = (root / "inverted.json").string();
  std::string out1 = (root / "canon.json").string();
  CHECK(run_cli("canonicalize --in " + in + " --out " + out1) == 0);
  Dataset canon;
  parse_annotations_json(read_file(out1), canon);
  for (const TextAnnotation& a : canon.scenes[0].annotations) {
    CHECK(is_clockwise(a.polygon));
    // start point relocated to the top-left corner
    CHECK(a.polygon.points[0].y < a.polygon.points[2].y);
  }

  // canonicalizing an already-canonical file changes nothing
  std::string out2 = (root / "canon2.json").string();
  CHECK(run_cli("canonicalize --in " + out1 + " --out " + out2) == 0);
  CHECK(read_file(out1) == read_file(out2));

  // empty annotation list stays valid
  Dataset empty;
  SceneRecord es;
  es.id = 0;
  es.width = 8;
  es.height = 8;
  es.file = "e.pgm";
  empty.scenes.push_back(es);
  atomic_write_file((root / "empty.json").string(), annotations_to_json(empty));
  CHECK(run_cli("canonicalize --in " + (root / "empty.json").string() + " --out " +
                (root / "empty_out.json").string()) == 0);

  // malformed JSON is a data error
  atomic_write_file((root / "broken.json").string(), "{ not json");
  CHECK(run_cli("canonicalize --in " + (root / "broken.json").string() + " --out " +
                (root / "x.json").string()) == 2);
  fs::remove_all(root);
}

TEST_CASE("gradcheck command: pass run and unknown-op listing") {
  CHECK(run_cli("gradcheck --ops softmax,linear,sigmoid --seeds 2") == 0);
  CHECK(run_cli("gradcheck --ops not_a_real_op") == 1);
}

TEST_CASE("replay reproduces gen-data byte-identically") {
  fs::path root = fs::temp_directory_path() / "ptdet_cli_replay";
  fs::remove_all(root);
  std::string out = (root / "a").string();
  CHECK(run_cli("gen-data --scenes 4 --seed 9 --points-per-side 2 --out " + out) == 0);
  auto before = dir_contents(root / "a");
  before.erase("manifest.json");
  CHECK(run_cli("replay " + out + "/manifest.json") == 0);
  auto after = dir_contents(root / "a");
  after.erase("manifest.json");
  CHECK(before == after);
  fs::remove_all(root);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_tests <path-to-ptdet-binary> [doctest args]\n");
    return 1;
  }
  g_cli = argv[1];
  doctest::Context ctx;
  ctx.applyCommandLine(argc - 1, argv + 1);
  return ctx.run();
}
