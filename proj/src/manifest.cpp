#include "ptdet/manifest.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "ptdet/annotations.hpp"

using nlohmann::json;

namespace ptdet {

std::string RunManifest::to_json() const {
  json j = {{"command", command},
            {"config", config},
            {"seed", seed},
            {"tool_version", tool_version},
            {"inputs", inputs},
            {"outputs", outputs},
            {"duration_seconds", duration_seconds}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("manifest parse error: ") + e.what());
  }
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config").get<std::map<std::string, std::string>>();
  m.seed = j.at("seed").get<uint64_t>();
  m.tool_version = j.value("tool_version", std::string(kToolVersion));
  m.inputs = j.value("inputs", std::vector<std::string>{});
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.duration_seconds = j.value("duration_seconds", 0.0);
  return m;
}

void RunManifest::write(const std::string& path) const { atomic_write_file(path, to_json()); }

RunManifest RunManifest::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace ptdet
