#pragma once

#include <map>
#include <string>
#include <vector>

namespace ptdet {

inline constexpr const char* kToolVersion = "0.1.0";

/// Written atomically next to every command's outputs. Replaying a manifest
/// re-runs the command with the recorded resolved flags and must reproduce
/// the outputs byte-identically (wall-clock duration is informational only).
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // resolved flag -> value
  uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double duration_seconds = 0.0;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);

  void write(const std::string& path) const;
  static RunManifest read(const std::string& path);
};

}  // namespace ptdet
