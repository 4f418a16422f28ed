#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptdet/annotations.hpp"

namespace ptdet {

struct SceneParams {
  int width = 64, height = 64;
  int min_instances = 1, max_instances = 3;
  double halfwidth_min = 3.5, halfwidth_max = 6.0;   // ribbon half-width, pixels
  double curvature_min = 0.0, curvature_max = 0.35;  // bend as fraction of chord length
  double inverse_prob = 0.03;
  int points_per_side = 4;  // label = 2 * points_per_side control points
  double margin = 3.0;
};

/// One ribbon instance swept along a quadratic spine, bright on dark, with an
/// intensity gradient from the reading-order start side to the end side so
/// orientation is visually inferable. The label is in reading order: start
/// side of the top edge first. Deterministic per seed; parameters that keep
/// producing out-of-bounds ribbons fail after 100 resamples.
SceneRecord generate_synthetic_scene(uint64_t seed, const SceneParams& params);

struct RotationAngles {
  static const std::vector<double>& train_set();     // +-45, +-30, +-15
  static const std::vector<double>& rot_test_set();  // 45, 135, 180, 225, 315
};

enum class RotationMode { kNone, kTrainSet, kRotTestSet };
RotationMode rotation_mode_from_name(const std::string& s);
std::string rotation_mode_name(RotationMode m);

/// train-set keeps the originals and adds the six small angles plus a
/// 180-degree copy of every all-normal scene; rot-test-set adds the five
/// large angles to every scene. Scene ids and file names are reassigned.
Dataset expand_rotation(const Dataset& ds, RotationMode rotation);

/// Generates `n_scenes` base scenes (scene i uses Rng::mix(seed, i)), then
/// expands per the rotation mode.
Dataset generate_dataset(uint64_t seed, int n_scenes, const SceneParams& params,
                         RotationMode rotation = RotationMode::kNone);

}  // namespace ptdet
