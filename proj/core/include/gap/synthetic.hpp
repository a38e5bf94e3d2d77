// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gap/dataset.hpp"
#include "gap/textbank.hpp"

namespace gap {

/// One action class: the listed four-part body regions (head, hands, hip,
/// legs) oscillate sinusoidally; everything else holds the rest pose.
struct ClassRecipe {
  std::string name;
  std::vector<std::string> active_parts;
  double frequency = 1.0;  // cycles per sequence
  double amplitude = 0.5;
  std::optional<std::array<double, 3>> axis;  // default depends on the part
};

struct SyntheticSpec {
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t frames = 32;
  std::string skeleton = "toy10";
  double noise_sigma = 0.1;
  /// Per-sample multiplicative jitter: amplitude * (1 + U(-j, j)).
  double amplitude_jitter = 0.0;
  /// Per-sample frequency jitter: frequency * (1 + U(-j, j)).
  double frequency_jitter = 0.0;
  /// Per-sample rotation about the vertical axis by U(-v, v) radians.
  double view_jitter = 0.0;
  /// Per-sample global translation, N(0, p^2) per axis.
  double position_jitter = 0.0;
  std::uint64_t seed = 0;
  std::vector<ClassRecipe> classes;

  std::size_t num_classes() const { return classes.size(); }

  /// Six classes on the toy10 skeleton; the default desk-scale benchmark.
  static SyntheticSpec default_spec();

  /// Throws ConfigError naming the offending field.
  void validate() const;

  static SyntheticSpec from_json(const std::string& text);
  std::string to_json() const;
};

struct SyntheticDataset {
  SkeletonBatch train;
  SkeletonBatch test;
  DescriptionCorpus corpus;
};

/// Rest pose + per-class sinusoidal displacement of active joints (random
/// phase per sample), then the optional view rotation and translation, then
/// Gaussian noise everywhere. Sample i draws from its own
/// generator seeded by (seed, i), so output is deterministic in the spec.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Part descriptions, synonyms and paragraph for one recipe, covering every
/// part name used by the skeleton's partition tables.
ClassDescription describe_class(const ClassRecipe& recipe, int class_id, const SkeletonGraph& graph);

}  // namespace gap
