// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gap/skeleton.hpp"
#include "gap/tensor.hpp"

namespace gap {

/// Labelled skeleton sequences, data [S, 3, T, N] in fp32.
struct SkeletonBatch {
  Tensor<float> data;
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::string skeleton;   // shipped skeleton name, if any
  std::string modality = "joint";
  std::string generator;  // generator spec as JSON text, informational

  std::size_t size() const { return labels.size(); }
  std::size_t frames() const { return data.dim(2); }
  std::size_t joints() const { return data.dim(3); }

  /// Throws ConfigError/ShapeError when labels, shape or values are invalid.
  void validate() const;

  /// Samples `indices` as a [B, 3, T, N] tensor of type T.
  template <typename T>
  Tensor<T> gather(std::span<const std::size_t> indices) const;
  std::vector<std::uint32_t> gather_labels(std::span<const std::size_t> indices) const;
};

enum class Modality { Joint, Bone, JointMotion, BoneMotion };

Modality parse_modality(std::string_view name);
std::string_view to_string(Modality modality);

/// bone_j = x_j - x_parent(j); the root bone is zero. Requires a valid parent map.
template <typename T>
Tensor<T> to_bone(const Tensor<T>& x, const SkeletonGraph& graph);

/// m_t = x_{t+1} - x_t, last frame zero. Requires T >= 2.
template <typename T>
Tensor<T> to_motion(const Tensor<T>& x);

/// Linear interpolation along time mapping [0, T-1] onto [0, T_target-1].
template <typename T>
Tensor<T> resize_temporal(const Tensor<T>& x, std::size_t target_frames);

SkeletonBatch to_bone(const SkeletonBatch& batch, const SkeletonGraph& graph);
SkeletonBatch to_motion(const SkeletonBatch& batch);
SkeletonBatch resize_temporal(const SkeletonBatch& batch, std::size_t target_frames);
SkeletonBatch derive_modality(const SkeletonBatch& joints, const SkeletonGraph& graph, Modality modality);

/// `dir`/meta.json + data.f32 (row-major, little-endian) + labels.u32.
void save_dataset(const SkeletonBatch& batch, const std::filesystem::path& dir);
/// Validates byte lengths against meta.json; throws FormatError with the
/// offending offsets on mismatch.
SkeletonBatch load_dataset(const std::filesystem::path& dir);

}  // namespace gap
