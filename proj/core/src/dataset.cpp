// SPDX-License-Identifier: Apache-2.0
#include "gap/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "gap/errors.hpp"
#include "gap/io.hpp"
#include "json.hpp"

namespace gap {

using nlohmann::json;

void SkeletonBatch::validate() const {
  if (data.rank() != 4 || data.dim(1) != 3) throw ShapeError("skeleton data must be [S, 3, T, N], got " + shape_to_string(data.shape()));
  if (data.dim(0) != labels.size()) throw ShapeError("skeleton data and labels disagree on sample count");
  if (data.dim(2) < 2) throw ShapeError("skeleton sequences need at least 2 frames");
  if (num_classes == 0) throw ConfigError("dataset declares zero classes");
  for (auto l : labels) {
    if (l >= num_classes) throw ConfigError("label " + std::to_string(l) + " out of range");
  }
  if (!data.all_finite()) throw ConfigError("skeleton data contains non-finite values");
}

template <typename T>
Tensor<T> SkeletonBatch::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = data.dim(1) * data.dim(2) * data.dim(3);
  Tensor<T> out({indices.size(), data.dim(1), data.dim(2), data.dim(3)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const float* src = data.data() + indices[i] * per;
    T* dst = out.data() + i * per;
    for (std::size_t k = 0; k < per; ++k) dst[k] = static_cast<T>(src[k]);
  }
  return out;
}

template Tensor<float> SkeletonBatch::gather(std::span<const std::size_t>) const;
template Tensor<double> SkeletonBatch::gather(std::span<const std::size_t>) const;

std::vector<std::uint32_t> SkeletonBatch::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<std::uint32_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Modality parse_modality(std::string_view name) {
  if (name == "joint") return Modality::Joint;
  if (name == "bone") return Modality::Bone;
  if (name == "joint_motion") return Modality::JointMotion;
  if (name == "bone_motion") return Modality::BoneMotion;
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected joint, bone, joint_motion, bone_motion)");
}

std::string_view to_string(Modality modality) {
  switch (modality) {
    case Modality::Joint: return "joint";
    case Modality::Bone: return "bone";
    case Modality::JointMotion: return "joint_motion";
    case Modality::BoneMotion: return "bone_motion";
  }
  return "unknown";
}

template <typename T>
Tensor<T> to_bone(const Tensor<T>& x, const SkeletonGraph& graph) {
  const auto report = validate_parent_map(graph);
  if (!report.valid) throw ConfigError("bone modality needs a valid parent map: " + report.problems.front());
  if (x.rank() != 4 || x.dim(3) != graph.num_joints()) throw ShapeError("to_bone: joint count differs from skeleton");
  const std::size_t n = x.dim(3);
  const std::size_t frames_total = x.dim(0) * x.dim(1) * x.dim(2);
  Tensor<T> out(x.shape());
  const auto& parent = graph.parent();
  for (std::size_t f = 0; f < frames_total; ++f) {
    const T* src = x.data() + f * n;
    T* dst = out.data() + f * n;
    for (std::size_t j = 0; j < n; ++j) {
      const auto p = static_cast<std::size_t>(parent[j]);
      dst[j] = p == j ? T(0) : src[j] - src[p];
    }
  }
  return out;
}

template <typename T>
Tensor<T> to_motion(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("to_motion expects [S, C, T, N]");
  const std::size_t frames = x.dim(2), n = x.dim(3);
  if (frames < 2) throw ShapeError("motion modality needs at least 2 frames");
  Tensor<T> out(x.shape());
  for (std::size_t sc = 0; sc < x.dim(0) * x.dim(1); ++sc) {
    const T* src = x.data() + sc * frames * n;
    T* dst = out.data() + sc * frames * n;
    for (std::size_t t = 0; t + 1 < frames; ++t)
      for (std::size_t j = 0; j < n; ++j) dst[t * n + j] = src[(t + 1) * n + j] - src[t * n + j];
  }
  return out;
}

template <typename T>
Tensor<T> resize_temporal(const Tensor<T>& x, std::size_t target_frames) {
  if (x.rank() != 4) throw ShapeError("resize_temporal expects [S, C, T, N]");
  const std::size_t frames = x.dim(2), n = x.dim(3);
  if (frames < 2 || target_frames < 2) throw ShapeError("resize_temporal needs at least 2 frames on both sides");
  if (frames == target_frames) return x;
  Tensor<T> out({x.dim(0), x.dim(1), target_frames, n});
  const double scale = static_cast<double>(frames - 1) / static_cast<double>(target_frames - 1);
  for (std::size_t sc = 0; sc < x.dim(0) * x.dim(1); ++sc) {
    const T* src = x.data() + sc * frames * n;
    T* dst = out.data() + sc * target_frames * n;
    for (std::size_t t = 0; t < target_frames; ++t) {
      const double pos = static_cast<double>(t) * scale;
      const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), frames - 1);
      const std::size_t hi = std::min(lo + 1, frames - 1);
      const double w = pos - static_cast<double>(lo);
      for (std::size_t j = 0; j < n; ++j) {
        dst[t * n + j] = static_cast<T>((1.0 - w) * src[lo * n + j] + w * src[hi * n + j]);
      }
    }
  }
  return out;
}

template Tensor<float> to_bone(const Tensor<float>&, const SkeletonGraph&);
template Tensor<double> to_bone(const Tensor<double>&, const SkeletonGraph&);
template Tensor<float> to_motion(const Tensor<float>&);
template Tensor<double> to_motion(const Tensor<double>&);
template Tensor<float> resize_temporal(const Tensor<float>&, std::size_t);
template Tensor<double> resize_temporal(const Tensor<double>&, std::size_t);

SkeletonBatch to_bone(const SkeletonBatch& batch, const SkeletonGraph& graph) {
  SkeletonBatch out = batch;
  out.data = to_bone(batch.data, graph);
  out.modality = batch.modality == "joint_motion" ? "bone_motion" : "bone";
  return out;
}

SkeletonBatch to_motion(const SkeletonBatch& batch) {
  SkeletonBatch out = batch;
  out.data = to_motion(batch.data);
  out.modality = batch.modality == "bone" ? "bone_motion" : "joint_motion";
  return out;
}

SkeletonBatch resize_temporal(const SkeletonBatch& batch, std::size_t target_frames) {
  SkeletonBatch out = batch;
  out.data = resize_temporal(batch.data, target_frames);
  return out;
}

SkeletonBatch derive_modality(const SkeletonBatch& joints, const SkeletonGraph& graph, Modality modality) {
  if (joints.modality != "joint") throw ConfigError("modalities are derived from joint data, got '" + joints.modality + "'");
  switch (modality) {
    case Modality::Joint: return joints;
    case Modality::Bone: return to_bone(joints, graph);
    case Modality::JointMotion: return to_motion(joints);
    case Modality::BoneMotion: return to_motion(to_bone(joints, graph));
  }
  return joints;
}

void save_dataset(const SkeletonBatch& batch, const std::filesystem::path& dir) {
  batch.validate();
  io::ensure_directory(dir);
  json meta;
  meta["shape"] = batch.data.shape();
  meta["num_classes"] = batch.num_classes;
  meta["class_names"] = batch.class_names;
  meta["skeleton"] = batch.skeleton;
  meta["modality"] = batch.modality;
  meta["dtype"] = "float32-le";
  meta["generator"] = batch.generator.empty() ? json(nullptr) : json::parse(batch.generator);
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");
  io::write_f32(dir / "data.f32", batch.data.values());
  io::write_u32(dir / "labels.u32", batch.labels);
}

SkeletonBatch load_dataset(const std::filesystem::path& dir) {
  json meta;
  try {
    meta = json::parse(io::read_text(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw FormatError("malformed " + (dir / "meta.json").string() + ": " + e.what());
  }
  SkeletonBatch batch;
  Shape shape;
  try {
    shape = meta.at("shape").get<Shape>();
    batch.num_classes = meta.at("num_classes");
    batch.class_names = meta.value("class_names", std::vector<std::string>{});
    batch.skeleton = meta.value("skeleton", std::string());
    batch.modality = meta.value("modality", std::string("joint"));
    if (meta.contains("generator") && !meta.at("generator").is_null()) batch.generator = meta.at("generator").dump();
  } catch (const json::exception& e) {
    throw FormatError("malformed " + (dir / "meta.json").string() + ": " + e.what());
  }
  if (shape.size() != 4 || shape[1] != 3) {
    throw FormatError("meta.json shape " + shape_to_string(shape) + " is not [S, 3, T, N]");
  }
  std::vector<float> values = io::read_f32(dir / "data.f32");
  const std::size_t expected = shape_numel(shape);
  if (values.size() != expected) {
    throw FormatError("data.f32 holds " + std::to_string(values.size() * 4) + " bytes but meta shape " +
                      shape_to_string(shape) + " needs " + std::to_string(expected * 4) + " (mismatch from byte offset " +
                      std::to_string(std::min(values.size(), expected) * 4) + ")");
  }
  batch.labels = io::read_u32(dir / "labels.u32");
  if (batch.labels.size() != shape[0]) {
    throw FormatError("labels.u32 holds " + std::to_string(batch.labels.size() * 4) + " bytes but " +
                      std::to_string(shape[0]) + " samples need " + std::to_string(shape[0] * 4));
  }
  batch.data = Tensor<float>(shape, std::move(values));
  try {
    batch.validate();
  } catch (const Error& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  return batch;
}

}  // namespace gap
