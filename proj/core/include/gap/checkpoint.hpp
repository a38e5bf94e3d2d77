// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "gap/model.hpp"

namespace gap {

/// Writes `dir`/model.json (architecture, skeleton, partition, parameter
/// manifest) and `dir`/weights.f32 (little-endian fp32, manifest order).
void save_checkpoint(const EncoderModel<float>& model, const std::filesystem::path& dir);

/// Inverse of save_checkpoint. Throws FormatError when the weight file length
/// or any manifest entry disagrees with the architecture.
EncoderModel<float> load_checkpoint(const std::filesystem::path& dir);

}  // namespace gap
