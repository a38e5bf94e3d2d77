// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gap::io {

/// Raw little-endian arrays; the byte order is fixed regardless of host.
void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path);
void write_u32(const std::filesystem::path& path, std::span<const std::uint32_t> values);
std::vector<std::uint32_t> read_u32(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Creates `dir` (and parents); throws IoError on failure.
void ensure_directory(const std::filesystem::path& dir);

}  // namespace gap::io
