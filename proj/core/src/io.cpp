// SPDX-License-Identifier: Apache-2.0
#include "gap/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "gap/errors.hpp"

namespace gap::io {
namespace {

template <typename Word>
void write_words(const std::filesystem::path& path, std::span<const Word> values) {
  static_assert(sizeof(Word) == 4);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &values[i], 4);
    for (int k = 0; k < 4; ++k) bytes[i * 4 + k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xffu);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

template <typename Word>
std::vector<Word> read_words(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) {
    throw FormatError(path.string() + ": byte length " + std::to_string(bytes.size()) +
                      " is not a multiple of 4 (trailing bytes at offset " + std::to_string(bytes.size() / 4 * 4) + ")");
  }
  std::vector<Word> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[i * 4 + k]) << (8 * k);
    std::memcpy(&values[i], &bits, 4);
  }
  return values;
}

}  // namespace

void write_f32(const std::filesystem::path& path, std::span<const float> values) { write_words(path, values); }
std::vector<float> read_f32(const std::filesystem::path& path) { return read_words<float>(path); }
void write_u32(const std::filesystem::path& path, std::span<const std::uint32_t> values) { write_words(path, values); }
std::vector<std::uint32_t> read_u32(const std::filesystem::path& path) { return read_words<std::uint32_t>(path); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
}

}  // namespace gap::io
