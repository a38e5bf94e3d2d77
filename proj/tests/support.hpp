// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "gap/synthetic.hpp"
#include "gap/tensor.hpp"
#include "gap/train.hpp"

namespace gap::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("gap_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

/// Default class recipes at a fraction of the size; trains in well under a second.
inline SyntheticSpec small_spec(std::uint64_t seed = 7) {
  SyntheticSpec spec = SyntheticSpec::default_spec();
  spec.train_per_class = 8;
  spec.test_per_class = 4;
  spec.frames = 16;
  spec.seed = seed;
  return spec;
}

inline TrainConfig quick_config(TrainMode mode, std::uint64_t seed = 1) {
  TrainConfig c;
  c.epochs = 3;
  c.warmup_epochs = 1;
  c.decay_epochs = {2};
  c.batch_size = 16;
  c.mode = mode;
  c.seed = seed;
  c.channels = {8, 8};
  c.strides = {1, 2};
  return c;
}

}  // namespace gap::testing
