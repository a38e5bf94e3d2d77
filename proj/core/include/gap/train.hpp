// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gap/dataset.hpp"
#include "gap/losses.hpp"
#include "gap/model.hpp"
#include "gap/textbank.hpp"

namespace gap {

enum class TrainMode { Baseline, Gap, PartCls };
TrainMode parse_train_mode(std::string_view name);
std::string_view to_string(TrainMode mode);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double base_lr = 0.1;
  std::size_t warmup_epochs = 5;
  std::vector<std::size_t> decay_epochs{20, 25};
  double decay_factor = 10.0;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  double lambda = 0.8;
  double tau = 0.1;
  loss::ContrastVariant variant = loss::ContrastVariant::KLD;
  std::string partition = "four_part";
  PromptType prompt_type = PromptType::SynonymPlusParts;
  bool include_global = true;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Gap;
  std::string modality = "joint";
  /// Encoder widths; empty keeps the EncoderConfig defaults.
  std::vector<std::size_t> channels;
  std::vector<std::size_t> strides;

  /// 30 epochs, batch 32, warmup 5, decay at 20 and 25.
  static TrainConfig desk_preset();
  /// 110 epochs, batch 200, warmup 5, decay at 90 and 100.
  static TrainConfig large_preset();

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Missing keys keep their desk-preset defaults.
  static TrainConfig from_json(const std::string& text);
  std::string to_json() const;
};

/// Independent generator seed for a named purpose ("init", "shuffle",
/// "variants") derived from the master seed.
std::uint64_t stream_seed(std::uint64_t master, std::string_view stream);

/// Linear warmup, then base_lr divided by decay_factor once per decay epoch
/// already reached.
double lr_at(std::size_t epoch, const TrainConfig& config);

/// v = momentum * v + (g + wd * w); w -= lr * v. Throws DivergenceError
/// if any gradient entry is not finite.
template <typename T>
void sgd_update(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, double lr, double momentum,
                double weight_decay);

/// Momentum buffers for every trainable tensor of a model.
template <typename T>
struct SgdState {
  std::vector<Tensor<T>> velocity;
};

template <typename T>
void sgd_step(EncoderModel<T>& model, SgdState<T>& state, double lr, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double con = 0.0;
  double acc = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double final_train_acc = 0.0;
  std::optional<double> final_test_acc;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string mode;
  std::string variant;
};

/// Encoder architecture implied by the config for this dataset.
EncoderConfig encoder_config_for(const TrainConfig& config, std::size_t num_classes, std::size_t text_dim);

/// Builds and initializes the encoder, then runs the configured schedule.
/// `train` must already be in the modality to learn from. `bank` is required
/// in gap mode and must cover every class and slot of the partition.
EncoderModel<float> train(const SkeletonBatch& train, const SkeletonBatch* test, const TextFeatureBank* bank,
                          const TrainConfig& config, TrainReport* report);

/// Eval-mode top-1 accuracy.
double evaluate_accuracy(EncoderModel<float>& model, const SkeletonBatch& batch);

/// report.csv (epoch,loss,ce,con,acc,lr) and summary.json.
void write_report(const TrainReport& report, const std::filesystem::path& dir);

}  // namespace gap
