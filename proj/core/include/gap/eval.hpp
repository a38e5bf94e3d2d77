// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gap/dataset.hpp"
#include "gap/model.hpp"
#include "gap/textbank.hpp"

namespace gap {

/// Pre-softmax scores [S, C] with labels and the input modality tag.
struct ScoreTable {
  Tensor<double> scores;
  std::vector<std::uint32_t> labels;
  std::string modality = "joint";

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return scores.rank() == 2 ? scores.dim(1) : 0; }
  /// Throws ConfigError on shape mismatch, non-finite scores or bad labels.
  void validate() const;
};

/// Eval-mode logits for every sample, computed in fixed-size chunks.
Tensor<float> predict_logits(EncoderModel<float>& model, const SkeletonBatch& batch, std::size_t chunk = 64);

ScoreTable score_batch(EncoderModel<float>& model, const SkeletonBatch& batch);

/// Row argmax; ties resolve to the lowest class index.
std::size_t argmax_row(const double* row, std::size_t cols);

double top1_accuracy(const ScoreTable& table);

/// Elementwise weighted sum of score matrices. With `softmax` each table is
/// converted to probabilities first. Weights default to all ones.
ScoreTable ensemble_fuse(const std::vector<ScoreTable>& tables, std::vector<double> weights = {},
                         bool softmax = false);

struct ClassDiff {
  std::size_t class_id = 0;
  double acc_a = 0.0;
  double acc_b = 0.0;
};

std::vector<double> per_class_accuracy(const ScoreTable& table);

/// Classes whose per-class accuracy differs by more than `threshold`, sorted
/// by signed difference acc_b - acc_a (ascending), ties by class id.
std::vector<ClassDiff> per_class_diff(const ScoreTable& a, const ScoreTable& b, double threshold = 0.04);

/// One CSV row per sample: s0..s{C-1},label,modality.
void save_scores_csv(const ScoreTable& table, const std::filesystem::path& path);
ScoreTable load_scores_csv(const std::filesystem::path& path);

/// C x C cosine similarities of per-class slot embeddings. Classes with
/// several variants use their re-normalized mean.
std::vector<std::vector<double>> text_similarity_matrix(const TextFeatureBank& bank, std::size_t slot);

/// Header row of class names, then one row per class prefixed by its name.
void save_similarity_csv(const std::vector<std::vector<double>>& matrix, const std::vector<std::string>& class_names,
                         const std::filesystem::path& path);

}  // namespace gap
