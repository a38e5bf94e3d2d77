// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "gap/tensor.hpp"

/// Classification and skeleton-text contrastive objectives. Natural logs
/// throughout; every loss that feeds training also returns its gradient.
namespace gap::loss {

enum class ContrastVariant { KLD, CL, JSD };

ContrastVariant parse_variant(std::string_view name);
std::string_view to_string(ContrastVariant variant);

template <typename T>
struct ValueAndGrad {
  T value{};
  Tensor<T> grad;
};

/// Mean over the batch of -log softmax(logits)[label]; grad w.r.t. logits.
template <typename T>
ValueAndGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint32_t> labels);

template <typename T>
struct SimilarityDistributions {
  Tensor<T> s2t;  // row i: softmax_j(cos(s_i, t_j) / tau)
  Tensor<T> t2s;  // row i: softmax_j(cos(t_i, s_j) / tau)
};

template <typename T>
SimilarityDistributions<T> similarity_distributions(const Tensor<T>& skeleton, const Tensor<T>& text, T tau);

/// y_ij = [label_i == label_j] / #{j : label_j == label_i}.
template <typename T>
Tensor<T> build_targets(std::span<const std::uint32_t> labels);

/// Divergence between the similarity distributions and the targets,
/// averaged over rows and both directions:
///   KLD: KL(y || p), CL: -log(sum of p over positives), JSD: JS(y, p).
template <typename T>
T contrastive_loss(const Tensor<T>& p_s2t, const Tensor<T>& p_t2s, const Tensor<T>& targets, ContrastVariant variant);

/// Contrastive loss from raw features for one slot, with the gradient with
/// respect to the skeleton features. Text features are treated as constants.
template <typename T>
ValueAndGrad<T> contrastive_feature_loss(const Tensor<T>& skeleton, const Tensor<T>& text,
                                         std::span<const std::uint32_t> labels, T tau, ContrastVariant variant);

/// Arithmetic mean over contrast slots.
template <typename T>
T multi_part_loss(std::span<const T> slot_losses);

template <typename T>
T total_loss(T classification, T contrastive, T lambda);

/// Mean over parts of the cross entropy of each part classifier; `part_logits`
/// is [K, B, C] and the gradient has the same shape.
template <typename T>
ValueAndGrad<T> part_cls_loss(const Tensor<T>& part_logits, std::span<const std::uint32_t> labels);

/// Global cross entropy plus the part classification term.
template <typename T>
T part_cls_baseline_loss(const Tensor<T>& logits, const Tensor<T>& part_logits, std::span<const std::uint32_t> labels);

}  // namespace gap::loss
