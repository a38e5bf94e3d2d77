// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gap/layers.hpp"
#include "gap/skeleton.hpp"
#include "gap/tensor.hpp"

namespace gap {

struct EncoderConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> channels{16, 16, 32, 32};
  std::vector<std::size_t> strides{1, 1, 2, 1};
  std::size_t num_classes = 0;
  std::size_t text_dim = 64;
  /// Extra per-part classifier heads for the part-classification baseline.
  bool part_cls_heads = false;

  /// Ten-block stack (64-64-64-64-128-128-128-256-256-256, stride 2 entering
  /// the 128 and 256 stages).
  static EncoderConfig deep_preset(std::size_t num_classes, std::size_t text_dim);
  void validate() const;
};

template <typename T>
struct LinearHead {
  Tensor<T> weight;  // [F_in, F_out]
  Tensor<T> bias;    // [F_out]
};

template <typename T>
struct EncoderOutput {
  Tensor<T> global_feature;  // [B, F_out]
  Tensor<T> pooled_parts;    // [K, B, F_out]
  Tensor<T> part_features;   // [slots, B, D_text], projected, not normalized
  Tensor<T> logits;          // [B, C]
  Tensor<T> part_logits;     // [K, B, C] when part classification heads exist
};

/// Upstream gradients for EncoderModel::backward; empty tensors count as zero.
template <typename T>
struct OutputGrads {
  Tensor<T> logits;
  Tensor<T> part_features;
  Tensor<T> part_logits;
};

/// Skeleton encoder: GC-MTC blocks, global and part pooling, a classifier on
/// the global feature and one affine projection per contrast slot.
template <typename T>
class EncoderModel {
 public:
  EncoderModel(EncoderConfig config, SkeletonGraph graph, PartPartition partition);

  /// Kaiming-normal convolutions, uniform heads, deterministic in `seed`.
  void initialize(std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  const SkeletonGraph& graph() const { return graph_; }
  const PartPartition& partition() const { return partition_; }
  std::size_t num_slots() const { return partition_.num_slots(); }
  std::size_t feature_dim() const { return config_.channels.back(); }

  /// Runs the network. In training mode batch-norm uses batch statistics and
  /// the activations needed by backward() are retained.
  EncoderOutput<T> forward(const Tensor<T>& input, bool training);

  /// Accumulates parameter gradients for the last training forward and
  /// returns the gradient with respect to the input.
  Tensor<T> backward(const OutputGrads<T>& grads);

  void zero_grad();

  /// Visits (name, value, grad, trainable) in manifest order. Running
  /// batch-norm statistics are visited as non-trainable buffers.
  template <typename F>
  void for_each_parameter(F&& fn);
  template <typename F>
  void for_each_parameter(F&& fn) const;

  std::size_t parameter_count() const;

  template <typename U>
  EncoderModel<U> cast() const;

  const std::vector<nn::BlockParams<T>>& blocks() const { return blocks_; }
  std::vector<nn::BlockParams<T>>& blocks() { return blocks_; }
  const Tensor<T>& adjacency() const { return adjacency_; }

 private:
  template <typename U>
  friend class EncoderModel;

  EncoderConfig config_;
  SkeletonGraph graph_;
  PartPartition partition_;
  Tensor<T> adjacency_;

  std::vector<nn::BlockParams<T>> blocks_;
  LinearHead<T> classifier_;
  std::vector<LinearHead<T>> projections_;  // one per contrast slot
  std::vector<LinearHead<T>> part_classifiers_;

  std::vector<nn::BlockParams<T>> block_grads_;
  LinearHead<T> classifier_grad_;
  std::vector<LinearHead<T>> projection_grads_;
  std::vector<LinearHead<T>> part_classifier_grads_;

  struct Cache {
    std::vector<nn::BlockCache<T>> blocks;
    Shape last_shape;
    Tensor<T> global;
    Tensor<T> parts;
    bool valid = false;
  } cache_;
};

template <typename T>
template <typename F>
void EncoderModel<T>::for_each_parameter(F&& fn) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& p = blocks_[i];
    auto& g = block_grads_[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    fn(pre + "gc.weight", p.gc_weight, g.gc_weight, true);
    for (std::size_t j = 0; j < 4; ++j)
      fn(pre + "mtc.reduce" + std::to_string(j), p.mtc.reduce[j], g.mtc.reduce[j], true);
    for (std::size_t j = 0; j < 2; ++j)
      fn(pre + "mtc.temporal" + std::to_string(j), p.mtc.temporal[j], g.mtc.temporal[j], true);
    fn(pre + "bn.gamma", p.bn_gamma, g.bn_gamma, true);
    fn(pre + "bn.beta", p.bn_beta, g.bn_beta, true);
    if (!p.identity_residual()) fn(pre + "residual.weight", p.residual_weight, g.residual_weight, true);
  }
  fn(std::string("classifier.weight"), classifier_.weight, classifier_grad_.weight, true);
  fn(std::string("classifier.bias"), classifier_.bias, classifier_grad_.bias, true);
  for (std::size_t k = 0; k < projections_.size(); ++k) {
    fn("proj" + std::to_string(k) + ".weight", projections_[k].weight, projection_grads_[k].weight, true);
    fn("proj" + std::to_string(k) + ".bias", projections_[k].bias, projection_grads_[k].bias, true);
  }
  for (std::size_t k = 0; k < part_classifiers_.size(); ++k) {
    fn("part_cls" + std::to_string(k) + ".weight", part_classifiers_[k].weight, part_classifier_grads_[k].weight, true);
    fn("part_cls" + std::to_string(k) + ".bias", part_classifiers_[k].bias, part_classifier_grads_[k].bias, true);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string pre = "block" + std::to_string(i) + ".";
    fn(pre + "bn.running_mean", blocks_[i].running_mean, block_grads_[i].running_mean, false);
    fn(pre + "bn.running_var", blocks_[i].running_var, block_grads_[i].running_var, false);
  }
}

template <typename T>
template <typename F>
void EncoderModel<T>::for_each_parameter(F&& fn) const {
  const_cast<EncoderModel<T>*>(this)->for_each_parameter(
      [&](const std::string& name, Tensor<T>& value, Tensor<T>& grad, bool trainable) {
        fn(name, static_cast<const Tensor<T>&>(value), static_cast<const Tensor<T>&>(grad), trainable);
      });
}

template <typename T>
template <typename U>
EncoderModel<U> EncoderModel<T>::cast() const {
  EncoderModel<U> out(config_, graph_, partition_);
  std::vector<const Tensor<T>*> src;
  for_each_parameter([&](const std::string&, const Tensor<T>& v, const Tensor<T>&, bool) { src.push_back(&v); });
  std::size_t i = 0;
  out.for_each_parameter([&](const std::string&, Tensor<U>& v, Tensor<U>&, bool) { v = src[i++]->template cast<U>(); });
  return out;
}

}  // namespace gap
