// SPDX-License-Identifier: Apache-2.0
#include "gap/model.hpp"

#include <cmath>
#include <random>

#include "gap/errors.hpp"

namespace gap {
namespace {

template <typename T>
LinearHead<T> make_head(std::size_t fi, std::size_t fo) {
  return {Tensor<T>({fi, fo}), Tensor<T>({fo})};
}

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_head(LinearHead<T>& head, std::mt19937_64& rng) {
  fill_uniform(head.weight, 1.0 / std::sqrt(static_cast<double>(head.weight.dim(0))), rng);
  head.bias.fill(T(0));
}

// Slice k of a [K, B, F] tensor as a [B, F] tensor.
template <typename T>
Tensor<T> slice0(const Tensor<T>& t, std::size_t k) {
  const std::size_t rows = t.dim(1), cols = t.dim(2);
  Tensor<T> out({rows, cols});
  std::copy_n(t.data() + k * rows * cols, rows * cols, out.data());
  return out;
}

template <typename T>
void store0(Tensor<T>& dst, std::size_t k, const Tensor<T>& src) {
  std::copy_n(src.data(), src.size(), dst.data() + k * src.size());
}

}  // namespace

EncoderConfig EncoderConfig::deep_preset(std::size_t num_classes, std::size_t text_dim) {
  EncoderConfig c;
  c.channels = {64, 64, 64, 64, 128, 128, 128, 256, 256, 256};
  c.strides = {1, 1, 1, 1, 2, 1, 1, 2, 1, 1};
  c.num_classes = num_classes;
  c.text_dim = text_dim;
  return c;
}

void EncoderConfig::validate() const {
  if (in_channels == 0) throw ConfigError("model.in_channels must be positive");
  if (channels.empty()) throw ConfigError("model.channels must list at least one block");
  if (channels.size() != strides.size()) throw ConfigError("model.channels and model.strides differ in length");
  for (std::size_t c : channels) {
    if (c == 0 || c % 4 != 0) throw ConfigError("model.channels entries must be positive multiples of 4");
  }
  for (std::size_t s : strides) {
    if (s == 0) throw ConfigError("model.strides entries must be positive");
  }
  if (num_classes < 2) throw ConfigError("model.num_classes must be at least 2");
  if (text_dim == 0) throw ConfigError("model.text_dim must be positive");
}

template <typename T>
EncoderModel<T>::EncoderModel(EncoderConfig config, SkeletonGraph graph, PartPartition partition)
    : config_(std::move(config)), graph_(std::move(graph)), partition_(std::move(partition)) {
  config_.validate();
  check_partition(partition_, graph_.num_joints());
  const std::size_t n = graph_.num_joints();
  adjacency_ = Tensor<T>({n, n});
  for (std::size_t i = 0; i < n * n; ++i) adjacency_[i] = static_cast<T>(graph_.adjacency_norm()[i]);

  std::size_t fin = config_.in_channels;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    blocks_.push_back(nn::make_block_params<T>(fin, config_.channels[i], config_.strides[i]));
    fin = config_.channels[i];
  }
  const std::size_t f = fin;
  classifier_ = make_head<T>(f, config_.num_classes);
  for (std::size_t k = 0; k < partition_.num_slots(); ++k) projections_.push_back(make_head<T>(f, config_.text_dim));
  if (config_.part_cls_heads) {
    for (std::size_t k = 0; k < partition_.num_parts(); ++k)
      part_classifiers_.push_back(make_head<T>(f, config_.num_classes));
  }
  zero_grad();
}

template <typename T>
void EncoderModel<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& b : blocks_) {
    fill_normal(b.gc_weight, std::sqrt(2.0 / static_cast<double>(b.in_channels)), rng);
    for (auto& r : b.mtc.reduce) fill_normal(r, std::sqrt(2.0 / static_cast<double>(r.dim(1))), rng);
    for (auto& t : b.mtc.temporal) {
      fill_normal(t, std::sqrt(2.0 / static_cast<double>(t.dim(0) * t.dim(2))), rng);
    }
    b.bn_gamma.fill(T(1));
    b.bn_beta.fill(T(0));
    if (!b.identity_residual()) fill_normal(b.residual_weight, std::sqrt(2.0 / static_cast<double>(b.in_channels)), rng);
    b.running_mean.fill(T(0));
    b.running_var.fill(T(1));
  }
  init_head(classifier_, rng);
  for (auto& h : projections_) init_head(h, rng);
  for (auto& h : part_classifiers_) init_head(h, rng);
}

template <typename T>
void EncoderModel<T>::zero_grad() {
  block_grads_.clear();
  for (const auto& b : blocks_) block_grads_.push_back(nn::zeros_like(b));
  classifier_grad_ = make_head<T>(classifier_.weight.dim(0), classifier_.weight.dim(1));
  projection_grads_.clear();
  for (const auto& h : projections_) projection_grads_.push_back(make_head<T>(h.weight.dim(0), h.weight.dim(1)));
  part_classifier_grads_.clear();
  for (const auto& h : part_classifiers_)
    part_classifier_grads_.push_back(make_head<T>(h.weight.dim(0), h.weight.dim(1)));
}

template <typename T>
std::size_t EncoderModel<T>::parameter_count() const {
  std::size_t total = 0;
  for_each_parameter([&](const std::string&, const Tensor<T>& v, const Tensor<T>&, bool trainable) {
    if (trainable) total += v.size();
  });
  return total;
}

template <typename T>
EncoderOutput<T> EncoderModel<T>::forward(const Tensor<T>& input, bool training) {
  if (input.rank() != 4 || input.dim(1) != config_.in_channels || input.dim(3) != graph_.num_joints()) {
    throw ShapeError("encoder input " + shape_to_string(input.shape()) + " does not match [B," +
                     std::to_string(config_.in_channels) + ",T," + std::to_string(graph_.num_joints()) + "]");
  }
  if (input.dim(0) == 0 || input.dim(2) == 0) throw ShapeError("encoder input has an empty batch or time axis");
  cache_.valid = false;
  cache_.blocks.assign(training ? blocks_.size() : 0, {});
  Tensor<T> h = input;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = nn::block_forward(h, adjacency_, blocks_[i], training, training ? &cache_.blocks[i] : nullptr);
  }
  auto pooled = nn::pool_features(h, partition_.groups);
  const std::size_t batch = input.dim(0);

  EncoderOutput<T> out;
  out.logits = nn::linear_forward(pooled.global, classifier_.weight, classifier_.bias);
  out.part_features = Tensor<T>({num_slots(), batch, config_.text_dim});
  for (std::size_t k = 0; k < partition_.num_parts(); ++k) {
    store0(out.part_features, k,
           nn::linear_forward(slice0(pooled.parts, k), projections_[k].weight, projections_[k].bias));
  }
  if (partition_.include_global) {
    const std::size_t g = partition_.num_parts();
    store0(out.part_features, g, nn::linear_forward(pooled.global, projections_[g].weight, projections_[g].bias));
  }
  if (!part_classifiers_.empty()) {
    out.part_logits = Tensor<T>({partition_.num_parts(), batch, config_.num_classes});
    for (std::size_t k = 0; k < partition_.num_parts(); ++k) {
      store0(out.part_logits, k,
             nn::linear_forward(slice0(pooled.parts, k), part_classifiers_[k].weight, part_classifiers_[k].bias));
    }
  }
  if (training) {
    cache_.last_shape = h.shape();
    cache_.global = pooled.global;
    cache_.parts = pooled.parts;
    cache_.valid = true;
  }
  out.global_feature = std::move(pooled.global);
  out.pooled_parts = std::move(pooled.parts);
  return out;
}

template <typename T>
Tensor<T> EncoderModel<T>::backward(const OutputGrads<T>& grads) {
  if (!cache_.valid) throw Error("EncoderModel::backward called without a preceding training forward");
  const std::size_t batch = cache_.global.dim(0);
  const std::size_t f = feature_dim();
  Tensor<T> dglobal({batch, f});
  Tensor<T> dparts({partition_.num_parts(), batch, f});
  auto accumulate = [](Tensor<T>& acc, const Tensor<T>& v, std::size_t offset) {
    for (std::size_t i = 0; i < v.size(); ++i) acc[offset + i] += v[i];
  };

  if (!grads.logits.empty()) {
    Tensor<T> dx;
    nn::linear_backward(cache_.global, classifier_.weight, grads.logits, &dx, classifier_grad_.weight,
                        classifier_grad_.bias);
    accumulate(dglobal, dx, 0);
  }
  if (!grads.part_features.empty()) {
    expect_shape(grads.part_features, {num_slots(), batch, config_.text_dim}, "part feature gradient");
    for (std::size_t k = 0; k < partition_.num_parts(); ++k) {
      Tensor<T> dx;
      nn::linear_backward(slice0(cache_.parts, k), projections_[k].weight, slice0(grads.part_features, k), &dx,
                          projection_grads_[k].weight, projection_grads_[k].bias);
      accumulate(dparts, dx, k * batch * f);
    }
    if (partition_.include_global) {
      const std::size_t g = partition_.num_parts();
      Tensor<T> dx;
      nn::linear_backward(cache_.global, projections_[g].weight, slice0(grads.part_features, g), &dx,
                          projection_grads_[g].weight, projection_grads_[g].bias);
      accumulate(dglobal, dx, 0);
    }
  }
  if (!grads.part_logits.empty()) {
    if (part_classifiers_.empty()) throw ConfigError("part logits gradient given but model has no part classifiers");
    for (std::size_t k = 0; k < partition_.num_parts(); ++k) {
      Tensor<T> dx;
      nn::linear_backward(slice0(cache_.parts, k), part_classifiers_[k].weight, slice0(grads.part_logits, k), &dx,
                          part_classifier_grads_[k].weight, part_classifier_grads_[k].bias);
      accumulate(dparts, dx, k * batch * f);
    }
  }
  Tensor<T> dh = nn::pool_features_backward(cache_.last_shape, partition_.groups, dglobal, dparts);
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    dh = nn::block_backward(dh, adjacency_, blocks_[i], cache_.blocks[i], block_grads_[i]);
  }
  return dh;
}

template class EncoderModel<float>;
template class EncoderModel<double>;

}  // namespace gap
