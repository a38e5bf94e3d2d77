// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "gap/tensor.hpp"

/// Differentiable building blocks of the skeleton encoder. Every forward
/// routine has a matching backward routine; parameter gradients are
/// accumulated (+=) into caller-owned tensors so a single zero_grad per step
/// is enough. Activations are [B, C, T, N].
namespace gap::nn {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr std::size_t kTemporalKernel = 5;
inline constexpr std::size_t kPoolWindow = 3;

// ---- graph convolution ----------------------------------------------------

/// y[b,o,t,n] = sum_{m,i} A[n,m] x[b,i,t,m] W[i,o]. `adjacency` is [N,N],
/// `weight` is [F_in, F_out]. Linear, no activation.
template <typename T>
Tensor<T> graph_conv_forward(const Tensor<T>& x, const Tensor<T>& adjacency, const Tensor<T>& weight);

template <typename T>
void graph_conv_backward(const Tensor<T>& x, const Tensor<T>& adjacency, const Tensor<T>& weight, const Tensor<T>& dy,
                         Tensor<T>* dx, Tensor<T>& dweight);

// ---- temporal operators ---------------------------------------------------

/// Pointwise convolution over channels, weight [C_out, C_in].
template <typename T>
Tensor<T> conv1x1_forward(const Tensor<T>& x, const Tensor<T>& weight);
template <typename T>
void conv1x1_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Tensor<T>* dx,
                      Tensor<T>& dweight);

/// Stride-1 temporal convolution with "same" zero padding. weight is
/// [K, C_out, C_in] with K odd.
template <typename T>
Tensor<T> temporal_conv_forward(const Tensor<T>& x, const Tensor<T>& weight, std::size_t dilation);
template <typename T>
void temporal_conv_backward(const Tensor<T>& x, const Tensor<T>& weight, std::size_t dilation, const Tensor<T>& dy,
                            Tensor<T>* dx, Tensor<T>& dweight);

/// Keeps frames 0, s, 2s, ...; output length ceil(T / s).
std::size_t strided_length(std::size_t frames, std::size_t stride);
template <typename T>
Tensor<T> temporal_subsample(const Tensor<T>& x, std::size_t stride);
template <typename T>
Tensor<T> temporal_subsample_backward(const Tensor<T>& dy, std::size_t stride, std::size_t input_frames);

struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// Temporal max pooling, window 3, stride 1, padding 1 (padding never wins).
template <typename T>
Tensor<T> temporal_maxpool_forward(const Tensor<T>& x, MaxPoolCache* cache);
template <typename T>
Tensor<T> temporal_maxpool_backward(const Tensor<T>& dy, const MaxPoolCache& cache);

// ---- normalization / activation -------------------------------------------

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;
  std::vector<T> inv_std;
  bool training = true;
};

/// Per-channel normalization over (B, T, N). In training mode batch
/// statistics are used and running statistics are updated in place.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                            Tensor<T>& running_var, bool training, BatchNormCache<T>* cache);
template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache,
                             Tensor<T>& dgamma, Tensor<T>& dbeta);

// ---- multiscale temporal convolution ----------------------------------------

/// Branch order: dilation-1 conv, dilation-2 conv, max pool, pointwise only.
template <typename T>
struct MtcParams {
  std::array<Tensor<T>, 4> reduce;    // each [F/4, F]
  std::array<Tensor<T>, 2> temporal;  // each [K, F/4, F/4]
};

template <typename T>
struct MtcCache {
  std::array<Tensor<T>, 4> reduced;
  MaxPoolCache pool;
};

template <typename T>
MtcParams<T> make_mtc_params(std::size_t channels);

template <typename T>
Tensor<T> mtc_forward(const Tensor<T>& x, const MtcParams<T>& params, std::size_t stride, MtcCache<T>* cache);
template <typename T>
Tensor<T> mtc_backward(const Tensor<T>& x, const Tensor<T>& dy, const MtcParams<T>& params, std::size_t stride,
                       const MtcCache<T>& cache, MtcParams<T>& grads);

// ---- GC-MTC block ----------------------------------------------------------

template <typename T>
struct BlockParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  Tensor<T> gc_weight;        // [F_in, F_out]
  MtcParams<T> mtc;
  Tensor<T> bn_gamma;         // [F_out]
  Tensor<T> bn_beta;          // [F_out]
  Tensor<T> residual_weight;  // [F_out, F_in]; empty for identity residual
  Tensor<T> running_mean;     // buffers, not trained
  Tensor<T> running_var;

  bool identity_residual() const { return residual_weight.empty(); }
};

template <typename T>
BlockParams<T> make_block_params(std::size_t in_channels, std::size_t out_channels, std::size_t stride);

/// Same shapes as `params` with every trainable tensor zeroed.
template <typename T>
BlockParams<T> zeros_like(const BlockParams<T>& params);

template <typename T>
struct BlockCache {
  Tensor<T> input;
  Tensor<T> gc_out;
  MtcCache<T> mtc;
  BatchNormCache<T> bn;
  Tensor<T> output;
};

/// relu(norm(mtc(gc(x))) + residual(x)).
template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const Tensor<T>& adjacency, BlockParams<T>& params, bool training,
                        BlockCache<T>* cache);
template <typename T>
Tensor<T> block_backward(const Tensor<T>& dy, const Tensor<T>& adjacency, const BlockParams<T>& params,
                         const BlockCache<T>& cache, BlockParams<T>& grads);

// ---- pooling and heads -------------------------------------------------------

template <typename T>
struct PooledFeatures {
  Tensor<T> global;  // [B, F]
  Tensor<T> parts;   // [K, B, F]
};

/// Global mean over (T, N) and per-group mean over (T, joints in group).
template <typename T>
PooledFeatures<T> pool_features(const Tensor<T>& x, const std::vector<std::vector<int>>& groups);

/// `dglobal` or `dparts` may be empty (treated as zero).
template <typename T>
Tensor<T> pool_features_backward(const Shape& input_shape, const std::vector<std::vector<int>>& groups,
                                 const Tensor<T>& dglobal, const Tensor<T>& dparts);

/// y = x W + b with x [B, F_in], W [F_in, F_out], b [F_out]. Rows are
/// processed independently.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dweight, Tensor<T>& dbias);

}  // namespace gap::nn
