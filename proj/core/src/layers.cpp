// SPDX-License-Identifier: Apache-2.0
#include "gap/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gap/errors.hpp"

namespace gap::nn {
namespace {

struct Dims {
  std::size_t batch, channels, frames, joints;
  std::size_t sample() const { return channels * frames * joints; }
  std::size_t plane() const { return frames * joints; }
};

template <typename T>
Dims dims4(const Tensor<T>& x, const char* what) {
  if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected a rank-4 [B,C,T,N] tensor, got " + shape_to_string(x.shape()));
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

template <typename T>
void zero_if_empty(Tensor<T>& t, const Shape& shape) {
  if (t.empty()) t = Tensor<T>(shape);
}

}  // namespace

// ---- graph convolution ----------------------------------------------------

template <typename T>
Tensor<T> graph_conv_forward(const Tensor<T>& x, const Tensor<T>& adjacency, const Tensor<T>& weight) {
  const Dims d = dims4(x, "graph_conv");
  expect_shape(adjacency, {d.joints, d.joints}, "graph_conv adjacency");
  if (weight.rank() != 2 || weight.dim(0) != d.channels) {
    throw ShapeError("graph_conv weight " + shape_to_string(weight.shape()) + " does not accept " +
                     std::to_string(d.channels) + " input channels");
  }
  const std::size_t fo = weight.dim(1);
  Tensor<T> y({d.batch, fo, d.frames, d.joints});
  ConstMatrixMap<T> a(adjacency.data(), d.joints, d.joints);
  ConstMatrixMap<T> w(weight.data(), d.channels, fo);
  RowMatrix<T> mixed(d.channels * d.frames, d.joints);
  for (std::size_t b = 0; b < d.batch; ++b) {
    ConstMatrixMap<T> xb(x.data() + b * d.sample(), d.channels * d.frames, d.joints);
    mixed.noalias() = xb * a.transpose();
    ConstMatrixMap<T> m(mixed.data(), d.channels, d.plane());
    MatrixMap<T> yb(y.data() + b * fo * d.plane(), fo, d.plane());
    yb.noalias() = w.transpose() * m;
  }
  return y;
}

template <typename T>
void graph_conv_backward(const Tensor<T>& x, const Tensor<T>& adjacency, const Tensor<T>& weight, const Tensor<T>& dy,
                         Tensor<T>* dx, Tensor<T>& dweight) {
  const Dims d = dims4(x, "graph_conv_backward");
  const std::size_t fo = weight.dim(1);
  expect_shape(dy, {d.batch, fo, d.frames, d.joints}, "graph_conv_backward dy");
  zero_if_empty(dweight, weight.shape());
  if (dx) *dx = Tensor<T>(x.shape());
  ConstMatrixMap<T> a(adjacency.data(), d.joints, d.joints);
  ConstMatrixMap<T> w(weight.data(), d.channels, fo);
  MatrixMap<T> dw(dweight.data(), d.channels, fo);
  RowMatrix<T> mixed(d.channels * d.frames, d.joints);
  RowMatrix<T> dmixed(d.channels, d.plane());
  for (std::size_t b = 0; b < d.batch; ++b) {
    ConstMatrixMap<T> xb(x.data() + b * d.sample(), d.channels * d.frames, d.joints);
    ConstMatrixMap<T> dyb(dy.data() + b * fo * d.plane(), fo, d.plane());
    mixed.noalias() = xb * a.transpose();
    ConstMatrixMap<T> m(mixed.data(), d.channels, d.plane());
    dw.noalias() += m * dyb.transpose();
    if (dx) {
      dmixed.noalias() = w * dyb;
      ConstMatrixMap<T> dm(dmixed.data(), d.channels * d.frames, d.joints);
      MatrixMap<T> dxb(dx->data() + b * d.sample(), d.channels * d.frames, d.joints);
      dxb.noalias() = dm * a;
    }
  }
}

// ---- temporal operators ---------------------------------------------------

template <typename T>
Tensor<T> conv1x1_forward(const Tensor<T>& x, const Tensor<T>& weight) {
  const Dims d = dims4(x, "conv1x1");
  if (weight.rank() != 2 || weight.dim(1) != d.channels) {
    throw ShapeError("conv1x1 weight " + shape_to_string(weight.shape()) + " does not accept " +
                     std::to_string(d.channels) + " channels");
  }
  const std::size_t co = weight.dim(0);
  Tensor<T> y({d.batch, co, d.frames, d.joints});
  ConstMatrixMap<T> w(weight.data(), co, d.channels);
  for (std::size_t b = 0; b < d.batch; ++b) {
    ConstMatrixMap<T> xb(x.data() + b * d.sample(), d.channels, d.plane());
    MatrixMap<T> yb(y.data() + b * co * d.plane(), co, d.plane());
    yb.noalias() = w * xb;
  }
  return y;
}

template <typename T>
void conv1x1_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Tensor<T>* dx,
                      Tensor<T>& dweight) {
  const Dims d = dims4(x, "conv1x1_backward");
  const std::size_t co = weight.dim(0);
  expect_shape(dy, {d.batch, co, d.frames, d.joints}, "conv1x1_backward dy");
  zero_if_empty(dweight, weight.shape());
  if (dx) *dx = Tensor<T>(x.shape());
  ConstMatrixMap<T> w(weight.data(), co, d.channels);
  MatrixMap<T> dw(dweight.data(), co, d.channels);
  for (std::size_t b = 0; b < d.batch; ++b) {
    ConstMatrixMap<T> xb(x.data() + b * d.sample(), d.channels, d.plane());
    ConstMatrixMap<T> dyb(dy.data() + b * co * d.plane(), co, d.plane());
    dw.noalias() += dyb * xb.transpose();
    if (dx) {
      MatrixMap<T> dxb(dx->data() + b * d.sample(), d.channels, d.plane());
      dxb.noalias() = w.transpose() * dyb;
    }
  }
}

template <typename T>
Tensor<T> temporal_conv_forward(const Tensor<T>& x, const Tensor<T>& weight, std::size_t dilation) {
  const Dims d = dims4(x, "temporal_conv");
  if (weight.rank() != 3 || weight.dim(2) != d.channels || weight.dim(0) % 2 == 0) {
    throw ShapeError("temporal_conv weight " + shape_to_string(weight.shape()) + " invalid for " +
                     std::to_string(d.channels) + " channels");
  }
  const std::size_t taps = weight.dim(0);
  const std::size_t co = weight.dim(1);
  const auto pad = static_cast<long>(dilation * (taps - 1) / 2);
  const auto frames = static_cast<long>(d.frames);
  Tensor<T> y({d.batch, co, d.frames, d.joints});
  for (std::size_t b = 0; b < d.batch; ++b) {
    ConstMatrixMap<T> xb(x.data() + b * d.sample(), d.channels, d.plane());
    MatrixMap<T> yb(y.data() + b * co * d.plane(), co, d.plane());
    for (std::size_t k = 0; k < taps; ++k) {
      const long offset = static_cast<long>(k * dilation) - pad;
      const long t0 = std::max(0L, -offset);
      const long t1 = std::min(frames, frames - offset);
      if (t1 <= t0) continue;
      ConstMatrixMap<T> wk(weight.data() + k * co * d.channels, co, d.channels);
      const auto cols = static_cast<Eigen::Index>((t1 - t0) * d.joints);
      yb.middleCols(t0 * d.joints, cols).noalias() += wk * xb.middleCols((t0 + offset) * d.joints, cols);
    }
  }
  return y;
}

template <typename T>
void temporal_conv_backward(const Tensor<T>& x, const Tensor<T>& weight, std::size_t dilation, const Tensor<T>& dy,
                            Tensor<T>* dx, Tensor<T>& dweight) {
  const Dims d = dims4(x, "temporal_conv_backward");
  const std::size_t taps = weight.dim(0);
  const std::size_t co = weight.dim(1);
  expect_shape(dy, {d.batch, co, d.frames, d.joints}, "temporal_conv_backward dy");
  zero_if_empty(dweight, weight.shape());
  if (dx) *dx = Tensor<T>(x.shape());
  const auto pad = static_cast<long>(dilation * (taps - 1) / 2);
  const auto frames = static_cast<long>(d.frames);
  for (std::size_t b = 0; b < d.batch; ++b) {
    ConstMatrixMap<T> xb(x.data() + b * d.sample(), d.channels, d.plane());
    ConstMatrixMap<T> dyb(dy.data() + b * co * d.plane(), co, d.plane());
    for (std::size_t k = 0; k < taps; ++k) {
      const long offset = static_cast<long>(k * dilation) - pad;
      const long t0 = std::max(0L, -offset);
      const long t1 = std::min(frames, frames - offset);
      if (t1 <= t0) continue;
      ConstMatrixMap<T> wk(weight.data() + k * co * d.channels, co, d.channels);
      MatrixMap<T> dwk(dweight.data() + k * co * d.channels, co, d.channels);
      const auto cols = static_cast<Eigen::Index>((t1 - t0) * d.joints);
      const auto out_block = dyb.middleCols(t0 * d.joints, cols);
      dwk.noalias() += out_block * xb.middleCols((t0 + offset) * d.joints, cols).transpose();
      if (dx) {
        MatrixMap<T> dxb(dx->data() + b * d.sample(), d.channels, d.plane());
        dxb.middleCols((t0 + offset) * d.joints, cols).noalias() += wk.transpose() * out_block;
      }
    }
  }
}

std::size_t strided_length(std::size_t frames, std::size_t stride) {
  if (stride == 0) throw ConfigError("temporal stride must be positive");
  return (frames + stride - 1) / stride;
}

template <typename T>
Tensor<T> temporal_subsample(const Tensor<T>& x, std::size_t stride) {
  if (stride == 1) return x;
  const Dims d = dims4(x, "temporal_subsample");
  const std::size_t out_frames = strided_length(d.frames, stride);
  Tensor<T> y({d.batch, d.channels, out_frames, d.joints});
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const T* src = x.data() + bc * d.plane();
    T* dst = y.data() + bc * out_frames * d.joints;
    for (std::size_t t = 0; t < out_frames; ++t) {
      std::copy_n(src + t * stride * d.joints, d.joints, dst + t * d.joints);
    }
  }
  return y;
}

template <typename T>
Tensor<T> temporal_subsample_backward(const Tensor<T>& dy, std::size_t stride, std::size_t input_frames) {
  if (stride == 1) return dy;
  const Dims d = dims4(dy, "temporal_subsample_backward");
  if (d.frames != strided_length(input_frames, stride)) throw ShapeError("temporal_subsample_backward frame mismatch");
  Tensor<T> dx({d.batch, d.channels, input_frames, d.joints});
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const T* src = dy.data() + bc * d.plane();
    T* dst = dx.data() + bc * input_frames * d.joints;
    for (std::size_t t = 0; t < d.frames; ++t) {
      std::copy_n(src + t * d.joints, d.joints, dst + t * stride * d.joints);
    }
  }
  return dx;
}

template <typename T>
Tensor<T> temporal_maxpool_forward(const Tensor<T>& x, MaxPoolCache* cache) {
  const Dims d = dims4(x, "temporal_maxpool");
  Tensor<T> y(x.shape());
  if (cache) {
    cache->input_shape = x.shape();
    cache->argmax.assign(x.size(), 0);
  }
  const long half = static_cast<long>(kPoolWindow / 2);
  const auto frames = static_cast<long>(d.frames);
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const std::size_t base = bc * d.plane();
    for (long t = 0; t < frames; ++t) {
      for (std::size_t n = 0; n < d.joints; ++n) {
        std::size_t best = base + static_cast<std::size_t>(std::max(0L, t - half)) * d.joints + n;
        for (long s = std::max(0L, t - half) + 1; s <= std::min(frames - 1, t + half); ++s) {
          const std::size_t idx = base + static_cast<std::size_t>(s) * d.joints + n;
          if (x[idx] > x[best]) best = idx;
        }
        const std::size_t out = base + static_cast<std::size_t>(t) * d.joints + n;
        y[out] = x[best];
        if (cache) cache->argmax[out] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> temporal_maxpool_backward(const Tensor<T>& dy, const MaxPoolCache& cache) {
  expect_shape(dy, cache.input_shape, "temporal_maxpool_backward dy");
  Tensor<T> dx(cache.input_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[cache.argmax[i]] += dy[i];
  return dx;
}

// ---- normalization --------------------------------------------------------

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                            Tensor<T>& running_var, bool training, BatchNormCache<T>* cache) {
  const Dims d = dims4(x, "batchnorm");
  expect_shape(gamma, {d.channels}, "batchnorm gamma");
  expect_shape(beta, {d.channels}, "batchnorm beta");
  const std::size_t count = d.batch * d.plane();
  Tensor<T> y(x.shape());
  Tensor<T> normalized(x.shape());
  std::vector<T> inv_std(d.channels);
  for (std::size_t c = 0; c < d.channels; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (training) {
      for (std::size_t b = 0; b < d.batch; ++b) {
        const T* p = x.data() + b * d.sample() + c * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) mean += p[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t b = 0; b < d.batch; ++b) {
        const T* p = x.data() + b * d.sample() + c * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) {
          const double diff = p[i] - mean;
          var += diff * diff;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - kBatchNormMomentum) * running_mean[c] + kBatchNormMomentum * mean);
      running_var[c] = static_cast<T>((1.0 - kBatchNormMomentum) * running_var[c] + kBatchNormMomentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
    const T m = static_cast<T>(mean);
    inv_std[c] = istd;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const std::size_t off = b * d.sample() + c * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) {
        const T xh = (x[off + i] - m) * istd;
        normalized[off + i] = xh;
        y[off + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->training = training;
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache,
                             Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const Dims d = dims4(dy, "batchnorm_backward");
  expect_shape(dy, cache.normalized.shape(), "batchnorm_backward dy");
  zero_if_empty(dgamma, gamma.shape());
  zero_if_empty(dbeta, gamma.shape());
  const std::size_t count = d.batch * d.plane();
  Tensor<T> dx(dy.shape());
  const auto& xh = cache.normalized;
  for (std::size_t c = 0; c < d.channels; ++c) {
    T sum_dy = 0;
    T sum_dy_xh = 0;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const std::size_t off = b * d.sample() + c * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) {
        sum_dy += dy[off + i];
        sum_dy_xh += dy[off + i] * xh[off + i];
      }
    }
    dgamma[c] += sum_dy_xh;
    dbeta[c] += sum_dy;
    const T g = gamma[c] * cache.inv_std[c];
    const T inv_count = T(1) / static_cast<T>(count);
    for (std::size_t b = 0; b < d.batch; ++b) {
      const std::size_t off = b * d.sample() + c * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) {
        if (cache.training) {
          dx[off + i] = g * (dy[off + i] - sum_dy * inv_count - xh[off + i] * sum_dy_xh * inv_count);
        } else {
          dx[off + i] = g * dy[off + i];
        }
      }
    }
  }
  return dx;
}

// ---- multiscale temporal convolution ----------------------------------------

template <typename T>
MtcParams<T> make_mtc_params(std::size_t channels) {
  if (channels == 0 || channels % 4 != 0) {
    throw ConfigError("multiscale temporal convolution needs channels divisible by 4, got " + std::to_string(channels));
  }
  const std::size_t q = channels / 4;
  MtcParams<T> p;
  for (auto& r : p.reduce) r = Tensor<T>({q, channels});
  for (auto& t : p.temporal) t = Tensor<T>({kTemporalKernel, q, q});
  return p;
}

template <typename T>
Tensor<T> mtc_forward(const Tensor<T>& x, const MtcParams<T>& params, std::size_t stride, MtcCache<T>* cache) {
  const Dims d = dims4(x, "mtc");
  if (d.channels % 4 != 0) {
    throw ConfigError("multiscale temporal convolution needs channels divisible by 4, got " + std::to_string(d.channels));
  }
  const std::size_t q = d.channels / 4;
  std::array<Tensor<T>, 4> reduced;
  for (std::size_t j = 0; j < 4; ++j) reduced[j] = conv1x1_forward(x, params.reduce[j]);
  MaxPoolCache pool;
  std::array<Tensor<T>, 4> branch = {
      temporal_subsample(temporal_conv_forward(reduced[0], params.temporal[0], 1), stride),
      temporal_subsample(temporal_conv_forward(reduced[1], params.temporal[1], 2), stride),
      temporal_subsample(temporal_maxpool_forward(reduced[2], &pool), stride),
      temporal_subsample(reduced[3], stride),
  };
  const std::size_t out_frames = strided_length(d.frames, stride);
  const std::size_t out_plane = out_frames * d.joints;
  Tensor<T> y({d.batch, d.channels, out_frames, d.joints});
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t j = 0; j < 4; ++j) {
      std::copy_n(branch[j].data() + b * q * out_plane, q * out_plane,
                  y.data() + b * d.channels * out_plane + j * q * out_plane);
    }
  }
  if (cache) {
    cache->reduced = std::move(reduced);
    cache->pool = std::move(pool);
  }
  return y;
}

template <typename T>
Tensor<T> mtc_backward(const Tensor<T>& x, const Tensor<T>& dy, const MtcParams<T>& params, std::size_t stride,
                       const MtcCache<T>& cache, MtcParams<T>& grads) {
  const Dims d = dims4(x, "mtc_backward");
  const std::size_t q = d.channels / 4;
  const std::size_t out_frames = strided_length(d.frames, stride);
  const std::size_t out_plane = out_frames * d.joints;
  expect_shape(dy, {d.batch, d.channels, out_frames, d.joints}, "mtc_backward dy");

  std::array<Tensor<T>, 4> dbranch;
  for (std::size_t j = 0; j < 4; ++j) {
    dbranch[j] = Tensor<T>({d.batch, q, out_frames, d.joints});
    for (std::size_t b = 0; b < d.batch; ++b) {
      std::copy_n(dy.data() + b * d.channels * out_plane + j * q * out_plane, q * out_plane,
                  dbranch[j].data() + b * q * out_plane);
    }
  }
  std::array<Tensor<T>, 4> dreduced;
  for (std::size_t j = 0; j < 2; ++j) {
    const Tensor<T> dconv = temporal_subsample_backward(dbranch[j], stride, d.frames);
    temporal_conv_backward(cache.reduced[j], params.temporal[j], j + 1, dconv, &dreduced[j], grads.temporal[j]);
  }
  dreduced[2] = temporal_maxpool_backward(temporal_subsample_backward(dbranch[2], stride, d.frames), cache.pool);
  dreduced[3] = temporal_subsample_backward(dbranch[3], stride, d.frames);

  Tensor<T> dx(x.shape());
  for (std::size_t j = 0; j < 4; ++j) {
    Tensor<T> part;
    conv1x1_backward(x, params.reduce[j], dreduced[j], &part, grads.reduce[j]);
    add_into(dx, part);
  }
  return dx;
}

// ---- GC-MTC block ----------------------------------------------------------

template <typename T>
BlockParams<T> make_block_params(std::size_t in_channels, std::size_t out_channels, std::size_t stride) {
  if (stride == 0) throw ConfigError("block stride must be positive");
  BlockParams<T> p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.stride = stride;
  p.gc_weight = Tensor<T>({in_channels, out_channels});
  p.mtc = make_mtc_params<T>(out_channels);
  p.bn_gamma = Tensor<T>({out_channels}, T(1));
  p.bn_beta = Tensor<T>({out_channels});
  if (in_channels != out_channels || stride != 1) p.residual_weight = Tensor<T>({out_channels, in_channels});
  p.running_mean = Tensor<T>({out_channels});
  p.running_var = Tensor<T>({out_channels}, T(1));
  return p;
}

template <typename T>
BlockParams<T> zeros_like(const BlockParams<T>& params) {
  BlockParams<T> g = make_block_params<T>(params.in_channels, params.out_channels, params.stride);
  g.bn_gamma.fill(T(0));
  g.running_var.fill(T(0));
  return g;
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const Tensor<T>& adjacency, BlockParams<T>& params, bool training,
                        BlockCache<T>* cache) {
  const Dims d = dims4(x, "block");
  if (d.channels != params.in_channels) {
    throw ShapeError("block expects " + std::to_string(params.in_channels) + " input channels, got " +
                     std::to_string(d.channels));
  }
  Tensor<T> gc = graph_conv_forward(x, adjacency, params.gc_weight);
  MtcCache<T> mtc_cache;
  Tensor<T> temporal = mtc_forward(gc, params.mtc, params.stride, cache ? &mtc_cache : nullptr);
  BatchNormCache<T> bn_cache;
  Tensor<T> y = batchnorm_forward(temporal, params.bn_gamma, params.bn_beta, params.running_mean, params.running_var,
                                  training, cache ? &bn_cache : nullptr);
  if (params.identity_residual()) {
    add_into(y, x);
  } else {
    add_into(y, conv1x1_forward(temporal_subsample(x, params.stride), params.residual_weight));
  }
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  if (cache) {
    cache->input = x;
    cache->gc_out = std::move(gc);
    cache->mtc = std::move(mtc_cache);
    cache->bn = std::move(bn_cache);
    cache->output = y;
  }
  return y;
}

template <typename T>
Tensor<T> block_backward(const Tensor<T>& dy, const Tensor<T>& adjacency, const BlockParams<T>& params,
                         const BlockCache<T>& cache, BlockParams<T>& grads) {
  expect_shape(dy, cache.output.shape(), "block_backward dy");
  Tensor<T> dsum(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dsum[i] = cache.output[i] > T(0) ? dy[i] : T(0);

  Tensor<T> dx;
  if (params.identity_residual()) {
    dx = dsum;
  } else {
    const Tensor<T> strided = temporal_subsample(cache.input, params.stride);
    Tensor<T> dstrided;
    conv1x1_backward(strided, params.residual_weight, dsum, &dstrided, grads.residual_weight);
    dx = temporal_subsample_backward(dstrided, params.stride, cache.input.dim(2));
  }
  const Tensor<T> dtemporal = batchnorm_backward(dsum, params.bn_gamma, cache.bn, grads.bn_gamma, grads.bn_beta);
  const Tensor<T> dgc = mtc_backward(cache.gc_out, dtemporal, params.mtc, params.stride, cache.mtc, grads.mtc);
  Tensor<T> dinput;
  graph_conv_backward(cache.input, adjacency, params.gc_weight, dgc, &dinput, grads.gc_weight);
  add_into(dx, dinput);
  return dx;
}

// ---- pooling and heads -------------------------------------------------------

template <typename T>
PooledFeatures<T> pool_features(const Tensor<T>& x, const std::vector<std::vector<int>>& groups) {
  const Dims d = dims4(x, "pool_features");
  PooledFeatures<T> out;
  out.global = Tensor<T>({d.batch, d.channels});
  out.parts = Tensor<T>({groups.size(), d.batch, d.channels});
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) throw PartitionError("part group " + std::to_string(k) + " is empty");
    for (int j : groups[k]) {
      if (j < 0 || static_cast<std::size_t>(j) >= d.joints) {
        throw PartitionError("part group " + std::to_string(k) + " references joint " + std::to_string(j) +
                             " outside the feature map");
      }
    }
  }
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      const T* p = x.data() + b * d.sample() + c * d.plane();
      T total = 0;
      for (std::size_t i = 0; i < d.plane(); ++i) total += p[i];
      out.global.at(b, c) = total / static_cast<T>(d.plane());
      for (std::size_t k = 0; k < groups.size(); ++k) {
        T acc = 0;
        for (std::size_t t = 0; t < d.frames; ++t)
          for (int j : groups[k]) acc += p[t * d.joints + j];
        out.parts.at(k, b, c) = acc / static_cast<T>(d.frames * groups[k].size());
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pool_features_backward(const Shape& input_shape, const std::vector<std::vector<int>>& groups,
                                 const Tensor<T>& dglobal, const Tensor<T>& dparts) {
  Tensor<T> dx(input_shape);
  const Dims d{input_shape.at(0), input_shape.at(1), input_shape.at(2), input_shape.at(3)};
  if (!dglobal.empty()) expect_shape(dglobal, {d.batch, d.channels}, "pool_features_backward dglobal");
  if (!dparts.empty()) expect_shape(dparts, {groups.size(), d.batch, d.channels}, "pool_features_backward dparts");
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      T* p = dx.data() + b * d.sample() + c * d.plane();
      if (!dglobal.empty()) {
        const T g = dglobal.at(b, c) / static_cast<T>(d.plane());
        for (std::size_t i = 0; i < d.plane(); ++i) p[i] += g;
      }
      if (dparts.empty()) continue;
      for (std::size_t k = 0; k < groups.size(); ++k) {
        const T g = dparts.at(k, b, c) / static_cast<T>(d.frames * groups[k].size());
        for (std::size_t t = 0; t < d.frames; ++t)
          for (int j : groups[k]) p[t * d.joints + j] += g;
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(0) != x.dim(1)) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t rows = x.dim(0), fi = x.dim(1), fo = weight.dim(1);
  expect_shape(bias, {fo}, "linear bias");
  Tensor<T> y({rows, fo});
  ConstMatrixMap<T> w(weight.data(), fi, fo);
  ConstMatrixMap<T> bvec(bias.data(), 1, fo);
  for (std::size_t r = 0; r < rows; ++r) {
    ConstMatrixMap<T> xr(x.data() + r * fi, 1, fi);
    MatrixMap<T> yr(y.data() + r * fo, 1, fo);
    yr.noalias() = xr * w;
    yr += bvec;
  }
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dweight, Tensor<T>& dbias) {
  const std::size_t rows = x.dim(0), fi = x.dim(1), fo = weight.dim(1);
  expect_shape(dy, {rows, fo}, "linear_backward dy");
  zero_if_empty(dweight, weight.shape());
  zero_if_empty(dbias, Shape{fo});
  if (dx) *dx = Tensor<T>(x.shape());
  ConstMatrixMap<T> w(weight.data(), fi, fo);
  MatrixMap<T> dw(dweight.data(), fi, fo);
  for (std::size_t r = 0; r < rows; ++r) {
    ConstMatrixMap<T> xr(x.data() + r * fi, 1, fi);
    ConstMatrixMap<T> dyr(dy.data() + r * fo, 1, fo);
    dw.noalias() += xr.transpose() * dyr;
    for (std::size_t o = 0; o < fo; ++o) dbias[o] += dyr(0, o);
    if (dx) {
      MatrixMap<T> dxr(dx->data() + r * fi, 1, fi);
      dxr.noalias() = dyr * w.transpose();
    }
  }
}

#define GAP_INSTANTIATE_LAYERS(T)                                                                                    \
  template Tensor<T> graph_conv_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template void graph_conv_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                    Tensor<T>*, Tensor<T>&);                                                         \
  template Tensor<T> conv1x1_forward(const Tensor<T>&, const Tensor<T>&);                                           \
  template void conv1x1_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>&);     \
  template Tensor<T> temporal_conv_forward(const Tensor<T>&, const Tensor<T>&, std::size_t);                        \
  template void temporal_conv_backward(const Tensor<T>&, const Tensor<T>&, std::size_t, const Tensor<T>&,           \
                                       Tensor<T>*, Tensor<T>&);                                                      \
  template Tensor<T> temporal_subsample(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> temporal_subsample_backward(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> temporal_maxpool_forward(const Tensor<T>&, MaxPoolCache*);                                     \
  template Tensor<T> temporal_maxpool_backward(const Tensor<T>&, const MaxPoolCache&);                              \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, \
                                       bool, BatchNormCache<T>*);                                                    \
  template Tensor<T> batchnorm_backward(const Tensor<T>&, const Tensor<T>&, const BatchNormCache<T>&, Tensor<T>&,   \
                                        Tensor<T>&);                                                                 \
  template MtcParams<T> make_mtc_params(std::size_t);                                                               \
  template Tensor<T> mtc_forward(const Tensor<T>&, const MtcParams<T>&, std::size_t, MtcCache<T>*);                 \
  template Tensor<T> mtc_backward(const Tensor<T>&, const Tensor<T>&, const MtcParams<T>&, std::size_t,             \
                                  const MtcCache<T>&, MtcParams<T>&);                                                \
  template BlockParams<T> make_block_params(std::size_t, std::size_t, std::size_t);                                 \
  template BlockParams<T> zeros_like(const BlockParams<T>&);                                                         \
  template Tensor<T> block_forward(const Tensor<T>&, const Tensor<T>&, BlockParams<T>&, bool, BlockCache<T>*);      \
  template Tensor<T> block_backward(const Tensor<T>&, const Tensor<T>&, const BlockParams<T>&, const BlockCache<T>&, \
                                    BlockParams<T>&);                                                                \
  template PooledFeatures<T> pool_features(const Tensor<T>&, const std::vector<std::vector<int>>&);                 \
  template Tensor<T> pool_features_backward(const Shape&, const std::vector<std::vector<int>>&, const Tensor<T>&,   \
                                            const Tensor<T>&);                                                       \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>&,       \
                                Tensor<T>&);

GAP_INSTANTIATE_LAYERS(float)
GAP_INSTANTIATE_LAYERS(double)

#undef GAP_INSTANTIATE_LAYERS

}  // namespace gap::nn
