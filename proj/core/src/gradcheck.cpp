// SPDX-License-Identifier: Apache-2.0
#include "gap/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <random>

#include "gap/layers.hpp"
#include "gap/losses.hpp"
#include "gap/model.hpp"
#include "gap/skeleton.hpp"
#include "gap/train.hpp"
#include "json.hpp"

namespace gap {

namespace {

using Td = Tensor<double>;
using Rng = std::mt19937_64;

// Instances whose activations sit closer than this to a ReLU or max-pool
// kink are redrawn; a step of 1e-5 could otherwise cross the kink.
constexpr double kKinkMargin = 1e-4;
constexpr std::size_t kMaxRedraws = 64;
constexpr double kInf = std::numeric_limits<double>::infinity();

Td randn(Shape shape, Rng& rng, double scale = 1.0) {
  Td t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

std::vector<std::uint32_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::uniform_int_distribution<std::uint32_t> dist(0, static_cast<std::uint32_t>(classes - 1));
  std::vector<std::uint32_t> labels(n);
  for (auto& l : labels) l = dist(rng);
  return labels;
}

// Contrastive batches need at least two classes; a single-class batch makes
// the positive-mass loss identically zero.
std::vector<std::uint32_t> mixed_labels(std::size_t n, std::size_t classes, Rng& rng) {
  auto labels = random_labels(n, classes, rng);
  while (std::all_of(labels.begin(), labels.end(), [&](std::uint32_t l) { return l == labels[0]; }))
    labels = random_labels(n, classes, rng);
  return labels;
}

double dot(const Td& a, const Td& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Td slice0(const Td& t, std::size_t k) {
  Td out({t.dim(1), t.dim(2)});
  std::copy_n(t.data() + k * out.size(), out.size(), out.data());
  return out;
}

// Random connected graph on n joints: a random tree plus a few extra edges.
std::vector<double> random_adjacency(std::size_t n, Rng& rng) {
  std::vector<Edge> edges;
  for (std::size_t j = 1; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> parent(0, j - 1);
    edges.emplace_back(static_cast<int>(parent(rng)), static_cast<int>(j));
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t e = 0; e < n / 2; ++e) {
    const auto a = pick(rng), b = pick(rng);
    if (a != b) edges.emplace_back(static_cast<int>(a), static_cast<int>(b));
  }
  return normalize_adjacency(edges, n);
}

Td adjacency_tensor(const std::vector<double>& a, std::size_t n) { return Td({n, n}, a); }

// Smallest gap between the winner and runner-up of any pooling window.
double maxpool_margin(const Td& x) {
  const std::size_t b = x.dim(0), c = x.dim(1), t = x.dim(2), n = x.dim(3);
  double margin = kInf;
  for (std::size_t i = 0; i < b * c; ++i) {
    const double* base = x.data() + i * t * n;
    for (std::size_t f = 0; f < t; ++f) {
      for (std::size_t j = 0; j < n; ++j) {
        double best = -kInf, second = -kInf;
        for (std::size_t u = f == 0 ? 0 : f - 1; u <= std::min(t - 1, f + 1); ++u) {
          const double v = base[u * n + j];
          if (v > best) {
            second = best;
            best = v;
          } else if (v > second) {
            second = v;
          }
        }
        if (second > -kInf) margin = std::min(margin, best - second);
      }
    }
  }
  return margin;
}

double mtc_margin(const Td& x, const nn::MtcParams<double>& p) {
  return maxpool_margin(nn::conv1x1_forward(x, p.reduce[2]));
}

// Kink margin of one block; writes the block output to `out`.
double block_margin(const Td& x, const Td& adjacency, const nn::BlockParams<double>& p, Td* out) {
  const Td gc = nn::graph_conv_forward(x, adjacency, p.gc_weight);
  double margin = mtc_margin(gc, p.mtc);
  const Td t = nn::mtc_forward<double>(gc, p.mtc, p.stride, nullptr);
  Td rm = p.running_mean, rv = p.running_var;
  Td y = nn::batchnorm_forward<double>(t, p.bn_gamma, p.bn_beta, rm, rv, true, nullptr);
  const Td res = p.identity_residual() ? x
                                       : nn::conv1x1_forward(nn::temporal_subsample(x, p.stride), p.residual_weight);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] += res[i];
    margin = std::min(margin, std::abs(y[i]));
    y[i] = std::max(y[i], 0.0);
  }
  if (out) *out = std::move(y);
  return margin;
}

/// One random differentiable problem: a scalar loss of some tensors and its
/// analytic gradient with respect to each of them.
class Problem {
 public:
  virtual ~Problem() = default;
  virtual std::vector<Td*> inputs() = 0;
  virtual double loss() = 0;
  virtual std::vector<Td> analytic() = 0;
  virtual double margin() { return kInf; }
};

using Builder = std::function<std::unique_ptr<Problem>(Rng&)>;

// ---- layers -----------------------------------------------------------------

class GraphConvProblem : public Problem {
 public:
  explicit GraphConvProblem(Rng& rng) {
    std::uniform_int_distribution<std::size_t> nj(3, 8), ci(1, 4), co(1, 4);
    const std::size_t n = nj(rng);
    a_ = adjacency_tensor(random_adjacency(n, rng), n);
    x_ = randn({2, ci(rng), 3, n}, rng);
    w_ = randn({x_.dim(1), co(rng)}, rng);
    r_ = randn({2, w_.dim(1), 3, n}, rng);
  }
  std::vector<Td*> inputs() override { return {&x_, &w_}; }
  double loss() override { return dot(nn::graph_conv_forward(x_, a_, w_), r_); }
  std::vector<Td> analytic() override {
    Td dx, dw(w_.shape());
    nn::graph_conv_backward(x_, a_, w_, r_, &dx, dw);
    return {dx, dw};
  }

 private:
  Td a_, x_, w_, r_;
};

class Conv1x1Problem : public Problem {
 public:
  explicit Conv1x1Problem(Rng& rng) : x_(randn({2, 4, 5, 3}, rng)), w_(randn({3, 4}, rng)), r_(randn({2, 3, 5, 3}, rng)) {}
  std::vector<Td*> inputs() override { return {&x_, &w_}; }
  double loss() override { return dot(nn::conv1x1_forward(x_, w_), r_); }
  std::vector<Td> analytic() override {
    Td dx, dw(w_.shape());
    nn::conv1x1_backward(x_, w_, r_, &dx, dw);
    return {dx, dw};
  }

 private:
  Td x_, w_, r_;
};

class TemporalConvProblem : public Problem {
 public:
  TemporalConvProblem(Rng& rng, std::size_t dilation)
      : dilation_(dilation),
        x_(randn({2, 3, 7, 2}, rng)),
        w_(randn({nn::kTemporalKernel, 2, 3}, rng)),
        r_(randn({2, 2, 7, 2}, rng)) {}
  std::vector<Td*> inputs() override { return {&x_, &w_}; }
  double loss() override { return dot(nn::temporal_conv_forward(x_, w_, dilation_), r_); }
  std::vector<Td> analytic() override {
    Td dx, dw(w_.shape());
    nn::temporal_conv_backward(x_, w_, dilation_, r_, &dx, dw);
    return {dx, dw};
  }

 private:
  std::size_t dilation_;
  Td x_, w_, r_;
};

class SubsampleProblem : public Problem {
 public:
  explicit SubsampleProblem(Rng& rng) : x_(randn({2, 2, 7, 3}, rng)), r_(randn({2, 2, 4, 3}, rng)) {}
  std::vector<Td*> inputs() override { return {&x_}; }
  double loss() override { return dot(nn::temporal_subsample(x_, 2), r_); }
  std::vector<Td> analytic() override { return {nn::temporal_subsample_backward(r_, 2, 7)}; }

 private:
  Td x_, r_;
};

class MaxPoolProblem : public Problem {
 public:
  explicit MaxPoolProblem(Rng& rng) : x_(randn({2, 2, 6, 3}, rng)), r_(randn({2, 2, 6, 3}, rng)) {}
  std::vector<Td*> inputs() override { return {&x_}; }
  double loss() override { return dot(nn::temporal_maxpool_forward<double>(x_, nullptr), r_); }
  std::vector<Td> analytic() override {
    nn::MaxPoolCache cache;
    nn::temporal_maxpool_forward(x_, &cache);
    return {nn::temporal_maxpool_backward(r_, cache)};
  }
  double margin() override { return maxpool_margin(x_); }

 private:
  Td x_, r_;
};

class BatchNormProblem : public Problem {
 public:
  explicit BatchNormProblem(Rng& rng)
      : x_(randn({3, 3, 4, 2}, rng)), gamma_(randn({3}, rng)), beta_(randn({3}, rng)), r_(randn({3, 3, 4, 2}, rng)) {}
  std::vector<Td*> inputs() override { return {&x_, &gamma_, &beta_}; }
  double loss() override {
    Td rm({3}), rv({3}, 1.0);
    return dot(nn::batchnorm_forward<double>(x_, gamma_, beta_, rm, rv, true, nullptr), r_);
  }
  std::vector<Td> analytic() override {
    Td rm({3}), rv({3}, 1.0), dg({3}), db({3});
    nn::BatchNormCache<double> cache;
    nn::batchnorm_forward(x_, gamma_, beta_, rm, rv, true, &cache);
    Td dx = nn::batchnorm_backward(r_, gamma_, cache, dg, db);
    return {dx, dg, db};
  }

 private:
  Td x_, gamma_, beta_, r_;
};

class MtcProblem : public Problem {
 public:
  MtcProblem(Rng& rng, std::size_t stride) : stride_(stride), p_(nn::make_mtc_params<double>(8)) {
    x_ = randn({2, 8, 6, 3}, rng);
    for (auto& t : p_.reduce) t = randn(t.shape(), rng, 0.5);
    for (auto& t : p_.temporal) t = randn(t.shape(), rng, 0.5);
    r_ = randn({2, 8, nn::strided_length(6, stride), 3}, rng);
  }
  std::vector<Td*> inputs() override {
    std::vector<Td*> v{&x_};
    for (auto& t : p_.reduce) v.push_back(&t);
    for (auto& t : p_.temporal) v.push_back(&t);
    return v;
  }
  double loss() override { return dot(nn::mtc_forward<double>(x_, p_, stride_, nullptr), r_); }
  std::vector<Td> analytic() override {
    nn::MtcCache<double> cache;
    nn::mtc_forward(x_, p_, stride_, &cache);
    auto grads = p_;
    for (auto& t : grads.reduce) t.fill(0.0);
    for (auto& t : grads.temporal) t.fill(0.0);
    Td dx = nn::mtc_backward(x_, r_, p_, stride_, cache, grads);
    std::vector<Td> out{dx};
    for (auto& t : grads.reduce) out.push_back(t);
    for (auto& t : grads.temporal) out.push_back(t);
    return out;
  }
  double margin() override { return mtc_margin(x_, p_); }

 private:
  std::size_t stride_;
  nn::MtcParams<double> p_;
  Td x_, r_;
};

std::vector<Td*> block_tensors(nn::BlockParams<double>& p) {
  std::vector<Td*> v{&p.gc_weight};
  for (auto& t : p.mtc.reduce) v.push_back(&t);
  for (auto& t : p.mtc.temporal) v.push_back(&t);
  v.push_back(&p.bn_gamma);
  v.push_back(&p.bn_beta);
  if (!p.identity_residual()) v.push_back(&p.residual_weight);
  return v;
}

class BlockProblem : public Problem {
 public:
  BlockProblem(Rng& rng, std::size_t in, std::size_t out, std::size_t stride)
      : p_(nn::make_block_params<double>(in, out, stride)) {
    const std::size_t n = 4, t = 6;
    a_ = adjacency_tensor(random_adjacency(n, rng), n);
    x_ = randn({2, in, t, n}, rng);
    for (Td* v : block_tensors(p_)) *v = randn(v->shape(), rng, 0.5);
    for (auto& g : p_.bn_gamma.values()) g += 1.0;
    p_.running_mean.fill(0.0);
    p_.running_var.fill(1.0);
    r_ = randn({2, out, nn::strided_length(t, stride), n}, rng);
  }
  std::vector<Td*> inputs() override {
    auto v = block_tensors(p_);
    v.insert(v.begin(), &x_);
    return v;
  }
  double loss() override { return dot(nn::block_forward<double>(x_, a_, p_, true, nullptr), r_); }
  std::vector<Td> analytic() override {
    nn::BlockCache<double> cache;
    nn::block_forward(x_, a_, p_, true, &cache);
    auto grads = nn::zeros_like(p_);
    Td dx = nn::block_backward(r_, a_, p_, cache, grads);
    std::vector<Td> out{dx};
    for (Td* g : block_tensors(grads)) out.push_back(*g);
    return out;
  }
  double margin() override { return block_margin(x_, a_, p_, nullptr); }

 private:
  nn::BlockParams<double> p_;
  Td a_, x_, r_;
};

class PoolProblem : public Problem {
 public:
  explicit PoolProblem(Rng& rng) : groups_(build_partition("four_part", shipped_skeleton("toy10")).groups) {
    x_ = randn({2, 3, 4, 10}, rng);
    rg_ = randn({2, 3}, rng);
    rp_ = randn({groups_.size(), 2, 3}, rng);
  }
  std::vector<Td*> inputs() override { return {&x_}; }
  double loss() override {
    const auto p = nn::pool_features(x_, groups_);
    return dot(p.global, rg_) + dot(p.parts, rp_);
  }
  std::vector<Td> analytic() override { return {nn::pool_features_backward(x_.shape(), groups_, rg_, rp_)}; }

 private:
  std::vector<std::vector<int>> groups_;
  Td x_, rg_, rp_;
};

class LinearProblem : public Problem {
 public:
  explicit LinearProblem(Rng& rng)
      : x_(randn({3, 4}, rng)), w_(randn({4, 5}, rng)), b_(randn({5}, rng)), r_(randn({3, 5}, rng)) {}
  std::vector<Td*> inputs() override { return {&x_, &w_, &b_}; }
  double loss() override { return dot(nn::linear_forward(x_, w_, b_), r_); }
  std::vector<Td> analytic() override {
    Td dx, dw(w_.shape()), db(b_.shape());
    nn::linear_backward(x_, w_, r_, &dx, dw, db);
    return {dx, dw, db};
  }

 private:
  Td x_, w_, b_, r_;
};

// ---- losses -----------------------------------------------------------------

class CrossEntropyProblem : public Problem {
 public:
  explicit CrossEntropyProblem(Rng& rng) : logits_(randn({4, 5}, rng, 2.0)), labels_(random_labels(4, 5, rng)) {}
  std::vector<Td*> inputs() override { return {&logits_}; }
  double loss() override { return loss::cross_entropy(logits_, std::span<const std::uint32_t>(labels_)).value; }
  std::vector<Td> analytic() override {
    return {loss::cross_entropy(logits_, std::span<const std::uint32_t>(labels_)).grad};
  }

 private:
  Td logits_;
  std::vector<std::uint32_t> labels_;
};

Td random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Td t = randn({rows, cols}, rng);
  for (std::size_t i = 0; i < rows; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < cols; ++j) n += t[i * cols + j] * t[i * cols + j];
    n = std::sqrt(n);
    for (std::size_t j = 0; j < cols; ++j) t[i * cols + j] /= n;
  }
  return t;
}

class ContrastiveProblem : public Problem {
 public:
  ContrastiveProblem(Rng& rng, loss::ContrastVariant variant)
      : variant_(variant), skel_(randn({5, 6}, rng)), text_(random_unit_rows(5, 6, rng)), labels_(mixed_labels(5, 3, rng)) {}
  std::vector<Td*> inputs() override { return {&skel_}; }
  double loss() override {
    return loss::contrastive_feature_loss(skel_, text_, std::span<const std::uint32_t>(labels_), 0.1, variant_).value;
  }
  std::vector<Td> analytic() override {
    return {loss::contrastive_feature_loss(skel_, text_, std::span<const std::uint32_t>(labels_), 0.1, variant_).grad};
  }

 private:
  loss::ContrastVariant variant_;
  Td skel_, text_;
  std::vector<std::uint32_t> labels_;
};

// Multi-slot contrastive term, optionally with cross entropy through the
// total objective.
class ObjectiveProblem : public Problem {
 public:
  ObjectiveProblem(Rng& rng, bool with_ce, loss::ContrastVariant variant) : with_ce_(with_ce), variant_(variant) {
    const std::size_t slots = 3, b = 5, d = 6, c = 4;
    labels_ = mixed_labels(b, c, rng);
    feats_ = randn({slots, b, d}, rng);
    text_ = Td({slots, b, d});
    for (std::size_t s = 0; s < slots; ++s) {
      const Td t = random_unit_rows(b, d, rng);
      std::copy_n(t.data(), t.size(), text_.data() + s * t.size());
    }
    logits_ = randn({b, c}, rng);
  }
  std::vector<Td*> inputs() override {
    if (with_ce_) return {&feats_, &logits_};
    return {&feats_};
  }
  double loss() override {
    std::vector<double> per_slot;
    for (std::size_t s = 0; s < feats_.dim(0); ++s) per_slot.push_back(slot(s).value);
    const double con = loss::multi_part_loss(std::span<const double>(per_slot));
    if (!with_ce_) return con;
    return loss::total_loss(loss::cross_entropy(logits_, std::span<const std::uint32_t>(labels_)).value, con, 0.8);
  }
  std::vector<Td> analytic() override {
    const double scale = (with_ce_ ? 0.8 : 1.0) / static_cast<double>(feats_.dim(0));
    Td g(feats_.shape());
    for (std::size_t s = 0; s < feats_.dim(0); ++s) {
      const auto r = slot(s);
      for (std::size_t i = 0; i < r.grad.size(); ++i) g[s * r.grad.size() + i] = scale * r.grad[i];
    }
    if (!with_ce_) return {g};
    return {g, loss::cross_entropy(logits_, std::span<const std::uint32_t>(labels_)).grad};
  }

 private:
  loss::ValueAndGrad<double> slot(std::size_t s) const {
    return loss::contrastive_feature_loss(slice0(feats_, s), slice0(text_, s), std::span<const std::uint32_t>(labels_),
                                          0.1, variant_);
  }
  bool with_ce_;
  loss::ContrastVariant variant_;
  Td feats_, text_, logits_;
  std::vector<std::uint32_t> labels_;
};

class PartClsProblem : public Problem {
 public:
  explicit PartClsProblem(Rng& rng) : part_logits_(randn({3, 4, 5}, rng, 2.0)), labels_(random_labels(4, 5, rng)) {}
  std::vector<Td*> inputs() override { return {&part_logits_}; }
  double loss() override { return loss::part_cls_loss(part_logits_, std::span<const std::uint32_t>(labels_)).value; }
  std::vector<Td> analytic() override {
    return {loss::part_cls_loss(part_logits_, std::span<const std::uint32_t>(labels_)).grad};
  }

 private:
  Td part_logits_;
  std::vector<std::uint32_t> labels_;
};

// ---- composed encoder -------------------------------------------------------

EncoderConfig toy_encoder(bool part_cls) {
  EncoderConfig c;
  c.channels = {4, 8};
  c.strides = {1, 2};
  c.num_classes = 3;
  c.text_dim = 6;
  c.part_cls_heads = part_cls;
  return c;
}

class ModelProblem : public Problem {
 public:
  ModelProblem(Rng& rng, bool part_cls)
      : part_cls_(part_cls),
        model_(toy_encoder(part_cls), shipped_skeleton("toy10"), build_partition("four_part", shipped_skeleton("toy10"))) {
    std::uniform_int_distribution<std::uint64_t> seed;
    model_.initialize(seed(rng));
    model_.for_each_parameter([&](const std::string& name, Td& v, Td&, bool trainable) {
      // Non-zero biases and norm shifts so every path carries signal.
      if (trainable && (name.find("bias") != std::string::npos || name.find("beta") != std::string::npos))
        v = randn(v.shape(), rng, 0.1);
    });
    x_ = randn({2, 3, 6, 10}, rng);
    labels_ = random_labels(2, 3, rng);
    const std::size_t slots = model_.num_slots(), d = 6;
    text_ = Td({slots, 2, d});
    for (std::size_t s = 0; s < slots; ++s) {
      const Td t = random_unit_rows(2, d, rng);
      std::copy_n(t.data(), t.size(), text_.data() + s * t.size());
    }
  }
  std::vector<Td*> inputs() override {
    std::vector<Td*> v{&x_};
    model_.for_each_parameter([&](const std::string&, Td& value, Td&, bool trainable) {
      if (trainable) v.push_back(&value);
    });
    return v;
  }
  double loss() override { return objective(model_.forward(x_, true), nullptr); }
  std::vector<Td> analytic() override {
    OutputGrads<double> grads;
    objective(model_.forward(x_, true), &grads);
    model_.zero_grad();
    std::vector<Td> out{model_.backward(grads)};
    model_.for_each_parameter([&](const std::string&, Td&, Td& g, bool trainable) {
      if (trainable) out.push_back(g);
    });
    return out;
  }
  double margin() override {
    double m = kInf;
    Td h = x_;
    for (const auto& b : model_.blocks()) {
      Td next;
      m = std::min(m, block_margin(h, model_.adjacency(), b, &next));
      h = std::move(next);
    }
    return m;
  }

 private:
  double objective(const EncoderOutput<double>& out, OutputGrads<double>* grads) const {
    const std::span<const std::uint32_t> labels(labels_);
    auto ce = loss::cross_entropy(out.logits, labels);
    if (grads) grads->logits = ce.grad;
    if (part_cls_) {
      auto pc = loss::part_cls_loss(out.part_logits, labels);
      if (grads) grads->part_logits = pc.grad;
      return ce.value + pc.value;
    }
    const std::size_t slots = out.part_features.dim(0);
    std::vector<double> per_slot;
    if (grads) grads->part_features = Td(out.part_features.shape());
    for (std::size_t s = 0; s < slots; ++s) {
      auto r = loss::contrastive_feature_loss(slice0(out.part_features, s), slice0(text_, s), labels, 0.1,
                                              loss::ContrastVariant::KLD);
      per_slot.push_back(r.value);
      if (grads) {
        for (std::size_t i = 0; i < r.grad.size(); ++i)
          grads->part_features[s * r.grad.size() + i] = 0.8 / static_cast<double>(slots) * r.grad[i];
      }
    }
    return loss::total_loss(ce.value, loss::multi_part_loss(std::span<const double>(per_slot)), 0.8);
  }

  bool part_cls_;
  EncoderModel<double> model_;
  Td x_, text_;
  std::vector<std::uint32_t> labels_;
};

double check_problem(Problem& p, double h, bool corrupt) {
  const auto grads = p.analytic();
  std::vector<double> a, n;
  const auto ins = p.inputs();
  for (std::size_t k = 0; k < ins.size(); ++k) {
    Td& v = *ins[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double fp = p.loss();
      v[i] = orig - h;
      const double fm = p.loss();
      v[i] = orig;
      n.push_back((fp - fm) / (2.0 * h));
      a.push_back(corrupt ? -grads[k][i] : grads[k][i]);
    }
  }
  return relative_error(a, n);
}

GradcheckCase run_case(const std::string& name, const Builder& build, const GradcheckOptions& opt, bool corrupt,
                       std::size_t seeds) {
  GradcheckCase result;
  result.name = name;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(stream_seed(opt.seed, name + "#" + std::to_string(s)));
    std::unique_ptr<Problem> p = build(rng);
    for (std::size_t redraw = 0; p->margin() < kKinkMargin && redraw < kMaxRedraws; ++redraw) {
      p = build(rng);
      ++result.resampled;
    }
    result.max_rel_error = std::max(result.max_rel_error, check_problem(*p, opt.step, corrupt));
    ++result.instances;
  }
  result.passed = result.max_rel_error < opt.tolerance;
  return result;
}

}  // namespace

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!std::isfinite(analytic[i]) || !std::isfinite(numeric[i])) return kInf;
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    na = std::max(na, std::abs(analytic[i]));
    nn = std::max(nn, std::abs(numeric[i]));
  }
  return diff / std::max({na, nn, 1e-12});
}

bool GradcheckReport::passed() const {
  if (cases.empty()) return false;
  return std::all_of(cases.begin(), cases.end(), [](const GradcheckCase& c) { return c.passed; });
}

std::string GradcheckReport::to_text() const {
  std::string out;
  char buf[160];
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof buf, "%-4s %-28s instances=%-3zu redrawn=%-3zu max_rel_err=%.3e%s\n",
                  c.passed ? "ok" : "FAIL", c.name.c_str(), c.instances, c.resampled, c.max_rel_error,
                  c.expect_failure ? " (negative control)" : "");
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%s in %.2f s\n", passed() ? "gradcheck passed" : "gradcheck FAILED", seconds);
  return out + buf;
}

std::string GradcheckReport::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : cases) {
    cs.push_back({{"name", c.name},
                  {"instances", c.instances},
                  {"redrawn", c.resampled},
                  {"max_rel_error", c.max_rel_error},
                  {"passed", c.passed},
                  {"negative_control", c.expect_failure}});
  }
  return nlohmann::json({{"passed", passed()}, {"seconds", seconds}, {"cases", cs}}).dump(2);
}

GradcheckReport gradcheck_suite(const GradcheckOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  using V = loss::ContrastVariant;
  const std::vector<std::pair<std::string, Builder>> cases = {
      {"graph_conv", [](Rng& r) { return std::make_unique<GraphConvProblem>(r); }},
      {"conv1x1", [](Rng& r) { return std::make_unique<Conv1x1Problem>(r); }},
      {"temporal_conv_d1", [](Rng& r) { return std::make_unique<TemporalConvProblem>(r, 1); }},
      {"temporal_conv_d2", [](Rng& r) { return std::make_unique<TemporalConvProblem>(r, 2); }},
      {"temporal_subsample", [](Rng& r) { return std::make_unique<SubsampleProblem>(r); }},
      {"temporal_maxpool", [](Rng& r) { return std::make_unique<MaxPoolProblem>(r); }},
      {"batchnorm", [](Rng& r) { return std::make_unique<BatchNormProblem>(r); }},
      {"mtc_stride1", [](Rng& r) { return std::make_unique<MtcProblem>(r, 1); }},
      {"mtc_stride2", [](Rng& r) { return std::make_unique<MtcProblem>(r, 2); }},
      {"block_identity_residual", [](Rng& r) { return std::make_unique<BlockProblem>(r, 8, 8, 1); }},
      {"block_projected_residual", [](Rng& r) { return std::make_unique<BlockProblem>(r, 4, 8, 2); }},
      {"part_pooling", [](Rng& r) { return std::make_unique<PoolProblem>(r); }},
      {"linear", [](Rng& r) { return std::make_unique<LinearProblem>(r); }},
      {"loss_cross_entropy", [](Rng& r) { return std::make_unique<CrossEntropyProblem>(r); }},
      {"loss_kld", [](Rng& r) { return std::make_unique<ContrastiveProblem>(r, V::KLD); }},
      {"loss_cl", [](Rng& r) { return std::make_unique<ContrastiveProblem>(r, V::CL); }},
      {"loss_jsd", [](Rng& r) { return std::make_unique<ContrastiveProblem>(r, V::JSD); }},
      {"loss_multi_part", [](Rng& r) { return std::make_unique<ObjectiveProblem>(r, false, V::KLD); }},
      {"loss_total", [](Rng& r) { return std::make_unique<ObjectiveProblem>(r, true, V::JSD); }},
      {"loss_part_cls", [](Rng& r) { return std::make_unique<PartClsProblem>(r); }},
      {"encoder_gap_objective", [](Rng& r) { return std::make_unique<ModelProblem>(r, false); }},
      {"encoder_part_cls_objective", [](Rng& r) { return std::make_unique<ModelProblem>(r, true); }},
  };
  GradcheckReport report;
  for (const auto& [name, build] : cases) report.cases.push_back(run_case(name, build, opt, opt.corrupt, opt.seeds));

  // The checker must notice a wrong gradient.
  GradcheckCase control = run_case("negated_gradient_control", cases.front().second, opt, true, 3);
  control.expect_failure = true;
  control.passed = control.max_rel_error >= opt.tolerance;
  report.cases.push_back(control);

  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace gap
