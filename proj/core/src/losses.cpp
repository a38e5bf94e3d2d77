// SPDX-License-Identifier: Apache-2.0
#include "gap/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gap/errors.hpp"

namespace gap::loss {
namespace {

template <typename T>
constexpr double stochastic_tolerance() {
  return sizeof(T) == sizeof(double) ? 1e-9 : 1e-5;
}

template <typename T>
void log_softmax_row(const T* z, std::size_t n, T* out) {
  T mx = z[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, z[j]);
  T sum = 0;
  for (std::size_t j = 0; j < n; ++j) sum += std::exp(z[j] - mx);
  const T lse = mx + std::log(sum);
  for (std::size_t j = 0; j < n; ++j) out[j] = z[j] - lse;
}

template <typename T>
T xlogy_ratio(T a, T b) {  // a * log(a / b) with 0 log 0 = 0
  return a > T(0) ? a * std::log(a / b) : T(0);
}

template <typename T>
T kl_row(const T* y, const T* p, std::size_t n) {
  T acc = 0;
  for (std::size_t j = 0; j < n; ++j) acc += xlogy_ratio(y[j], p[j]);
  return acc;
}

template <typename T>
T js_row(const T* y, const T* p, std::size_t n) {
  T acc = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const T m = (y[j] + p[j]) / T(2);
    acc += T(0.5) * xlogy_ratio(y[j], m) + T(0.5) * xlogy_ratio(p[j], m);
  }
  return acc;
}

template <typename T>
T cl_row(const T* y, const T* p, std::size_t n) {
  T mass = 0;
  for (std::size_t j = 0; j < n; ++j)
    if (y[j] > T(0)) mass += p[j];
  return -std::log(mass);
}

template <typename T>
void check_stochastic(const Tensor<T>& m, const char* what) {
  if (m.rank() != 2) throw ShapeError(std::string(what) + " must be a matrix");
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < m.dim(1); ++j) {
      if (!(m.at(i, j) >= T(0))) throw Error(std::string(what) + " has a negative or non-finite entry");
      sum += m.at(i, j);
    }
    if (std::abs(sum - 1.0) > stochastic_tolerance<T>()) {
      throw Error(std::string(what) + " row " + std::to_string(i) + " sums to " + std::to_string(sum) + ", not 1");
    }
  }
}

template <typename T>
void check_labels(std::span<const std::uint32_t> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) throw ShapeError("label count differs from batch size");
  for (auto l : labels) {
    if (l >= classes) throw Error("label " + std::to_string(l) + " out of range for " + std::to_string(classes) + " classes");
  }
}

// Per-row loss and gradient w.r.t. the pre-softmax logits z given p = softmax(z).
template <typename T>
T row_loss_and_grad(const T* y, const T* p, const T* log_p, std::size_t n, ContrastVariant variant, T* dz) {
  switch (variant) {
    case ContrastVariant::KLD: {
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (y[j] > T(0)) acc += y[j] * (std::log(y[j]) - log_p[j]);
        dz[j] = p[j] - y[j];
      }
      return acc;
    }
    case ContrastVariant::CL: {
      T mass = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (y[j] > T(0)) mass += p[j];
      for (std::size_t j = 0; j < n; ++j) dz[j] = p[j] - (y[j] > T(0) ? p[j] / mass : T(0));
      return -std::log(mass);
    }
    case ContrastVariant::JSD: {
      // dJS/dp_j = 0.5 log(p_j / m_j); chain through the softmax Jacobian.
      T value = js_row(y, p, n);
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T m = (y[j] + p[j]) / T(2);
        dz[j] = p[j] > T(0) ? T(0.5) * (log_p[j] - std::log(m)) : T(0);
        dot += p[j] * dz[j];
      }
      for (std::size_t j = 0; j < n; ++j) dz[j] = p[j] * (dz[j] - dot);
      return value;
    }
  }
  return T(0);
}

}  // namespace

ContrastVariant parse_variant(std::string_view name) {
  if (name == "kld" || name == "KLD") return ContrastVariant::KLD;
  if (name == "cl" || name == "CL") return ContrastVariant::CL;
  if (name == "jsd" || name == "JSD") return ContrastVariant::JSD;
  throw ConfigError("unknown loss.variant '" + std::string(name) + "' (expected kld, cl or jsd)");
}

std::string_view to_string(ContrastVariant variant) {
  switch (variant) {
    case ContrastVariant::KLD: return "kld";
    case ContrastVariant::CL: return "cl";
    case ContrastVariant::JSD: return "jsd";
  }
  return "unknown";
}

template <typename T>
ValueAndGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint32_t> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy logits must be [B, C]");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (classes < 2) throw ShapeError("cross_entropy needs at least two classes");
  check_labels<T>(labels, batch, classes);
  ValueAndGrad<T> out{T(0), Tensor<T>(logits.shape())};
  std::vector<T> log_p(classes);
  const T inv_batch = T(1) / static_cast<T>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    log_softmax_row(logits.data() + i * classes, classes, log_p.data());
    out.value -= log_p[labels[i]];
    for (std::size_t j = 0; j < classes; ++j) {
      out.grad.at(i, j) = (std::exp(log_p[j]) - (j == labels[i] ? T(1) : T(0))) * inv_batch;
    }
  }
  out.value *= inv_batch;
  return out;
}

namespace {

template <typename T>
Tensor<T> unit_rows(const Tensor<T>& x, std::vector<T>* norms, const char* what) {
  Tensor<T> out(x.shape());
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (norms) norms->assign(rows, T(0));
  for (std::size_t i = 0; i < rows; ++i) {
    T sq = 0;
    for (std::size_t j = 0; j < cols; ++j) sq += x.at(i, j) * x.at(i, j);
    const T norm = std::sqrt(sq);
    if (!(norm > T(0)) || !std::isfinite(norm)) {
      throw DegenerateFeatureError(std::string(what) + " row " + std::to_string(i) + " has zero or non-finite norm");
    }
    if (norms) (*norms)[i] = norm;
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = x.at(i, j) / norm;
  }
  return out;
}

template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& s_unit, const Tensor<T>& t_unit) {
  const std::size_t b = s_unit.dim(0), d = s_unit.dim(1);
  Tensor<T> sim({b, b});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < d; ++k) acc += s_unit.at(i, k) * t_unit.at(j, k);
      sim.at(i, j) = acc;
    }
  return sim;
}

template <typename T>
void check_pair(const Tensor<T>& skeleton, const Tensor<T>& text, T tau) {
  if (skeleton.rank() != 2 || skeleton.shape() != text.shape() || skeleton.dim(0) == 0) {
    throw ShapeError("contrastive features must be matching non-empty [B, D] matrices, got " +
                     shape_to_string(skeleton.shape()) + " and " + shape_to_string(text.shape()));
  }
  if (!(tau > T(0))) throw ConfigError("loss.tau must be positive");
}

}  // namespace

template <typename T>
SimilarityDistributions<T> similarity_distributions(const Tensor<T>& skeleton, const Tensor<T>& text, T tau) {
  check_pair(skeleton, text, tau);
  const Tensor<T> sim = cosine_matrix(unit_rows<T>(skeleton, nullptr, "skeleton feature"),
                                      unit_rows<T>(text, nullptr, "text feature"));
  const std::size_t b = sim.dim(0);
  SimilarityDistributions<T> out{Tensor<T>({b, b}), Tensor<T>({b, b})};
  std::vector<T> z(b), lp(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) z[j] = sim.at(i, j) / tau;
    log_softmax_row(z.data(), b, lp.data());
    for (std::size_t j = 0; j < b; ++j) out.s2t.at(i, j) = std::exp(lp[j]);
    for (std::size_t j = 0; j < b; ++j) z[j] = sim.at(j, i) / tau;
    log_softmax_row(z.data(), b, lp.data());
    for (std::size_t j = 0; j < b; ++j) out.t2s.at(i, j) = std::exp(lp[j]);
  }
  return out;
}

template <typename T>
Tensor<T> build_targets(std::span<const std::uint32_t> labels) {
  const std::size_t b = labels.size();
  Tensor<T> y({b, b});
  for (std::size_t i = 0; i < b; ++i) {
    const auto count = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), labels[i]));
    for (std::size_t j = 0; j < b; ++j) {
      if (labels[j] == labels[i]) y.at(i, j) = T(1) / static_cast<T>(count);
    }
  }
  return y;
}

template <typename T>
T contrastive_loss(const Tensor<T>& p_s2t, const Tensor<T>& p_t2s, const Tensor<T>& targets, ContrastVariant variant) {
  check_stochastic(p_s2t, "p_s2t");
  check_stochastic(p_t2s, "p_t2s");
  check_stochastic(targets, "targets");
  if (p_s2t.shape() != targets.shape() || p_t2s.shape() != targets.shape()) {
    throw ShapeError("similarity distributions and targets differ in shape");
  }
  const std::size_t b = targets.dim(0), n = targets.dim(1);
  T acc = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* y = targets.data() + i * n;
    for (const Tensor<T>* p : {&p_s2t, &p_t2s}) {
      const T* row = p->data() + i * n;
      switch (variant) {
        case ContrastVariant::KLD: acc += kl_row(y, row, n); break;
        case ContrastVariant::CL: acc += cl_row(y, row, n); break;
        case ContrastVariant::JSD: acc += js_row(y, row, n); break;
      }
    }
  }
  return acc / (T(2) * static_cast<T>(b));
}

template <typename T>
ValueAndGrad<T> contrastive_feature_loss(const Tensor<T>& skeleton, const Tensor<T>& text,
                                         std::span<const std::uint32_t> labels, T tau, ContrastVariant variant) {
  check_pair(skeleton, text, tau);
  const std::size_t b = skeleton.dim(0), d = skeleton.dim(1);
  if (labels.size() != b) throw ShapeError("label count differs from contrastive batch");
  std::vector<T> norms;
  const Tensor<T> s_unit = unit_rows(skeleton, &norms, "skeleton feature");
  const Tensor<T> t_unit = unit_rows<T>(text, nullptr, "text feature");
  const Tensor<T> sim = cosine_matrix(s_unit, t_unit);
  const Tensor<T> y = build_targets<T>(labels);

  Tensor<T> dsim({b, b});
  std::vector<T> z(b), lp(b), p(b), dz(b);
  T total = 0;
  const T scale = T(1) / (T(2) * static_cast<T>(b));
  for (std::size_t i = 0; i < b; ++i) {
    const T* yi = y.data() + i * b;
    // skeleton -> text: row i of sim
    for (std::size_t j = 0; j < b; ++j) z[j] = sim.at(i, j) / tau;
    log_softmax_row(z.data(), b, lp.data());
    for (std::size_t j = 0; j < b; ++j) p[j] = std::exp(lp[j]);
    total += row_loss_and_grad(yi, p.data(), lp.data(), b, variant, dz.data());
    for (std::size_t j = 0; j < b; ++j) dsim.at(i, j) += dz[j] * scale / tau;
    // text -> skeleton: column i of sim
    for (std::size_t j = 0; j < b; ++j) z[j] = sim.at(j, i) / tau;
    log_softmax_row(z.data(), b, lp.data());
    for (std::size_t j = 0; j < b; ++j) p[j] = std::exp(lp[j]);
    total += row_loss_and_grad(yi, p.data(), lp.data(), b, variant, dz.data());
    for (std::size_t j = 0; j < b; ++j) dsim.at(j, i) += dz[j] * scale / tau;
  }

  ValueAndGrad<T> out{total * scale, Tensor<T>({b, d})};
  std::vector<T> du(d);
  for (std::size_t i = 0; i < b; ++i) {
    std::fill(du.begin(), du.end(), T(0));
    for (std::size_t j = 0; j < b; ++j) {
      const T g = dsim.at(i, j);
      for (std::size_t k = 0; k < d; ++k) du[k] += g * t_unit.at(j, k);
    }
    T radial = 0;
    for (std::size_t k = 0; k < d; ++k) radial += du[k] * s_unit.at(i, k);
    for (std::size_t k = 0; k < d; ++k) out.grad.at(i, k) = (du[k] - s_unit.at(i, k) * radial) / norms[i];
  }
  return out;
}

template <typename T>
T multi_part_loss(std::span<const T> slot_losses) {
  if (slot_losses.empty()) throw Error("multi_part_loss needs at least one slot loss");
  T acc = 0;
  for (T v : slot_losses) acc += v;
  return acc / static_cast<T>(slot_losses.size());
}

template <typename T>
T total_loss(T classification, T contrastive, T lambda) {
  if (lambda < T(0)) throw ConfigError("loss.lambda must be non-negative");
  return classification + lambda * contrastive;
}

template <typename T>
ValueAndGrad<T> part_cls_loss(const Tensor<T>& part_logits, std::span<const std::uint32_t> labels) {
  if (part_logits.rank() != 3 || part_logits.dim(0) == 0) throw ShapeError("part logits must be [K, B, C]");
  const std::size_t parts = part_logits.dim(0), b = part_logits.dim(1), c = part_logits.dim(2);
  ValueAndGrad<T> out{T(0), Tensor<T>(part_logits.shape())};
  for (std::size_t k = 0; k < parts; ++k) {
    Tensor<T> slice({b, c});
    std::copy_n(part_logits.data() + k * b * c, b * c, slice.data());
    const auto ce = cross_entropy(slice, labels);
    out.value += ce.value;
    for (std::size_t i = 0; i < b * c; ++i) out.grad[k * b * c + i] = ce.grad[i] / static_cast<T>(parts);
  }
  out.value /= static_cast<T>(parts);
  return out;
}

template <typename T>
T part_cls_baseline_loss(const Tensor<T>& logits, const Tensor<T>& part_logits, std::span<const std::uint32_t> labels) {
  return cross_entropy(logits, labels).value + part_cls_loss(part_logits, labels).value;
}

#define GAP_INSTANTIATE_LOSSES(T)                                                                               \
  template ValueAndGrad<T> cross_entropy(const Tensor<T>&, std::span<const std::uint32_t>);                    \
  template SimilarityDistributions<T> similarity_distributions(const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> build_targets(std::span<const std::uint32_t>);                                            \
  template T contrastive_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ContrastVariant);          \
  template ValueAndGrad<T> contrastive_feature_loss(const Tensor<T>&, const Tensor<T>&,                        \
                                                    std::span<const std::uint32_t>, T, ContrastVariant);       \
  template T multi_part_loss(std::span<const T>);                                                              \
  template T total_loss(T, T, T);                                                                              \
  template ValueAndGrad<T> part_cls_loss(const Tensor<T>&, std::span<const std::uint32_t>);                    \
  template T part_cls_baseline_loss(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint32_t>);

GAP_INSTANTIATE_LOSSES(float)
GAP_INSTANTIATE_LOSSES(double)

#undef GAP_INSTANTIATE_LOSSES

}  // namespace gap::loss
