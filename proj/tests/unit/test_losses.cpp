// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "gap/errors.hpp"
#include "gap/losses.hpp"
#include "support.hpp"

namespace gap::loss {
namespace {

using Td = Tensor<double>;
using Labels = std::vector<std::uint32_t>;
using testing::random_tensor;
constexpr auto kVariants = {ContrastVariant::KLD, ContrastVariant::CL, ContrastVariant::JSD};
const double kLn2 = std::numbers::ln2;

Td random_stochastic(std::size_t b, std::mt19937_64& rng) {
  Td p({b, b});
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < b; ++j) s += p.at(i, j) = u(rng);
    for (std::size_t j = 0; j < b; ++j) p.at(i, j) /= s;
  }
  return p;
}

Labels random_labels(std::size_t b, std::uint32_t classes, std::mt19937_64& rng) {
  Labels l(b);
  for (auto& x : l) x = static_cast<std::uint32_t>(rng() % classes);
  return l;
}

TEST(CrossEntropy, UniformLogits) {
  Td logits({3, 4}, 0.7);
  Labels l{0, 3, 2};
  EXPECT_NEAR(cross_entropy(logits, l).value, std::log(4.0), 1e-12);
}

TEST(CrossEntropy, ClosedFormExample) {
  Td logits({1, 2}, std::vector<double>{2, 0});
  Labels l{0};
  EXPECT_NEAR(cross_entropy(logits, l).value, -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0)), 1e-12);
  EXPECT_NEAR(cross_entropy(logits, l).value, 0.1269, 5e-5);
}

TEST(CrossEntropy, MarginLimit) {
  Labels l{1};
  double prev = 1e9;
  for (double m : {1.0, 5.0, 20.0, 100.0}) {
    Td logits({1, 3}, std::vector<double>{0, m, 0});
    const double v = cross_entropy(logits, l).value;
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(prev, 1e-30);
}

TEST(CrossEntropy, LargeLogitsStable) {
  Td logits({1, 2}, std::vector<double>{1000, 0});
  Labels l{1};
  EXPECT_NEAR(cross_entropy(logits, l).value, 1000.0, 1e-9);
}

TEST(CrossEntropy, GradientRowsSumToZero) {
  std::mt19937_64 rng(4);
  auto logits = random_tensor<double>({5, 6}, rng, 2.0);
  auto r = cross_entropy(logits, random_labels(5, 6, rng));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += r.grad.at(i, j);
    EXPECT_NEAR(s, 0.0, 1e-14);
  }
}

TEST(CrossEntropy, Errors) {
  Td logits({2, 3});
  EXPECT_THROW(cross_entropy(logits, Labels{0, 3}), Error);
  EXPECT_THROW(cross_entropy(logits, Labels{0}), ShapeError);
  EXPECT_THROW(cross_entropy(Td({2, 1}), Labels{0, 0}), ShapeError);
}

TEST(Similarity, SingleElement) {
  std::mt19937_64 rng(1);
  auto d = similarity_distributions(random_tensor<double>({1, 5}, rng), random_tensor<double>({1, 5}, rng), 0.1);
  EXPECT_EQ(d.s2t[0], 1.0);
  EXPECT_EQ(d.t2s[0], 1.0);
}

TEST(Similarity, ParallelAndOrthogonal) {
  Td s({2, 2}, std::vector<double>{1, 0, 0, 1});
  Td t({2, 2}, std::vector<double>{3, 0, 0, 2});
  auto d = similarity_distributions(s, t, 0.1);
  EXPECT_NEAR(d.s2t.at(0, 0), 0.9999546, 1e-7);
  EXPECT_NEAR(d.s2t.at(0, 1), 4.54e-5, 1e-7);
  EXPECT_NEAR(d.s2t.at(0, 1), 1.0 / (1.0 + std::exp(10.0)), 1e-15);
}

TEST(Similarity, IdenticalFeaturesUniform) {
  Td s({4, 3}, 1.0);
  auto d = similarity_distributions(s, s, 0.1);
  for (double v : d.s2t.values()) EXPECT_NEAR(v, 0.25, 1e-15);
  for (double v : d.t2s.values()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Similarity, TransposedDirections) {
  std::mt19937_64 rng(8);
  auto s = random_tensor<double>({4, 6}, rng), t = random_tensor<double>({4, 6}, rng);
  auto a = similarity_distributions(s, t, 0.2);
  auto b = similarity_distributions(t, s, 0.2);
  for (std::size_t i = 0; i < a.s2t.size(); ++i) {
    EXPECT_NEAR(a.s2t[i], b.t2s[i], 1e-15);
    EXPECT_NEAR(a.t2s[i], b.s2t[i], 1e-15);
  }
}

TEST(Similarity, Errors) {
  Td s({2, 2}, std::vector<double>{1, 0, 0, 0});
  Td t({2, 2}, 1.0);
  EXPECT_THROW(similarity_distributions(s, t, 0.1), DegenerateFeatureError);
  EXPECT_THROW(similarity_distributions(t, t, 0.0), ConfigError);
  EXPECT_THROW(similarity_distributions(t, Td({3, 2}, 1.0), 0.1), ShapeError);
}

TEST(Targets, Examples) {
  auto id = build_targets<double>(Labels{0, 1, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(id.at(i, j), i == j ? 1.0 : 0.0);
  auto y = build_targets<double>(Labels{4, 4, 7});
  EXPECT_EQ(y.storage(), (std::vector<double>{.5, .5, 0, .5, .5, 0, 0, 0, 1}));
  auto all = build_targets<double>(Labels{2, 2, 2, 2});
  for (double v : all.values()) EXPECT_EQ(v, 0.25);
}

TEST(Targets, SymmetricStochasticSupport) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng() % 12;
    auto l = random_labels(b, 4, rng);
    auto y = build_targets<double>(l);
    for (std::size_t i = 0; i < b; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < b; ++j) {
        s += y.at(i, j);
        EXPECT_EQ(y.at(i, j), y.at(j, i));
        EXPECT_EQ(y.at(i, j) > 0, l[i] == l[j]);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Contrastive, ZeroWhenPredictionsMatchTargets) {
  auto y = build_targets<double>(Labels{0, 1, 1, 2});
  EXPECT_NEAR(contrastive_loss(y, y, y, ContrastVariant::KLD), 0.0, 1e-15);
  EXPECT_NEAR(contrastive_loss(y, y, y, ContrastVariant::JSD), 0.0, 1e-15);
  EXPECT_NEAR(contrastive_loss(y, y, y, ContrastVariant::CL), 0.0, 1e-15);
}

TEST(Contrastive, KldHalfHalf) {
  Td y({1, 2}, std::vector<double>{1, 0});
  Td p({1, 2}, std::vector<double>{0.5, 0.5});
  EXPECT_NEAR(contrastive_loss(p, p, y, ContrastVariant::KLD), kLn2, 1e-12);
  EXPECT_NEAR(contrastive_loss(p, p, y, ContrastVariant::CL), kLn2, 1e-12);
}

TEST(Contrastive, JsdDisjointPointMasses) {
  Td y({1, 2}, std::vector<double>{1, 0});
  Td p({1, 2}, std::vector<double>{0, 1});
  EXPECT_NEAR(contrastive_loss(p, p, y, ContrastVariant::JSD), kLn2, 1e-12);
}

TEST(Contrastive, DivergenceProperties) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + rng() % 8;
    auto y = build_targets<double>(random_labels(b, 3, rng));
    auto p = random_stochastic(b, rng), q = random_stochastic(b, rng);
    const double kld = contrastive_loss(p, q, y, ContrastVariant::KLD);
    const double jsd = contrastive_loss(p, q, y, ContrastVariant::JSD);
    const double cl = contrastive_loss(p, q, y, ContrastVariant::CL);
    EXPECT_GT(kld, 0.0);
    EXPECT_GT(jsd, 0.0);
    EXPECT_GE(cl, -1e-15);
    EXPECT_LE(jsd, kLn2 + 1e-12);
    // JS is symmetric in its two arguments.
    EXPECT_NEAR(contrastive_loss(p, p, q, ContrastVariant::JSD), contrastive_loss(q, q, p, ContrastVariant::JSD),
                1e-12);
    // Each direction contributes half.
    EXPECT_NEAR(kld, 0.5 * (contrastive_loss(p, p, y, ContrastVariant::KLD) +
                            contrastive_loss(q, q, y, ContrastVariant::KLD)),
                1e-12);
  }
}

TEST(Contrastive, NonStochasticRowsRejected) {
  Td y({1, 2}, std::vector<double>{1, 0});
  Td bad({1, 2}, std::vector<double>{0.7, 0.7});
  EXPECT_THROW(contrastive_loss(bad, y, y, ContrastVariant::KLD), Error);
  EXPECT_THROW(contrastive_loss(y, y, bad, ContrastVariant::KLD), Error);
  EXPECT_THROW(contrastive_loss(y, y, Td({2, 2}, 0.5), ContrastVariant::KLD), ShapeError);
}

TEST(Contrastive, VariantNames) {
  for (auto v : kVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_EQ(parse_variant("kld"), ContrastVariant::KLD);
  EXPECT_THROW(parse_variant("mse"), ConfigError);
}

TEST(FeatureLoss, MatchesComposition) {
  std::mt19937_64 rng(31);
  auto s = random_tensor<double>({6, 8}, rng), t = random_tensor<double>({6, 8}, rng);
  Labels l{0, 1, 0, 2, 1, 1};
  auto y = build_targets<double>(l);
  auto d = similarity_distributions(s, t, 0.1);
  for (auto v : kVariants) {
    EXPECT_NEAR(contrastive_feature_loss(s, t, l, 0.1, v).value, contrastive_loss(d.s2t, d.t2s, y, v), 1e-12);
  }
}

TEST(FeatureLoss, ScaleInvariant) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_tensor<double>({5, 7}, rng), t = random_tensor<double>({5, 7}, rng);
    auto l = random_labels(5, 3, rng);
    const double k = 0.01 + 50.0 * std::uniform_real_distribution<double>()(rng);
    Td s2 = s, t2 = t;
    for (auto& x : s2.values()) x *= k;
    for (auto& x : t2.values()) x *= k;
    for (auto v : kVariants) {
      EXPECT_NEAR(contrastive_feature_loss(s, t, l, 0.1, v).value, contrastive_feature_loss(s2, t2, l, 0.1, v).value,
                  1e-10);
    }
  }
}

TEST(FeatureLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(33);
  auto s = random_tensor<double>({6, 5}, rng), t = random_tensor<double>({6, 5}, rng);
  Labels l{0, 1, 1, 2, 0, 2};
  const double h = 1e-6;
  for (auto v : kVariants) {
    auto r = contrastive_feature_loss(s, t, l, 0.1, v);
    double max_err = 0.0, max_g = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      Td sp = s, sm = s;
      sp[i] += h;
      sm[i] -= h;
      const double fd = (contrastive_feature_loss(sp, t, l, 0.1, v).value -
                         contrastive_feature_loss(sm, t, l, 0.1, v).value) / (2 * h);
      max_err = std::max(max_err, std::abs(fd - r.grad[i]));
      max_g = std::max({max_g, std::abs(fd), std::abs(r.grad[i])});
    }
    EXPECT_LT(max_err / max_g, 1e-5) << to_string(v);
  }
}

TEST(MultiPart, Examples) {
  std::vector<double> same{0.3, 0.3, 0.3};
  EXPECT_NEAR(multi_part_loss<double>(same), 0.3, 1e-15);
  std::vector<double> two{0, 2};
  EXPECT_EQ(multi_part_loss<double>(two), 1.0);
  std::vector<double> one{0.77};
  EXPECT_EQ(multi_part_loss<double>(one), 0.77);
  EXPECT_THROW(multi_part_loss<double>(std::span<const double>{}), Error);
}

TEST(Total, Examples) {
  EXPECT_EQ(total_loss(1.3, 9.0, 0.0), 1.3);
  EXPECT_NEAR(total_loss(1.0, 0.5, 0.8), 1.4, 1e-15);
  EXPECT_THROW(total_loss(1.0, 0.5, -0.1), ConfigError);
}

TEST(PartCls, SinglePartEqualsGlobal) {
  std::mt19937_64 rng(41);
  auto logits = random_tensor<double>({4, 3}, rng);
  Labels l{0, 2, 1, 1};
  Td parts = logits;
  parts.reshape({1, 4, 3});
  EXPECT_NEAR(part_cls_baseline_loss(logits, parts, l), 2.0 * cross_entropy(logits, l).value, 1e-12);
}

TEST(PartCls, UniformParts) {
  Td parts({4, 3, 4}, -1.5);
  Labels l{0, 3, 1};
  EXPECT_NEAR(part_cls_loss(parts, l).value, std::log(4.0), 1e-12);
}

TEST(PartCls, NaiveOracle) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t K = 1 + rng() % 5, B = 1 + rng() % 6, C = 2 + rng() % 4;
    auto parts = random_tensor<double>({K, B, C}, rng, 3.0);
    auto l = random_labels(B, static_cast<std::uint32_t>(C), rng);
    double oracle = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t b = 0; b < B; ++b) {
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(parts.at(k, b, c));
        oracle += -(parts.at(k, b, l[b]) - std::log(z));
      }
    oracle /= double(K * B);
    EXPECT_NEAR(part_cls_loss(parts, l).value, oracle, 1e-12);
  }
  EXPECT_THROW(part_cls_loss(Td({4, 3}), Labels{0, 1, 2, 0}), ShapeError);
}

}  // namespace
}  // namespace gap::loss
