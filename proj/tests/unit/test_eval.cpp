// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "gap/errors.hpp"
#include "gap/eval.hpp"
#include "gap/synthetic.hpp"
#include "gap/train.hpp"
#include "support.hpp"

namespace gap {
namespace {

ScoreTable table(std::size_t c, std::vector<double> scores, std::vector<std::uint32_t> labels,
                 std::string modality = "joint") {
  ScoreTable t;
  t.scores = Tensor<double>({labels.size(), c}, std::move(scores));
  t.labels = std::move(labels);
  t.modality = std::move(modality);
  return t;
}

ScoreTable random_table(std::size_t s, std::size_t c, std::mt19937_64& rng) {
  ScoreTable t;
  t.scores = testing::random_tensor<double>({s, c}, rng);
  for (std::size_t i = 0; i < s; ++i) t.labels.push_back(static_cast<std::uint32_t>(rng() % c));
  return t;
}

TEST(Top1, Examples) {
  EXPECT_EQ(top1_accuracy(table(2, {1, 0, 0, 1}, {0, 1})), 1.0);
  EXPECT_EQ(top1_accuracy(table(2, {1, 0, 0, 1}, {1, 0})), 0.0);
  EXPECT_NEAR(top1_accuracy(table(2, {1, 0, 0, 1, 3, 2}, {0, 1, 1})), 2.0 / 3.0, 1e-15);
}

TEST(Top1, TiesGoToLowestIndex) {
  const double row[4] = {0.5, 2.0, 2.0, -1.0};
  EXPECT_EQ(argmax_row(row, 4), 1u);
  EXPECT_EQ(top1_accuracy(table(3, {1, 1, 1}, {0})), 1.0);
  EXPECT_EQ(top1_accuracy(table(3, {1, 1, 1}, {2})), 0.0);
}

TEST(ScoreTableTest, Validation) {
  EXPECT_THROW(table(2, {1, 0}, {2}).validate(), ConfigError);
  auto t = table(2, {1, 0}, {0});
  t.scores[0] = std::nan("");
  EXPECT_THROW(t.validate(), ConfigError);
  t = table(2, {1, 0}, {0});
  t.labels.push_back(1);
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Ensemble, SingleTableIdentity) {
  std::mt19937_64 rng(1);
  auto t = random_table(10, 4, rng);
  auto f = ensemble_fuse({t}, {1.0});
  EXPECT_EQ(f.scores.storage(), t.scores.storage());
  EXPECT_EQ(f.labels, t.labels);
  EXPECT_EQ(f.modality, "ensemble");
}

TEST(Ensemble, IdenticalTablesKeepArgmax) {
  std::mt19937_64 rng(2);
  auto t = random_table(30, 5, rng);
  for (auto w : {std::vector<double>{1, 1}, {0.2, 3.0}, {5.0, 0.01}}) {
    auto f = ensemble_fuse({t, t}, w);
    for (std::size_t i = 0; i < 30; ++i)
      EXPECT_EQ(argmax_row(f.scores.data() + i * 5, 5), argmax_row(t.scores.data() + i * 5, 5));
  }
}

TEST(Ensemble, ComplementaryErrorsFixture) {
  // Labels 0,1,0,1. Table a is right on samples 0 and 1 only, b on 2 and 3 only.
  auto a = table(2, {3, 0, 0, 3, 0, 1, 1, 0}, {0, 1, 0, 1});
  auto b = table(2, {0, 1, 1, 0, 3, 0, 0, 3}, {0, 1, 0, 1});
  EXPECT_EQ(top1_accuracy(a), 0.5);
  EXPECT_EQ(top1_accuracy(b), 0.5);
  // Fused rows: [3,1] [1,3] [3,1] [1,3], all correct.
  auto f = ensemble_fuse({a, b});
  EXPECT_EQ(f.scores.storage(), (std::vector<double>{3, 1, 1, 3, 3, 1, 1, 3}));
  EXPECT_EQ(top1_accuracy(f), 1.0);
}

TEST(Ensemble, WeightPropertiesOnRandomTables) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto t0 = random_table(25, 4, rng);
    std::vector<ScoreTable> ts{t0};
    for (int k = 0; k < 3; ++k) {
      auto t = random_table(25, 4, rng);
      t.labels = t0.labels;
      ts.push_back(t);
    }
    EXPECT_EQ(top1_accuracy(ensemble_fuse(ts, {1, 0, 0, 0})), top1_accuracy(t0));
    std::vector<double> w{0.3, 1.2, 0.7, 2.0}, w2 = w;
    for (auto& x : w2) x *= 4.5;
    auto a = ensemble_fuse(ts, w), b = ensemble_fuse(ts, w2);
    for (std::size_t i = 0; i < 25; ++i)
      EXPECT_EQ(argmax_row(a.scores.data() + i * 4, 4), argmax_row(b.scores.data() + i * 4, 4));
  }
}

TEST(Ensemble, SoftmaxFusion) {
  auto a = table(2, {0, 0}, {0});
  auto f = ensemble_fuse({a, a}, {}, true);
  EXPECT_NEAR(f.scores[0], 1.0, 1e-15);
  EXPECT_NEAR(f.scores[1], 1.0, 1e-15);
}

TEST(Ensemble, Errors) {
  auto a = table(2, {1, 0, 0, 1}, {0, 1});
  auto other_labels = table(2, {1, 0, 0, 1}, {1, 1});
  auto other_shape = table(3, {1, 0, 0, 0, 1, 0}, {0, 1});
  EXPECT_THROW(ensemble_fuse({}), ConfigError);
  EXPECT_THROW(ensemble_fuse({a, other_labels}), ConfigError);
  EXPECT_THROW(ensemble_fuse({a, other_shape}), ConfigError);
  EXPECT_THROW(ensemble_fuse({a, a}, {1.0}), ConfigError);
  EXPECT_THROW(ensemble_fuse({a, a}, {0.0, 0.0}), ConfigError);
  EXPECT_THROW(ensemble_fuse({a, a}, {1.0, -1.0}), ConfigError);
}

TEST(PerClass, AccuracyAndDiff) {
  auto a = table(2, {1, 0, 1, 0, 1, 0, 1, 0}, {0, 0, 1, 1});
  auto b = table(2, {1, 0, 0, 1, 0, 1, 0, 1}, {0, 0, 1, 1});
  EXPECT_EQ(per_class_accuracy(a), (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(per_class_accuracy(b), (std::vector<double>{0.5, 1.0}));
  EXPECT_TRUE(per_class_diff(a, a).empty());
  auto d = per_class_diff(a, b);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].class_id, 0u);
  EXPECT_EQ(d[1].class_id, 1u);
  EXPECT_EQ(d[1].acc_b, 1.0);
}

TEST(PerClass, ThresholdZeroIncludesAnyDifference) {
  std::vector<double> sa, sb;
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 100; ++i) {
    labels.push_back(0);
    sa.insert(sa.end(), {1, 0});
    sb.insert(sb.end(), {i == 0 ? 0.0 : 1.0, i == 0 ? 1.0 : 0.0});
  }
  auto a = table(2, sa, labels), b = table(2, sb, labels);
  EXPECT_TRUE(per_class_diff(a, b).empty());
  EXPECT_EQ(per_class_diff(a, b, 0.0).size(), 1u);
}

TEST(ScoresCsv, RoundTrip) {
  testing::TempDir dir;
  std::mt19937_64 rng(4);
  auto t = random_table(12, 3, rng);
  t.modality = "bone_motion";
  save_scores_csv(t, dir / "s.csv");
  auto back = load_scores_csv(dir / "s.csv");
  EXPECT_EQ(back.scores.storage(), t.scores.storage());
  EXPECT_EQ(back.labels, t.labels);
  EXPECT_EQ(back.modality, "bone_motion");
  std::ofstream(dir / "bad.csv") << "s0,s1,label,modality\n1.0,oops,0,joint\n";
  EXPECT_THROW(load_scores_csv(dir / "bad.csv"), FormatError);
}

TEST(TextSimilarity, IdenticalDescriptionsAllOnes) {
  TextFeatureBank bank(16, 3, 1);
  auto v = hashed_embed("same words", 16);
  for (std::size_t c = 0; c < 3; ++c) bank.add(c, 0, v);
  for (const auto& row : text_similarity_matrix(bank, 0))
    for (double x : row) EXPECT_NEAR(x, 1.0, 1e-6);
}

TEST(TextSimilarity, SymmetricUnitDiagonal) {
  auto data = generate_synthetic(testing::small_spec());
  auto p = build_partition("four_part", shipped_skeleton("toy10"));
  auto bank = build_bank(data.corpus, p, PromptType::SynonymPlusParts, HashedEmbedder(64));
  for (std::size_t slot = 0; slot < bank.num_slots(); ++slot) {
    auto m = text_similarity_matrix(bank, slot);
    ASSERT_EQ(m.size(), bank.num_classes());
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_NEAR(m[i][i], 1.0, 1e-6);
      for (std::size_t j = 0; j < m.size(); ++j) {
        EXPECT_NEAR(m[i][j], m[j][i], 1e-12);
        EXPECT_GE(m[i][j], -1.0);
        EXPECT_LE(m[i][j], 1.0);
      }
    }
  }
  EXPECT_THROW(text_similarity_matrix(bank, bank.num_slots()), LookupError);

  testing::TempDir dir;
  save_similarity_csv(text_similarity_matrix(bank, 1), data.train.class_names, dir / "sim.csv");
  std::ifstream in(dir / "sim.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_NE(header.find("hand wave"), std::string::npos);
}

TEST(ScoreBatch, MatchesEvaluateAccuracyAndChunking) {
  auto data = generate_synthetic(testing::small_spec());
  auto model = train(data.train, nullptr, nullptr, testing::quick_config(TrainMode::Baseline), nullptr);
  auto a = predict_logits(model, data.test, 64);
  auto b = predict_logits(model, data.test, 5);
  EXPECT_EQ(a.storage(), b.storage());
  auto t = score_batch(model, data.test);
  EXPECT_EQ(t.labels, data.test.labels);
  EXPECT_EQ(top1_accuracy(t), evaluate_accuracy(model, data.test));
}

}  // namespace
}  // namespace gap
