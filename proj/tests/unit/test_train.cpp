// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "gap/errors.hpp"
#include "gap/gradcheck.hpp"
#include "gap/synthetic.hpp"
#include "gap/textbank.hpp"
#include "gap/train.hpp"
#include "support.hpp"

namespace gap {
namespace {

using testing::quick_config;
using testing::small_spec;

struct Fixture {
  SyntheticDataset data;
  TextFeatureBank bank;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    auto data = generate_synthetic(small_spec());
    auto p = build_partition("four_part", shipped_skeleton("toy10"));
    auto bank = build_bank(data.corpus, p, PromptType::SynonymPlusParts, HashedEmbedder(32));
    return Fixture{std::move(data), std::move(bank)};
  }();
  return f;
}

std::vector<float> flat_weights(const EncoderModel<float>& m) {
  std::vector<float> out;
  m.for_each_parameter([&](const std::string&, const Tensor<float>& v, const Tensor<float>&, bool) {
    out.insert(out.end(), v.values().begin(), v.values().end());
  });
  return out;
}

TEST(LrSchedule, Examples) {
  auto c = TrainConfig::large_preset();
  EXPECT_DOUBLE_EQ(lr_at(0, c), 0.02);
  EXPECT_DOUBLE_EQ(lr_at(5, c), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(90, c), 0.01);
}

TEST(LrSchedule, LargePresetTable) {
  auto c = TrainConfig::large_preset();
  ASSERT_EQ(c.epochs, 110u);
  for (std::size_t e = 0; e < c.epochs; ++e) {
    double expect;
    if (e < 5) expect = 0.1 * double(e + 1) / 5.0;
    else if (e < 90) expect = 0.1;
    else if (e < 100) expect = 0.01;
    else expect = 0.001;
    EXPECT_NEAR(lr_at(e, c), expect, 1e-15) << "epoch " << e;
  }
}

TEST(LrSchedule, DeskPreset) {
  auto c = TrainConfig::desk_preset();
  EXPECT_EQ(c.epochs, 30u);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_DOUBLE_EQ(lr_at(19, c), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(20, c), 0.01);
  EXPECT_NEAR(lr_at(29, c), 0.001, 1e-15);
}

TEST(Sgd, VanillaStep) {
  std::vector<double> w{1.0, -2.0}, g{0.5, 0.25}, v{0, 0};
  sgd_update<double>(w, g, v, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(w[0], 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(w[1], -2.0 - 0.025);
}

TEST(Sgd, DecayOnly) {
  std::vector<double> w{3.0}, g{0.0}, v{0.0};
  sgd_update<double>(w, g, v, 0.1, 0.0, 5e-4);
  EXPECT_NEAR(w[0], 3.0 * (1.0 - 5e-5), 1e-15);
}

TEST(Sgd, MomentumTwoSteps) {
  std::vector<double> w{1.0}, g{0.2}, v{0.0};
  sgd_update<double>(w, g, v, 0.1, 0.9, 0.0);
  sgd_update<double>(w, g, v, 0.1, 0.9, 0.0);
  EXPECT_NEAR(w[0], 1.0 - 0.1 * 0.2 * 2.9, 1e-15);
}

TEST(Sgd, NonFiniteGradientAborts) {
  std::vector<float> w{1.0f, 2.0f}, g{0.0f, std::numeric_limits<float>::quiet_NaN()}, v{0, 0};
  EXPECT_THROW(sgd_update<float>(w, g, v, 0.1, 0.9, 0.0), DivergenceError);
  std::vector<float> short_g{0.0f};
  EXPECT_THROW(sgd_update<float>(w, short_g, v, 0.1, 0.9, 0.0), ShapeError);
}

TEST(Config, Validation) {
  EXPECT_NO_THROW(TrainConfig::desk_preset().validate());
  EXPECT_NO_THROW(TrainConfig::large_preset().validate());
  auto bad = TrainConfig::desk_preset();
  bad.warmup_epochs = 30;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig::desk_preset();
  bad.decay_epochs = {25, 20};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig::desk_preset();
  bad.base_lr = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig::desk_preset();
  bad.partition = "nine_part";
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig::desk_preset();
  bad.lambda = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_train_mode("finetune"), ConfigError);
}

TEST(Config, JsonRoundTripAndLossKeys) {
  auto c = quick_config(TrainMode::PartCls, 42);
  c.variant = loss::ContrastVariant::JSD;
  c.lambda = 0.3;
  auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  auto nested = TrainConfig::from_json(R"({"loss": {"variant": "cl", "lambda": 0.5, "tau": 0.07}, "epochs": 8})");
  EXPECT_EQ(nested.variant, loss::ContrastVariant::CL);
  EXPECT_DOUBLE_EQ(nested.lambda, 0.5);
  EXPECT_DOUBLE_EQ(nested.tau, 0.07);
  EXPECT_EQ(nested.epochs, 8u);
  EXPECT_EQ(nested.batch_size, 32u);
  EXPECT_THROW(TrainConfig::from_json("{\"epochs\": "), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(R"({"loss": {"variant": "hinge"}})"), ConfigError);
}

TEST(Streams, NamedSeedsDiffer) {
  EXPECT_NE(stream_seed(1, "init"), stream_seed(1, "shuffle"));
  EXPECT_NE(stream_seed(1, "init"), stream_seed(2, "init"));
  EXPECT_EQ(stream_seed(7, "variants"), stream_seed(7, "variants"));
}

TEST(Train, SameSeedBitIdentical) {
  const auto& f = fixture();
  TrainReport ra, rb;
  auto a = train(f.data.train, &f.data.test, &f.bank, quick_config(TrainMode::Gap, 5), &ra);
  auto b = train(f.data.train, &f.data.test, &f.bank, quick_config(TrainMode::Gap, 5), &rb);
  EXPECT_EQ(flat_weights(a), flat_weights(b));
  ASSERT_EQ(ra.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(ra.epochs[e].loss, rb.epochs[e].loss);
  auto c = train(f.data.train, nullptr, &f.bank, quick_config(TrainMode::Gap, 6), nullptr);
  EXPECT_NE(flat_weights(a), flat_weights(c));
}

TEST(Train, ZeroLambdaMatchesBaseline) {
  const auto& f = fixture();
  auto gap_cfg = quick_config(TrainMode::Gap, 3);
  gap_cfg.lambda = 0.0;
  TrainReport rg, rb;
  auto g = train(f.data.train, nullptr, &f.bank, gap_cfg, &rg);
  auto b = train(f.data.train, nullptr, &f.bank, quick_config(TrainMode::Baseline, 3), &rb);
  ASSERT_EQ(rg.epochs.size(), rb.epochs.size());
  for (std::size_t e = 0; e < rg.epochs.size(); ++e) {
    EXPECT_EQ(rg.epochs[e].loss, rb.epochs[e].loss);
    EXPECT_EQ(rg.epochs[e].ce, rb.epochs[e].ce);
    EXPECT_EQ(rg.epochs[e].acc, rb.epochs[e].acc);
  }
  EXPECT_EQ(flat_weights(g), flat_weights(b));
}

TEST(Train, ReportShape) {
  const auto& f = fixture();
  TrainReport r;
  train(f.data.train, &f.data.test, &f.bank, quick_config(TrainMode::PartCls, 2), &r);
  ASSERT_EQ(r.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(r.epochs[e].epoch, e);
    EXPECT_GT(r.epochs[e].con, 0.0);
    EXPECT_NEAR(r.epochs[e].loss, r.epochs[e].ce + r.epochs[e].con, 1e-4);
  }
  ASSERT_TRUE(r.final_test_acc.has_value());
  EXPECT_EQ(r.mode, "part_cls");

  testing::TempDir dir;
  write_report(r, dir.path());
  std::ifstream csv(dir / "report.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "epoch,loss,ce,con,acc,lr");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_TRUE(std::filesystem::exists(dir / "summary.json"));
}

TEST(Train, BankMismatch) {
  const auto& f = fixture();
  EXPECT_THROW(train(f.data.train, nullptr, nullptr, quick_config(TrainMode::Gap), nullptr), ConfigError);
  auto global = build_partition("global", shipped_skeleton("toy10"));
  auto one_slot = build_bank(f.data.corpus, global, PromptType::LabelName, HashedEmbedder(32));
  EXPECT_THROW(train(f.data.train, nullptr, &one_slot, quick_config(TrainMode::Gap), nullptr), ConfigError);
  auto cfg = quick_config(TrainMode::Gap);
  cfg.partition = "global";
  EXPECT_NO_THROW(train(f.data.train, nullptr, &one_slot, cfg, nullptr));
  TextFeatureBank partial(32, f.data.train.num_classes, 5);
  std::vector<double> v(32, 1.0);
  partial.add(0, 0, v);
  EXPECT_THROW(train(f.data.train, nullptr, &partial, quick_config(TrainMode::Gap), nullptr), ConfigError);
}

TEST(Train, LossDecreasesEarly) {
  auto data = generate_synthetic(SyntheticSpec::default_spec());
  auto p = build_partition("four_part", shipped_skeleton("toy10"));
  auto bank = build_bank(data.corpus, p, PromptType::SynonymPlusParts, HashedEmbedder(64));
  int decreasing = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = TrainConfig::desk_preset();
    cfg.epochs = 6;
    cfg.seed = seed;
    TrainReport r;
    train(data.train, nullptr, &bank, cfg, &r);
    bool ok = true;
    for (std::size_t e = 1; e < 5; ++e) ok = ok && r.epochs[e].loss < r.epochs[e - 1].loss;
    decreasing += ok;
  }
  EXPECT_GE(decreasing, 4);
}

TEST(Gradcheck, SuiteAndControls) {
  GradcheckOptions opt;
  opt.seeds = 3;
  auto report = gradcheck_suite(opt);
  EXPECT_TRUE(report.passed()) << report.to_text();
  bool saw_linear = false, saw_full = false, saw_control = false;
  for (const auto& c : report.cases) {
    if (c.name == "linear") {
      saw_linear = true;
      EXPECT_LT(c.max_rel_error, 1e-8);
    }
    if (c.name == "encoder_gap_objective") {
      saw_full = true;
      EXPECT_LT(c.max_rel_error, 1e-5);
    }
    if (c.expect_failure) {
      saw_control = true;
      EXPECT_GE(c.max_rel_error, 1e-5);
    }
  }
  EXPECT_TRUE(saw_linear && saw_full && saw_control);

  opt.corrupt = true;
  auto broken = gradcheck_suite(opt);
  EXPECT_FALSE(broken.passed());
  for (const auto& c : broken.cases) {
    if (!c.expect_failure) {
      EXPECT_FALSE(c.passed) << c.name;
    }
  }
}

TEST(Gradcheck, RelativeError) {
  std::vector<double> a{1.0, 2.0}, n{1.0, 2.0 + 1e-9};
  EXPECT_NEAR(relative_error(a, n), 1e-9 / (2.0 + 1e-9), 1e-15);
  std::vector<double> z{0.0, 0.0};
  EXPECT_EQ(relative_error(z, z), 0.0);
}

}  // namespace
}  // namespace gap
