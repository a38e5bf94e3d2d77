// SPDX-License-Identifier: Apache-2.0
#include <random>

#include <benchmark/benchmark.h>

#include "gap/layers.hpp"
#include "gap/losses.hpp"
#include "gap/model.hpp"
#include "gap/skeleton.hpp"
#include "gap/textbank.hpp"

namespace {

gap::Tensor<float> random_input(gap::Shape shape, std::uint64_t seed) {
  gap::Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  for (auto& v : t.values()) v = n(rng);
  return t;
}

gap::EncoderModel<float> make_model(const std::string& skeleton, bool deep) {
  const auto& g = gap::shipped_skeleton(skeleton);
  auto config = deep ? gap::EncoderConfig::deep_preset(60, 64) : gap::EncoderConfig{};
  config.num_classes = 60;
  gap::EncoderModel<float> model(config, g, gap::build_partition("four_part", g));
  model.initialize(1);
  return model;
}

// Training step cost (forward plus backward) of the default encoder.
void BM_EncoderTrainStep(benchmark::State& state) {
  auto model = make_model("toy10", false);
  const auto x = random_input({static_cast<std::size_t>(state.range(0)), 3, 32, 10}, 2);
  for (auto _ : state) {
    auto out = model.forward(x, true);
    gap::OutputGrads<float> grads;
    grads.logits = gap::Tensor<float>(out.logits.shape(), 1.0f);
    grads.part_features = gap::Tensor<float>(out.part_features.shape(), 1.0f);
    model.zero_grad();
    benchmark::DoNotOptimize(model.backward(grads));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderTrainStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_EncoderInference(benchmark::State& state) {
  auto model = make_model("toy10", false);
  const auto x = random_input({32, 3, 32, 10}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, false));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_EncoderInference)->Unit(benchmark::kMillisecond);

void BM_DeepEncoderInferenceNtu(benchmark::State& state) {
  auto model = make_model("ntu25", true);
  const auto x = random_input({2, 3, 64, 25}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, false));
  state.SetItemsProcessed(state.iterations() * 2);
}
BENCHMARK(BM_DeepEncoderInferenceNtu)->Unit(benchmark::kMillisecond);

void BM_GraphConv(benchmark::State& state) {
  const auto& g = gap::shipped_skeleton("ntu25");
  const gap::Tensor<float> a({25, 25}, std::vector<float>(g.adjacency_norm().begin(), g.adjacency_norm().end()));
  const auto x = random_input({8, 64, 32, 25}, 5);
  const auto w = random_input({64, 64}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(gap::nn::graph_conv_forward(x, a, w));
}
BENCHMARK(BM_GraphConv)->Unit(benchmark::kMillisecond);

void BM_ContrastiveLoss(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  const auto s = random_input({b, 64}, 7), t = random_input({b, 64}, 8);
  std::vector<std::uint32_t> labels(b);
  for (std::size_t i = 0; i < b; ++i) labels[i] = static_cast<std::uint32_t>(i % 6);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        gap::loss::contrastive_feature_loss(s, t, labels, 0.1f, gap::loss::ContrastVariant::KLD));
}
BENCHMARK(BM_ContrastiveLoss)->Arg(32)->Arg(200);

void BM_HashedEmbed(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(gap::hashed_embed("left hand moves in a fast circle while the legs stay still", 512));
}
BENCHMARK(BM_HashedEmbed);

}  // namespace

BENCHMARK_MAIN();
