// SPDX-License-Identifier: Apache-2.0
#include "gap/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "gap/errors.hpp"
#include "gap/eval.hpp"
#include "gap/io.hpp"
#include "json.hpp"

namespace gap {

using nlohmann::json;

TrainMode parse_train_mode(std::string_view name) {
  if (name == "baseline") return TrainMode::Baseline;
  if (name == "gap") return TrainMode::Gap;
  if (name == "part_cls") return TrainMode::PartCls;
  throw ConfigError("mode: unknown training mode '" + std::string(name) + "' (expected baseline, gap, part_cls)");
}

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Baseline: return "baseline";
    case TrainMode::Gap: return "gap";
    case TrainMode::PartCls: return "part_cls";
  }
  return "gap";
}

TrainConfig TrainConfig::desk_preset() { return TrainConfig{}; }

TrainConfig TrainConfig::large_preset() {
  TrainConfig c;
  c.epochs = 110;
  c.batch_size = 200;
  c.decay_epochs = {90, 100};
  return c;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (warmup_epochs >= epochs) throw ConfigError("warmup_epochs must be smaller than epochs");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) throw ConfigError("decay_epochs must be strictly increasing");
  }
  auto positive = [](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(field) + " must be positive");
  };
  positive(base_lr, "base_lr");
  positive(decay_factor, "decay_factor");
  positive(tau, "tau");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be non-negative");
  if (std::find(std::begin(kPartitionNames), std::end(kPartitionNames), partition) == std::end(kPartitionNames)) {
    throw ConfigError("partition: unknown strategy '" + partition + "'");
  }
  parse_modality(modality);
  if (channels.size() != strides.size()) throw ConfigError("channels and strides differ in length");
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.decay_epochs = j.value("decay_epochs", c.decay_epochs);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.momentum = j.value("momentum", c.momentum);
    c.lambda = j.value("lambda", c.lambda);
    c.tau = j.value("tau", c.tau);
    if (j.contains("variant")) c.variant = loss::parse_variant(j.at("variant").get<std::string>());
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      c.lambda = l.value("lambda", c.lambda);
      c.tau = l.value("tau", c.tau);
      if (l.contains("variant")) c.variant = loss::parse_variant(l.at("variant").get<std::string>());
    }
    c.partition = j.value("partition", c.partition);
    if (j.contains("prompt_type")) c.prompt_type = parse_prompt_type(j.at("prompt_type").get<std::string>());
    c.include_global = j.value("include_global", c.include_global);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) c.mode = parse_train_mode(j.at("mode").get<std::string>());
    c.modality = j.value("modality", c.modality);
    c.channels = j.value("channels", c.channels);
    c.strides = j.value("strides", c.strides);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainConfig::to_json() const {
  json j = {{"epochs", epochs},
            {"batch_size", batch_size},
            {"base_lr", base_lr},
            {"warmup_epochs", warmup_epochs},
            {"decay_epochs", decay_epochs},
            {"decay_factor", decay_factor},
            {"weight_decay", weight_decay},
            {"momentum", momentum},
            {"lambda", lambda},
            {"tau", tau},
            {"variant", std::string(loss::to_string(variant))},
            {"partition", partition},
            {"prompt_type", std::string(gap::to_string(prompt_type))},
            {"include_global", include_global},
            {"seed", seed},
            {"mode", std::string(gap::to_string(mode))},
            {"modality", modality}};
  if (!channels.empty()) {
    j["channels"] = channels;
    j["strides"] = strides;
  }
  return j.dump(2);
}

std::uint64_t stream_seed(std::uint64_t master, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : stream) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = master + h * 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  if (epoch < config.warmup_epochs) {
    return config.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(config.warmup_epochs);
  }
  double lr = config.base_lr;
  for (std::size_t d : config.decay_epochs)
    if (epoch >= d) lr /= config.decay_factor;
  return lr;
}

template <typename T>
void sgd_update(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, double lr, double momentum,
                double weight_decay) {
  if (weights.size() != grads.size() || weights.size() != velocity.size()) {
    throw ShapeError("sgd: weights, gradients and velocity differ in length");
  }
  const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw DivergenceError("non-finite gradient at index " + std::to_string(i));
    }
    velocity[i] = mu * velocity[i] + (grads[i] + wd * weights[i]);
    weights[i] -= step * velocity[i];
  }
}

template <typename T>
void sgd_step(EncoderModel<T>& model, SgdState<T>& state, double lr, const TrainConfig& config) {
  std::size_t k = 0;
  model.for_each_parameter([&](const std::string& name, Tensor<T>& value, Tensor<T>& grad, bool trainable) {
    if (!trainable) return;
    if (state.velocity.size() <= k) state.velocity.emplace_back(value.shape());
    try {
      sgd_update<T>(value.values(), grad.values(), state.velocity[k].values(), lr, config.momentum,
                    config.weight_decay);
    } catch (const DivergenceError& e) {
      throw DivergenceError(name + ": " + e.what());
    }
    ++k;
  });
}

EncoderConfig encoder_config_for(const TrainConfig& config, std::size_t num_classes, std::size_t text_dim) {
  EncoderConfig ec;
  if (!config.channels.empty()) {
    ec.channels = config.channels;
    ec.strides = config.strides;
  }
  ec.num_classes = num_classes;
  ec.text_dim = text_dim;
  ec.part_cls_heads = config.mode == TrainMode::PartCls;
  return ec;
}

namespace {

PartPartition partition_for(const TrainConfig& config, const SkeletonGraph& graph) {
  PartPartition p = build_partition(config.partition, graph);
  if (config.partition != "global") p.include_global = config.include_global;
  return p;
}

void check_bank(const TextFeatureBank& bank, std::size_t num_classes, const PartPartition& partition) {
  if (bank.num_classes() != num_classes) {
    throw ConfigError("bank covers " + std::to_string(bank.num_classes()) + " classes, dataset has " +
                      std::to_string(num_classes));
  }
  if (bank.num_slots() != partition.num_slots()) {
    throw ConfigError("bank has " + std::to_string(bank.num_slots()) + " slots, partition '" + partition.name +
                      "' needs " + std::to_string(partition.num_slots()));
  }
  if (!bank.complete()) throw ConfigError("bank is missing embeddings for some (class, slot) pairs");
}

}  // namespace

EncoderModel<float> train(const SkeletonBatch& train_set, const SkeletonBatch* test_set, const TextFeatureBank* bank,
                          const TrainConfig& config, TrainReport* report) {
  config.validate();
  train_set.validate();
  const auto started = std::chrono::steady_clock::now();
  const SkeletonGraph& graph = shipped_skeleton(train_set.skeleton);
  const PartPartition partition = partition_for(config, graph);
  const std::size_t num_classes = train_set.num_classes;
  const bool gap_mode = config.mode == TrainMode::Gap;
  if (gap_mode) {
    if (bank == nullptr) throw ConfigError("gap mode needs a text feature bank");
    check_bank(*bank, num_classes, partition);
  }
  const std::size_t text_dim = bank != nullptr ? bank->dim() : 64;
  EncoderModel<float> model(encoder_config_for(config, num_classes, text_dim), graph, partition);
  model.initialize(stream_seed(config.seed, "init"));

  std::mt19937_64 shuffle_rng(stream_seed(config.seed, "shuffle"));
  std::mt19937_64 variant_rng(stream_seed(config.seed, "variants"));
  SgdState<float> state;
  const float lambda = static_cast<float>(config.lambda);
  const float tau = static_cast<float>(config.tau);
  const std::size_t slots = partition.num_slots();
  const std::size_t samples = train_set.size();

  TrainReport local;
  local.seed = config.seed;
  local.mode = std::string(to_string(config.mode));
  local.variant = std::string(loss::to_string(config.variant));
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_loss = 0.0, sum_ce = 0.0, sum_con = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < samples; start += config.batch_size) {
      const std::size_t stop = std::min(samples, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const std::size_t b = idx.size();
      const auto labels = train_set.gather_labels(idx);
      const auto out = model.forward(train_set.gather<float>(idx), true);

      auto ce = loss::cross_entropy(out.logits, std::span<const std::uint32_t>(labels));
      OutputGrads<float> grads;
      grads.logits = std::move(ce.grad);
      float con = 0.0f;
      float total = ce.value;
      if (gap_mode) {
        const std::size_t d = text_dim;
        grads.part_features = Tensor<float>(out.part_features.shape());
        std::vector<float> slot_losses;
        Tensor<float> skel({b, d}), text({b, d});
        for (std::size_t s = 0; s < slots; ++s) {
          std::copy_n(out.part_features.data() + s * b * d, b * d, skel.data());
          for (std::size_t i = 0; i < b; ++i) {
            const auto row = bank->sample(labels[i], s, variant_rng);
            std::copy(row.begin(), row.end(), text.data() + i * d);
          }
          auto r = loss::contrastive_feature_loss(skel, text, std::span<const std::uint32_t>(labels), tau,
                                                  config.variant);
          slot_losses.push_back(r.value);
          const float scale = lambda / static_cast<float>(slots);
          float* g = grads.part_features.data() + s * b * d;
          for (std::size_t i = 0; i < b * d; ++i) g[i] = scale * r.grad.data()[i];
        }
        con = loss::multi_part_loss(std::span<const float>(slot_losses));
        total = loss::total_loss(ce.value, con, lambda);
      } else if (config.mode == TrainMode::PartCls) {
        auto pc = loss::part_cls_loss(out.part_logits, std::span<const std::uint32_t>(labels));
        con = pc.value;
        total = ce.value + pc.value;
        grads.part_logits = std::move(pc.grad);
      }
      if (!std::isfinite(total)) {
        throw DivergenceError("loss is not finite at epoch " + std::to_string(epoch) + ", batch starting at " +
                              std::to_string(start));
      }
      model.zero_grad();
      model.backward(grads);
      sgd_step(model, state, lr, config);

      const std::size_t c = num_classes;
      for (std::size_t i = 0; i < b; ++i) {
        const float* row = out.logits.data() + i * c;
        if (static_cast<std::size_t>(std::max_element(row, row + c) - row) == labels[i]) ++correct;
      }
      sum_loss += static_cast<double>(total) * static_cast<double>(b);
      sum_ce += static_cast<double>(ce.value) * static_cast<double>(b);
      sum_con += static_cast<double>(con) * static_cast<double>(b);
    }
    const double n = static_cast<double>(samples);
    local.epochs.push_back({epoch, sum_loss / n, sum_ce / n, sum_con / n, static_cast<double>(correct) / n, lr});
  }

  local.final_train_acc = evaluate_accuracy(model, train_set);
  if (test_set != nullptr) local.final_test_acc = evaluate_accuracy(model, *test_set);
  local.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (report != nullptr) *report = std::move(local);
  return model;
}

double evaluate_accuracy(EncoderModel<float>& model, const SkeletonBatch& batch) {
  return top1_accuracy(score_batch(model, batch));
}

void write_report(const TrainReport& report, const std::filesystem::path& dir) {
  io::ensure_directory(dir);
  std::string csv = "epoch,loss,ce,con,acc,lr\n";
  char buf[256];
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.loss, e.ce, e.con, e.acc, e.lr);
    csv += buf;
  }
  io::write_text(dir / "report.csv", csv);
  json summary = {{"seed", report.seed},
                  {"mode", report.mode},
                  {"variant", report.variant},
                  {"epochs", report.epochs.size()},
                  {"final_train_acc", report.final_train_acc},
                  {"final_test_acc", report.final_test_acc ? json(*report.final_test_acc) : json(nullptr)},
                  {"final_loss", report.epochs.empty() ? json(nullptr) : json(report.epochs.back().loss)},
                  {"wall_seconds", report.wall_seconds}};
  io::write_text(dir / "summary.json", summary.dump(2) + "\n");
}

template void sgd_update<float>(std::span<float>, std::span<const float>, std::span<float>, double, double, double);
template void sgd_update<double>(std::span<double>, std::span<const double>, std::span<double>, double, double,
                                 double);
template void sgd_step<float>(EncoderModel<float>&, SgdState<float>&, double, const TrainConfig&);
template void sgd_step<double>(EncoderModel<double>&, SgdState<double>&, double, const TrainConfig&);

}  // namespace gap
