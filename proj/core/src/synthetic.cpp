// SPDX-License-Identifier: Apache-2.0
#include "gap/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <map>
#include <set>
#include <tuple>

#include "gap/errors.hpp"
#include "json.hpp"

namespace gap {

using nlohmann::json;

namespace {

const std::vector<std::string> kBaseParts = {"head", "hands", "hip", "legs"};

std::array<double, 3> default_axis(const std::string& part) {
  if (part == "head") return {1.0, 0.0, 0.0};
  if (part == "hands") return {0.0, 1.0, 0.0};
  if (part == "hip") return {1.0, 0.0, 0.0};
  return {0.0, 0.0, 1.0};
}

std::string part_noun(const std::string& part) {
  if (part == "hip") return "hips";
  return part;
}

std::string speed_word(double frequency) {
  if (frequency <= 1.5) return "slow";
  if (frequency <= 2.5) return "steady";
  return "fast";
}

std::string size_word(double amplitude) {
  if (amplitude < 0.45) return "small";
  if (amplitude < 0.85) return "medium";
  return "large";
}

// Base parts (four-part names) that make up each named part of the other
// partition tables.
std::vector<std::string> constituents(const std::string& part) {
  if (part == "body") return kBaseParts;
  if (part == "upper") return {"head", "hands"};
  if (part == "lower") return {"hip", "legs"};
  if (part == "arm" || part == "hand") return {"hands"};
  if (part == "leg" || part == "foot") return {"legs"};
  return {part};
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SkeletonBatch generate_split(const SyntheticSpec& spec, const SkeletonGraph& graph, std::size_t per_class,
                             std::uint64_t index_base) {
  const std::size_t n = graph.num_joints();
  const std::size_t frames = spec.frames;
  const auto& pose = rest_pose(spec.skeleton);
  const auto four = build_partition("four_part", graph);
  const std::size_t total = per_class * spec.num_classes();

  SkeletonBatch batch;
  batch.data = Tensor<float>({total, 3, frames, n});
  batch.labels.resize(total);
  batch.num_classes = spec.num_classes();
  for (const auto& c : spec.classes) batch.class_names.push_back(c.name);
  batch.skeleton = spec.skeleton;
  batch.generator = spec.to_json();

  std::vector<double> sample(3 * frames * n);
  for (std::size_t s = 0; s < total; ++s) {
    const std::size_t cls = s % spec.num_classes();
    const auto& recipe = spec.classes[cls];
    std::mt19937_64 rng(sample_seed(spec.seed, index_base + s));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double amp = recipe.amplitude * (1.0 + spec.amplitude_jitter * (2.0 * unit(rng) - 1.0));
    const double freq = recipe.frequency * (1.0 + spec.frequency_jitter * (2.0 * unit(rng) - 1.0));

    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t j = 0; j < n; ++j) sample[(c * frames + t) * n + j] = pose[j][c];

    for (const auto& part : recipe.active_parts) {
      const auto k = static_cast<std::size_t>(
          std::find(four.part_names.begin(), four.part_names.end(), part) - four.part_names.begin());
      const auto axis = recipe.axis.value_or(default_axis(part));
      for (std::size_t t = 0; t < frames; ++t) {
        const double wave =
            amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) / static_cast<double>(frames) + phase);
        for (int j : four.groups[k])
          for (std::size_t c = 0; c < 3; ++c) sample[(c * frames + t) * n + j] += wave * axis[c];
      }
    }
    const double angle = spec.view_jitter * (2.0 * unit(rng) - 1.0);
    std::array<double, 3> offset{};
    for (double& o : offset) o = spec.position_jitter * noise(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t j = 0; j < n; ++j) {
        double& x = sample[(0 * frames + t) * n + j];
        double& y = sample[(1 * frames + t) * n + j];
        double& z = sample[(2 * frames + t) * n + j];
        const double rx = ca * x + sa * z, rz = -sa * x + ca * z;
        x = rx + offset[0];
        y += offset[1];
        z = rz + offset[2];
      }
    }
    for (double& v : sample) v += spec.noise_sigma * noise(rng);

    float* dst = batch.data.data() + s * sample.size();
    for (std::size_t i = 0; i < sample.size(); ++i) dst[i] = static_cast<float>(sample[i]);
    batch.labels[s] = static_cast<std::uint32_t>(cls);
  }
  return batch;
}

}  // namespace

SyntheticSpec SyntheticSpec::default_spec() {
  SyntheticSpec spec;
  spec.train_per_class = 100;
  spec.test_per_class = 50;
  spec.frames = 32;
  spec.skeleton = "toy10";
  spec.noise_sigma = 0.4;
  spec.amplitude_jitter = 0.2;
  spec.frequency_jitter = 0.1;
  spec.view_jitter = std::numbers::pi / 2.0;
  spec.position_jitter = 0.3;
  spec.seed = 2024;
  spec.classes = {
      {"hand wave", {"hands"}, 2.0, 0.8, std::nullopt},
      {"leg kick", {"legs"}, 1.0, 0.8, std::nullopt},
      {"head nod", {"head"}, 3.0, 0.8, std::nullopt},
      {"hip sway", {"hip"}, 1.0, 0.8, std::nullopt},
      {"head and hand bob", {"head", "hands"}, 2.0, 0.6, std::nullopt},
      {"hip and leg bounce", {"hip", "legs"}, 3.0, 0.6, std::nullopt},
  };
  return spec;
}

void SyntheticSpec::validate() const {
  if (classes.size() < 2) throw ConfigError("classes: need at least 2 class recipes");
  if (train_per_class == 0) throw ConfigError("train_per_class must be positive");
  if (frames < 2) throw ConfigError("frames must be at least 2");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be non-negative");
  if (!(amplitude_jitter >= 0.0 && amplitude_jitter < 1.0)) throw ConfigError("amplitude_jitter must lie in [0, 1)");
  if (!(frequency_jitter >= 0.0 && frequency_jitter < 1.0)) throw ConfigError("frequency_jitter must lie in [0, 1)");
  if (!(view_jitter >= 0.0) || !std::isfinite(view_jitter)) throw ConfigError("view_jitter must be non-negative");
  if (!(position_jitter >= 0.0) || !std::isfinite(position_jitter)) {
    throw ConfigError("position_jitter must be non-negative");
  }
  const auto names = shipped_skeleton_names();
  if (std::find(names.begin(), names.end(), skeleton) == names.end()) {
    throw ConfigError("skeleton: unknown skeleton '" + skeleton + "'");
  }
  std::set<std::tuple<std::set<std::string>, double, double>> seen;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& c = classes[i];
    const std::string where = "classes[" + std::to_string(i) + "]";
    if (c.name.empty()) throw ConfigError(where + ".name must not be empty");
    std::set<std::string> parts;
    for (const auto& p : c.active_parts) {
      if (std::find(kBaseParts.begin(), kBaseParts.end(), p) == kBaseParts.end()) {
        throw ConfigError(where + ".active_parts: invalid part name '" + p + "' (expected head, hands, hip, legs)");
      }
      parts.insert(p);
    }
    if (!(c.frequency > 0.0) || !std::isfinite(c.frequency)) throw ConfigError(where + ".frequency must be positive");
    if (!(c.amplitude >= 0.0) || !std::isfinite(c.amplitude)) throw ConfigError(where + ".amplitude must be non-negative");
    if (!seen.insert({parts, c.frequency, c.amplitude}).second) {
      throw ConfigError(where + ": recipe duplicates an earlier class");
    }
  }
}

SyntheticSpec SyntheticSpec::from_json(const std::string& text) {
  SyntheticSpec spec;
  try {
    const json j = json::parse(text);
    spec.train_per_class = j.value("train_per_class", spec.train_per_class);
    spec.test_per_class = j.value("test_per_class", spec.test_per_class);
    spec.frames = j.value("frames", spec.frames);
    spec.skeleton = j.value("skeleton", spec.skeleton);
    spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
    spec.amplitude_jitter = j.value("amplitude_jitter", spec.amplitude_jitter);
    spec.frequency_jitter = j.value("frequency_jitter", spec.frequency_jitter);
    spec.view_jitter = j.value("view_jitter", spec.view_jitter);
    spec.position_jitter = j.value("position_jitter", spec.position_jitter);
    spec.seed = j.value("seed", spec.seed);
    if (!j.contains("classes")) {
      const auto defaults = default_spec();
      spec.classes = defaults.classes;
    } else {
      for (const auto& c : j.at("classes")) {
        ClassRecipe r;
        r.name = c.at("name");
        r.active_parts = c.at("active_parts").get<std::vector<std::string>>();
        r.frequency = c.at("frequency");
        r.amplitude = c.at("amplitude");
        if (c.contains("axis")) r.axis = c.at("axis").get<std::array<double, 3>>();
        spec.classes.push_back(std::move(r));
      }
    }
    if (j.contains("num_classes") && j.at("num_classes").get<std::size_t>() != spec.classes.size()) {
      throw ConfigError("num_classes: " + j.at("num_classes").dump() + " does not match " +
                        std::to_string(spec.classes.size()) + " class recipes");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::string SyntheticSpec::to_json() const {
  json classes_json = json::array();
  for (const auto& c : classes) {
    json r = {{"name", c.name}, {"active_parts", c.active_parts}, {"frequency", c.frequency}, {"amplitude", c.amplitude}};
    if (c.axis) r["axis"] = *c.axis;
    classes_json.push_back(r);
  }
  json j = {{"num_classes", classes.size()},
            {"train_per_class", train_per_class},
            {"test_per_class", test_per_class},
            {"frames", frames},
            {"skeleton", skeleton},
            {"noise_sigma", noise_sigma},
            {"amplitude_jitter", amplitude_jitter},
            {"frequency_jitter", frequency_jitter},
            {"view_jitter", view_jitter},
            {"position_jitter", position_jitter},
            {"seed", seed},
            {"classes", classes_json}};
  return j.dump();
}

ClassDescription describe_class(const ClassRecipe& recipe, int class_id, const SkeletonGraph& graph) {
  static const std::vector<std::string> verbs = {"swing", "wave", "sway", "shake", "rock",
                                                 "oscillate", "bob", "pump", "wiggle", "flap"};
  const std::string speed = speed_word(recipe.frequency);
  const std::string size = size_word(recipe.amplitude);
  auto active = [&](const std::string& part) {
    return std::find(recipe.active_parts.begin(), recipe.active_parts.end(), part) != recipe.active_parts.end();
  };
  std::map<std::string, std::string> base;
  for (const auto& p : kBaseParts) {
    base[p] = active(p) ? part_noun(p) + " move in " + speed + " " + size + " oscillation"
                        : part_noun(p) + " remain stationary";
  }

  ClassDescription d;
  d.class_id = class_id;
  d.label_name = recipe.name;
  std::set<std::string> part_names(kBaseParts.begin(), kBaseParts.end());
  part_names.insert("body");
  for (const auto& [name, table] : graph.partitions())
    for (const auto& p : table.part_names) part_names.insert(p);
  for (const auto& p : part_names) {
    std::string text;
    for (const auto& b : constituents(p)) {
      if (!base.count(b)) continue;
      if (!text.empty()) text += "; ";
      text += base[b];
    }
    if (!text.empty()) d.part_descriptions[p] = text;
  }

  std::string movers;
  for (const auto& p : recipe.active_parts) movers += (movers.empty() ? "" : " and ") + part_noun(p);
  if (movers.empty()) movers = "body";
  for (const auto& v : verbs) d.synonyms.push_back(speed + " " + size + " " + movers + " " + v);
  d.paragraph = "The person performs a " + speed + " " + size + " movement with the " + movers + ". ";
  for (const auto& p : kBaseParts) d.paragraph += base[p] + ". ";
  return d;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const SkeletonGraph& graph = shipped_skeleton(spec.skeleton);
  SyntheticDataset out;
  out.train = generate_split(spec, graph, spec.train_per_class, 0);
  out.test = generate_split(spec, graph, spec.test_per_class, std::uint64_t{1} << 32);
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    out.corpus.classes.push_back(describe_class(spec.classes[c], static_cast<int>(c), graph));
  }
  return out;
}

}  // namespace gap
