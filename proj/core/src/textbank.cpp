// SPDX-License-Identifier: Apache-2.0
#include "gap/textbank.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "gap/errors.hpp"
#include "gap/io.hpp"
#include "json.hpp"

namespace gap {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void normalize(std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    v[0] = 1.0;
    return;
  }
  for (double& x : v) x /= norm;
}

}  // namespace

// ---- corpus ------------------------------------------------------------------

void DescriptionCorpus::validate() const {
  if (classes.empty()) throw CorpusError("description corpus has no classes");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].class_id != static_cast<int>(i)) {
      throw CorpusError("corpus class ids must be dense 0..C-1; entry " + std::to_string(i) + " has id " +
                        std::to_string(classes[i].class_id));
    }
  }
}

DescriptionCorpus load_corpus(const std::filesystem::path& path) {
  DescriptionCorpus corpus;
  try {
    const json j = json::parse(io::read_text(path));
    for (const auto& c : j.at("classes")) {
      ClassDescription d;
      d.class_id = c.at("class_id");
      d.label_name = c.at("label_name");
      d.paragraph = c.value("paragraph", std::string());
      d.synonyms = c.value("synonyms", std::vector<std::string>{});
      d.part_descriptions = c.value("part_descriptions", std::map<std::string, std::string>{});
      corpus.classes.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed corpus " + path.string() + ": " + e.what());
  }
  corpus.validate();
  return corpus;
}

void save_corpus(const DescriptionCorpus& corpus, const std::filesystem::path& path) {
  json classes = json::array();
  for (const auto& c : corpus.classes) {
    classes.push_back({{"class_id", c.class_id},
                       {"label_name", c.label_name},
                       {"paragraph", c.paragraph},
                       {"synonyms", c.synonyms},
                       {"part_descriptions", c.part_descriptions}});
  }
  io::write_text(path, json{{"classes", classes}}.dump(2) + "\n");
}

// ---- embedding ----------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

HashedEmbedder::HashedEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 8) throw ConfigError("hashed embedding dimension must be at least 8");
}

std::vector<double> HashedEmbedder::embed(std::string_view text) const {
  std::vector<double> v(dim_, 0.0);
  for (const auto& token : tokenize(text)) {
    std::uint64_t state = fnv1a(token) ^ (seed_ * 0x9e3779b97f4a7c15ULL);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < dim_; ++i) {
      if (i % 64 == 0) bits = splitmix64(state);
      v[i] += (bits >> (i % 64)) & 1ULL ? 1.0 : -1.0;
    }
  }
  normalize(v);
  return v;
}

std::vector<double> hashed_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
  return HashedEmbedder(dim, seed).embed(text);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateFeatureError("cosine of a zero vector");
  return dot / std::sqrt(na * nb);
}

PromptType parse_prompt_type(std::string_view name) {
  if (name == "label_name") return PromptType::LabelName;
  if (name == "synonym") return PromptType::Synonym;
  if (name == "paragraph") return PromptType::Paragraph;
  if (name == "body_parts") return PromptType::BodyParts;
  if (name == "synonym_plus_parts") return PromptType::SynonymPlusParts;
  throw ConfigError("unknown prompt type '" + std::string(name) +
                    "' (expected label_name, synonym, paragraph, body_parts, synonym_plus_parts)");
}

std::string_view to_string(PromptType type) {
  switch (type) {
    case PromptType::LabelName: return "label_name";
    case PromptType::Synonym: return "synonym";
    case PromptType::Paragraph: return "paragraph";
    case PromptType::BodyParts: return "body_parts";
    case PromptType::SynonymPlusParts: return "synonym_plus_parts";
  }
  return "unknown";
}

// ---- bank ----------------------------------------------------------------------

TextFeatureBank::TextFeatureBank(std::size_t dim, std::size_t num_classes, std::size_t num_slots)
    : dim_(dim), num_classes_(num_classes), num_slots_(num_slots), variant_counts_(num_classes * num_slots, 0) {
  if (dim == 0 || num_classes == 0 || num_slots == 0) throw ConfigError("text bank dimensions must be positive");
}

void TextFeatureBank::add(std::size_t class_id, std::size_t slot, std::span<const double> vector) {
  if (vector.size() != dim_) throw ShapeError("text vector length differs from bank dimension");
  std::vector<double> v(vector.begin(), vector.end());
  normalize(v);
  std::vector<float> f(v.begin(), v.end());
  add_exact(class_id, slot, num_variants(class_id, slot), f);
}

void TextFeatureBank::add_exact(std::size_t class_id, std::size_t slot, std::size_t variant, std::span<const float> vector) {
  if (class_id >= num_classes_ || slot >= num_slots_) {
    throw LookupError("bank entry (" + std::to_string(class_id) + "," + std::to_string(slot) + ") outside bank");
  }
  if (vector.size() != dim_) throw ShapeError("text vector length differs from bank dimension");
  double norm = 0.0;
  for (float x : vector) norm += static_cast<double>(x) * x;
  if (std::abs(std::sqrt(norm) - 1.0) > 1e-6) {
    throw FormatError("bank vector (" + std::to_string(class_id) + "," + std::to_string(slot) + "," +
                      std::to_string(variant) + ") is not unit norm");
  }
  const auto key = std::make_tuple(class_id, slot, variant);
  if (index_.count(key)) throw FormatError("duplicate bank entry");
  index_[key] = rows_.size() / dim_;
  rows_.insert(rows_.end(), vector.begin(), vector.end());
  auto& count = variant_counts_[class_id * num_slots_ + slot];
  count = std::max(count, variant + 1);
}

std::size_t TextFeatureBank::num_variants(std::size_t class_id, std::size_t slot) const {
  if (class_id >= num_classes_ || slot >= num_slots_) {
    throw LookupError("bank entry (" + std::to_string(class_id) + "," + std::to_string(slot) + ") outside bank");
  }
  return variant_counts_[class_id * num_slots_ + slot];
}

std::span<const float> TextFeatureBank::get(std::size_t class_id, std::size_t slot, std::size_t variant) const {
  auto it = index_.find(std::make_tuple(class_id, slot, variant));
  if (it == index_.end()) {
    throw LookupError("no bank entry for class " + std::to_string(class_id) + ", slot " + std::to_string(slot) +
                      ", variant " + std::to_string(variant));
  }
  return {rows_.data() + it->second * dim_, dim_};
}

std::span<const float> TextFeatureBank::sample(std::size_t class_id, std::size_t slot, std::mt19937_64& rng) const {
  const std::size_t n = num_variants(class_id, slot);
  if (n == 0) {
    throw LookupError("no bank entry for class " + std::to_string(class_id) + ", slot " + std::to_string(slot));
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  return get(class_id, slot, pick(rng));
}

bool TextFeatureBank::complete() const {
  return std::all_of(variant_counts_.begin(), variant_counts_.end(), [](std::size_t n) { return n > 0; });
}

std::vector<TextFeatureBank::Entry> TextFeatureBank::entries() const {
  std::vector<Entry> out;
  for (const auto& [key, row] : index_) out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), row});
  return out;
}

bool operator==(const TextFeatureBank& a, const TextFeatureBank& b) {
  if (a.dim_ != b.dim_ || a.num_classes_ != b.num_classes_ || a.num_slots_ != b.num_slots_ ||
      a.index_.size() != b.index_.size()) {
    return false;
  }
  for (const auto& [key, row] : a.index_) {
    auto it = b.index_.find(key);
    if (it == b.index_.end()) return false;
    if (!std::equal(a.rows_.begin() + row * a.dim_, a.rows_.begin() + (row + 1) * a.dim_,
                    b.rows_.begin() + it->second * b.dim_)) {
      return false;
    }
  }
  return true;
}

TextFeatureBank build_bank(const DescriptionCorpus& corpus, const PartPartition& partition, PromptType prompt_type,
                           const TextEmbedder& embedder) {
  corpus.validate();
  const std::size_t parts = partition.num_parts();
  const std::size_t slots = partition.num_slots();
  TextFeatureBank bank(embedder.dim(), corpus.classes.size(), slots);

  auto part_text = [&](const ClassDescription& c, std::size_t k) -> const std::string& {
    auto it = c.part_descriptions.find(partition.part_names[k]);
    if (it == c.part_descriptions.end()) {
      throw CorpusError("class " + std::to_string(c.class_id) + " ('" + c.label_name + "') has no description for part '" +
                        partition.part_names[k] + "'");
    }
    return it->second;
  };
  auto synonyms_of = [](const ClassDescription& c) -> const std::vector<std::string>& {
    if (c.synonyms.empty()) throw CorpusError("class " + std::to_string(c.class_id) + " has no synonyms");
    return c.synonyms;
  };
  auto paragraph_of = [](const ClassDescription& c) -> const std::string& {
    if (c.paragraph.empty()) throw CorpusError("class " + std::to_string(c.class_id) + " has no paragraph");
    return c.paragraph;
  };

  for (const auto& c : corpus.classes) {
    const auto id = static_cast<std::size_t>(c.class_id);
    for (std::size_t slot = 0; slot < slots; ++slot) {
      const bool global_slot = slot >= parts;
      switch (prompt_type) {
        case PromptType::LabelName:
          bank.add(id, slot, embedder.embed(c.label_name));
          break;
        case PromptType::Paragraph:
          bank.add(id, slot, embedder.embed(paragraph_of(c)));
          break;
        case PromptType::Synonym:
          for (const auto& s : synonyms_of(c)) bank.add(id, slot, embedder.embed(s));
          break;
        case PromptType::BodyParts:
          bank.add(id, slot, embedder.embed(global_slot ? paragraph_of(c) : part_text(c, slot)));
          break;
        case PromptType::SynonymPlusParts:
          if (global_slot) {
            for (const auto& s : synonyms_of(c)) bank.add(id, slot, embedder.embed(s));
          } else {
            bank.add(id, slot, embedder.embed(part_text(c, slot)));
          }
          break;
      }
    }
  }
  return bank;
}

void save_bank(const TextFeatureBank& bank, const std::filesystem::path& json_path) {
  auto f32_path = json_path;
  f32_path.replace_extension(".f32");
  json entries = json::array();
  std::vector<float> rows;
  for (const auto& e : bank.entries()) {
    entries.push_back({{"class", e.class_id}, {"slot", e.slot}, {"variant", e.variant}, {"offset", rows.size()}});
    const auto v = bank.get(e.class_id, e.slot, e.variant);
    rows.insert(rows.end(), v.begin(), v.end());
  }
  json j = {{"dim", bank.dim()},
            {"num_classes", bank.num_classes()},
            {"num_slots", bank.num_slots()},
            {"data_file", f32_path.filename().string()},
            {"entries", entries}};
  if (json_path.has_parent_path()) io::ensure_directory(json_path.parent_path());
  io::write_text(json_path, j.dump(1) + "\n");
  io::write_f32(f32_path, rows);
}

TextFeatureBank load_bank(const std::filesystem::path& json_path) {
  json j;
  try {
    j = json::parse(io::read_text(json_path));
  } catch (const json::exception& e) {
    throw FormatError("malformed bank " + json_path.string() + ": " + e.what());
  }
  try {
    const std::size_t dim = j.at("dim");
    std::size_t num_classes = j.value("num_classes", std::size_t{0});
    std::size_t num_slots = j.value("num_slots", std::size_t{0});
    for (const auto& e : j.at("entries")) {
      if (!j.contains("num_classes")) num_classes = std::max(num_classes, e.at("class").get<std::size_t>() + 1);
      if (!j.contains("num_slots")) num_slots = std::max(num_slots, e.at("slot").get<std::size_t>() + 1);
    }
    const auto f32_path = json_path.parent_path() / j.value("data_file", json_path.stem().string() + ".f32");
    const std::vector<float> rows = io::read_f32(f32_path);
    if (rows.size() % dim != 0) {
      throw FormatError(f32_path.string() + " length " + std::to_string(rows.size()) + " is not a multiple of dim " +
                        std::to_string(dim));
    }
    TextFeatureBank bank(dim, num_classes, num_slots);
    for (const auto& e : j.at("entries")) {
      const std::size_t offset = e.at("offset");
      if (offset + dim > rows.size()) {
        throw FormatError("bank entry offset " + std::to_string(offset) + " beyond " + f32_path.string());
      }
      bank.add_exact(e.at("class"), e.at("slot"), e.at("variant"),
                     std::span<const float>(rows.data() + offset, dim));
    }
    return bank;
  } catch (const json::exception& e) {
    throw FormatError("malformed bank " + json_path.string() + ": " + e.what());
  }
}

// ---- nearest neighbours ---------------------------------------------------------

std::vector<std::size_t> knn_select(std::span<const double> query, const std::vector<std::vector<double>>& candidates,
                                    std::size_t k) {
  if (candidates.empty()) throw LookupError("knn_select needs at least one candidate");
  if (k > candidates.size()) throw ConfigError("knn_select k exceeds the number of candidates");
  std::vector<double> score(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) score[i] = cosine(query, candidates[i]);
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(k);
  return order;
}

std::vector<std::size_t> knn_select(std::string_view query, const std::vector<std::string>& candidates, std::size_t k,
                                    const TextEmbedder& embedder) {
  std::vector<std::vector<double>> embedded;
  embedded.reserve(candidates.size());
  for (const auto& c : candidates) embedded.push_back(embedder.embed(c));
  const auto q = embedder.embed(query);
  return knn_select(q, embedded, k);
}

}  // namespace gap
