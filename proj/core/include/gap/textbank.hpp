// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "gap/skeleton.hpp"

namespace gap {

struct ClassDescription {
  int class_id = 0;
  std::string label_name;
  std::string paragraph;
  std::vector<std::string> synonyms;
  std::map<std::string, std::string> part_descriptions;
};

struct DescriptionCorpus {
  std::vector<ClassDescription> classes;

  /// Class ids must be exactly 0..C-1 in order.
  void validate() const;
};

DescriptionCorpus load_corpus(const std::filesystem::path& path);
void save_corpus(const DescriptionCorpus& corpus, const std::filesystem::path& path);

/// Any deterministic map from text to a unit vector.
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

/// Lowercased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Bag-of-words feature hashing: every token seeds a Rademacher (+-1)
/// vector, token vectors are summed and L2-normalized. Empty text maps to
/// the first basis vector.
class HashedEmbedder final : public TextEmbedder {
 public:
  explicit HashedEmbedder(std::size_t dim, std::uint64_t seed = 0);
  std::size_t dim() const override { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

std::vector<double> hashed_embed(std::string_view text, std::size_t dim, std::uint64_t seed = 0);

enum class PromptType { LabelName, Synonym, Paragraph, BodyParts, SynonymPlusParts };

PromptType parse_prompt_type(std::string_view name);
std::string_view to_string(PromptType type);

/// Frozen table of unit-norm text features keyed by (class, slot, variant).
/// Slots 0..K-1 are body parts; slot K is the global slot when present.
class TextFeatureBank {
 public:
  TextFeatureBank(std::size_t dim, std::size_t num_classes, std::size_t num_slots);

  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_slots() const { return num_slots_; }

  /// Appends the next variant for (class, slot); the vector is stored as fp32
  /// after L2 normalization.
  void add(std::size_t class_id, std::size_t slot, std::span<const double> vector);
  /// Stores `vector` exactly (must already be unit-norm within 1e-6).
  void add_exact(std::size_t class_id, std::size_t slot, std::size_t variant, std::span<const float> vector);

  std::size_t num_variants(std::size_t class_id, std::size_t slot) const;
  std::span<const float> get(std::size_t class_id, std::size_t slot, std::size_t variant) const;

  /// Uniform draw among the variants of (class, slot).
  std::span<const float> sample(std::size_t class_id, std::size_t slot, std::mt19937_64& rng) const;

  /// True when every (class, slot) has at least one variant.
  bool complete() const;
  std::size_t size() const { return index_.size(); }

  struct Entry {
    std::size_t class_id, slot, variant, row;
  };
  std::vector<Entry> entries() const;
  const std::vector<float>& rows() const { return rows_; }

  friend bool operator==(const TextFeatureBank& a, const TextFeatureBank& b);

 private:
  std::size_t dim_, num_classes_, num_slots_;
  std::vector<float> rows_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> index_;
  std::vector<std::size_t> variant_counts_;
};

TextFeatureBank build_bank(const DescriptionCorpus& corpus, const PartPartition& partition, PromptType prompt_type,
                           const TextEmbedder& embedder);

/// bank.json {dim, num_classes, num_slots, entries:[{class,slot,variant,offset}]} + bank.f32.
void save_bank(const TextFeatureBank& bank, const std::filesystem::path& json_path);
TextFeatureBank load_bank(const std::filesystem::path& json_path);

/// Candidate indices by descending cosine similarity to the query, ties by
/// ascending index; the first k are returned.
std::vector<std::size_t> knn_select(std::string_view query, const std::vector<std::string>& candidates, std::size_t k,
                                    const TextEmbedder& embedder);
std::vector<std::size_t> knn_select(std::span<const double> query, const std::vector<std::vector<double>>& candidates,
                                    std::size_t k);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace gap
