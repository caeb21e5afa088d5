#pragma once

// Lexical variant generation for medication names.
//
// Variants are found by walking an embedding space breadth-first from a seed
// term: a neighbor is accepted when it is semantically close to the term that
// reached it (cosine) and orthographically close to the seed (normalized edit
// distance). Accepted variants are expanded in turn up to a depth limit.

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace toxipipe::lexvar {

// Immutable token -> vector table. Safe to share across threads once loaded.
class EmbeddingModel {
 public:
  EmbeddingModel() = default;

  // Builds a model from parallel token/vector lists. Duplicate tokens keep the
  // first occurrence. Throws FormatError on ragged vectors or dimension 0.
  EmbeddingModel(std::vector<std::string> tokens, std::vector<std::vector<double>> vectors);

  std::size_t size() const { return tokens_.size(); }
  std::size_t dimension() const { return dimension_; }
  std::size_t duplicate_count() const { return duplicates_; }

  const std::vector<std::string>& vocabulary() const { return tokens_; }
  const std::string& token(std::size_t i) const { return tokens_[i]; }
  std::span<const double> vector(std::size_t i) const {
    return {data_.data() + i * dimension_, dimension_};
  }
  double norm(std::size_t i) const { return norms_[i]; }

  // Exact lookup first, then case-folded lookup.
  std::optional<std::size_t> find(std::string_view token) const;

 private:
  friend EmbeddingModel load_embeddings(std::istream& in);

  void add(std::string token, std::span<const double> values);
  void finish();

  std::vector<std::string> tokens_;
  std::vector<double> data_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> exact_;
  std::unordered_map<std::string, std::size_t> folded_;
  std::size_t dimension_ = 0;
  std::size_t duplicates_ = 0;
};

// Text format: optional "vocab_size dimension" header, then one
// "token v1 ... vD" record per line. Blank lines are ignored.
EmbeddingModel load_embeddings(const std::filesystem::path& path);
EmbeddingModel load_embeddings(std::istream& in);

struct ExpansionConfig {
  double theta_sem = 0.70;       // minimum cosine to the parent term, in [-1, 1]
  double theta_lex = 0.65;       // minimum lexical similarity to the seed, in [0, 1]
  std::size_t max_depth = 3;
  std::size_t max_neighbors = 50;
  std::size_t max_altered_tokens = 1;  // multi-word recombination cap

  // Throws ContractError if a field is out of range. theta_sem may exceed 1
  // to express "accept nothing".
  void validate() const;
};

struct Variant {
  std::string token;
  double cosine_to_parent = 0.0;
  double lexical_similarity = 0.0;  // to the seed
  std::size_t depth = 0;
};

struct VariantSet {
  std::string seed;
  std::vector<Variant> variants;  // acceptance order
  bool not_in_vocabulary = false;

  bool contains(std::string_view token) const;
};

double cosine(std::span<const double> u, std::span<const double> v);

// Edit distance over Unicode scalar values.
std::size_t levenshtein(std::string_view a, std::string_view b);

// 1 - levenshtein(a, b) / max(|a|, |b|), lengths in scalar values.
double lexical_similarity(std::string_view a, std::string_view b);

VariantSet expand_term(std::string_view seed, const EmbeddingModel& model,
                       const ExpansionConfig& config);

// `phrase` holds the individual words. Each variant's lexical_similarity is
// the minimum over its words, cosine_to_parent the minimum over altered words
// and depth the maximum over altered words.
VariantSet expand_multiword(std::span<const std::string> phrase, const EmbeddingModel& model,
                            const ExpansionConfig& config);

// Percentage increase in hits from adding variants to the seed-only query.
double retrieval_gain(std::size_t baseline_hits, std::size_t expanded_hits);

// A lexicon is the expansion of every seed. Seeds containing whitespace are
// expanded as multi-word phrases.
struct Lexicon {
  std::vector<VariantSet> entries;

  std::size_t variant_count() const;
};

Lexicon expand_lexicon(std::span<const std::string> seeds, const EmbeddingModel& model,
                       const ExpansionConfig& config);

// One seed per line; blank lines and lines starting with '#' are skipped.
std::vector<std::string> read_seeds(const std::filesystem::path& path);

// CSV with header seed,variant,cosine,lexsim,depth. Each seed is written once
// as a self row (variant == seed, depth 0) so seeds without variants survive
// a round trip.
void write_lexicon_csv(std::ostream& out, const Lexicon& lexicon);
void write_lexicon_csv(const std::filesystem::path& path, const Lexicon& lexicon);
Lexicon read_lexicon_csv(std::istream& in);
Lexicon read_lexicon_csv(const std::filesystem::path& path);

}  // namespace toxipipe::lexvar
