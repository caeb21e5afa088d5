#pragma once

// Deterministic synthetic data: a keyword-recipe labeled dataset for the
// classifier, and a complete demo workspace (embeddings with planted
// misspellings, a corpus with planted regional rates and duplicates, an
// archive of author timelines with planted bots, a reference metric table and
// an emotion lexicon) together with its ground truth.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "toxipipe/classify.hpp"
#include "toxipipe/labels.hpp"

namespace toxipipe::synth {

// Generative recipe: each text mixes keywords of its class with shared and
// filler words and one drug term. With probability `leak` one class keyword
// is swapped for a keyword of another class.
struct Recipe {
  std::array<std::vector<std::string>, kNumClasses> keywords;
  std::vector<std::string> shared;
  std::vector<std::string> filler;
  std::vector<std::string> drugs;
  std::array<double, kNumClasses> prevalence{};
  std::size_t keywords_per_text = 2;
  std::size_t shared_per_text = 1;
  std::size_t filler_per_text = 4;
  double leak = 0.05;

  friend bool operator==(const Recipe&, const Recipe&) = default;
};

Recipe default_recipe();
nlohmann::json recipe_to_json(const Recipe& r);
Recipe recipe_from_json(const nlohmann::json& j);

// Exactly round(n * prevalence) texts per class (the last class takes the
// rounding remainder), in seeded random order. Ids are prefix + index.
std::vector<classify::LabeledText> generate_labeled(const Recipe& recipe, std::size_t n,
                                                    std::uint64_t seed, std::string_view id_prefix);

void write_labeled_jsonl(const std::filesystem::path& path,
                         const std::vector<classify::LabeledText>& rows);

struct RegionPlant {
  std::size_t nm_posts = 0;
  std::size_t total = 0;
};

struct GroundTruth {
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<std::string>> variants;  // seed -> planted variants
  std::vector<std::string> near_misses;
  std::size_t corpus_lines = 0;
  std::size_t malformed_lines = 0;
  std::size_t duplicates = 0;  // records the deduplicator must drop
  std::size_t unmatched = 0;
  std::size_t seed_posts = 0;     // surviving posts matched by a seed
  std::size_t variant_posts = 0;  // surviving posts matched only by a variant
  double expected_gain = 0.0;     // percent
  std::map<std::string, RegionPlant> regions;
  std::size_t regionless = 0;
  std::map<std::string, std::string> gold;  // surviving post_id -> label
  std::map<std::string, std::uint64_t> emotion_counts;
  double metric_r = 0.0;  // realized sample r of planted rates vs the metric
  std::size_t bots_planted = 0;
  std::size_t bots_excluded = 0;  // planted bots scoring >= 0.5

  nlohmann::json to_json() const;
  static GroundTruth from_json(const nlohmann::json& j);
};

// Writes the demo workspace into `dir` (created if needed) and returns the
// ground truth that is also saved as ground_truth.json.
GroundTruth write_demo(const std::filesystem::path& dir, std::uint64_t seed = 20240101);

}  // namespace toxipipe::synth
