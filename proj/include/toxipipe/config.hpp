#pragma once

// Versioned JSON run configuration. Relative paths resolve against the
// directory holding the config file. See docs/config.md for the schema.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "toxipipe/annotation.hpp"
#include "toxipipe/classify.hpp"
#include "toxipipe/cohort.hpp"
#include "toxipipe/lexvar.hpp"

namespace toxipipe::gateway {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

struct Paths {
  std::filesystem::path embeddings;
  std::filesystem::path seeds;
  std::filesystem::path corpus;
  std::filesystem::path archive;
  std::filesystem::path train;
  std::filesystem::path test;
  std::filesystem::path region_table;
  std::filesystem::path emotion_lexicon;
  std::filesystem::path guideline;
  std::filesystem::path work_dir;
  std::filesystem::path labels;
  std::optional<std::filesystem::path> population_table;
};

struct ClassifierSettings {
  classify::FeatureConfig features;
  classify::TrainParams train;  // seed is replaced per model
  std::size_t models = 1;
  classify::FusionStrategy fusion = classify::FusionStrategy::Mean;
  std::vector<std::string> external_scorers;  // "exec:..." or "tcp:host:port"
  std::uint32_t scorer_timeout_ms = 30000;
};

struct CohortSettings {
  std::string salt;
  cohort::AdmissionPolicy admission;
  UtcSeconds recollection_interval = 14 * kSecondsPerDay;
  std::optional<UtcSeconds> now;  // collection time; defaults to the newest archive post
  double bot_threshold = 0.5;
  cohort::BotConfig bot;
};

struct SignalsSettings {
  std::size_t permutations = 9999;
  std::size_t min_support = 30;
  bool keep_low_support = false;
  std::string emotion_group_by = "label";  // label | source | region
};

struct ServerSettings {
  std::string bind = "127.0.0.1";
  std::uint16_t port = 8080;
  bool open_enrollment = true;
  std::vector<std::string> annotator_tokens;
  std::size_t target_annotations = 2;
  UtcSeconds lease_seconds = 600;
};

struct PipelineConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  std::filesystem::path base_dir;
  Paths paths;
  lexvar::ExpansionConfig lexvar;
  bool dedup = true;
  ClassifierSettings classifier;
  CohortSettings cohort;
  SignalsSettings signals;
  ServerSettings server;
  nlohmann::json raw;  // the document as read

  annotation::StoreConfig store_config() const;
};

// Parses and range-checks; ConfigError on any problem, including unknown
// keys. Does not touch the filesystem.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

// ConfigError if any input path is missing.
void validate_inputs(const PipelineConfig& config);

// Config document for a demo workspace written by synth::write_demo, with
// paths relative to that directory.
nlohmann::json demo_config_json(std::uint64_t seed);

// SHA-256 of the canonical (sorted-key, compact) config document.
std::string config_hash(const PipelineConfig& config);

}  // namespace toxipipe::gateway
