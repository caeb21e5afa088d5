#pragma once

// End-to-end driver: expand -> ingest -> classify -> cohort_admit ->
// bot_filter -> signals -> export. Every stage persists its outputs under the
// work directory and leaves a stamp so a rerun with --resume can skip stages
// whose inputs are unchanged.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "toxipipe/classify.hpp"
#include "toxipipe/config.hpp"
#include "toxipipe/error.hpp"

namespace toxipipe::gateway {

inline constexpr std::array<std::string_view, 7> kStages = {
    "expand", "ingest", "classify", "cohort_admit", "bot_filter", "signals", "export"};

// File layout of a work directory.
struct WorkLayout {
  std::filesystem::path dir;

  std::filesystem::path lexicon() const { return dir / "lexicon.csv"; }
  std::filesystem::path matched() const { return dir / "matched.jsonl"; }
  std::filesystem::path models() const { return dir / "models"; }
  std::filesystem::path eval() const { return dir / "eval.json"; }
  std::filesystem::path predictions() const { return dir / "predictions.jsonl"; }
  std::filesystem::path cohort() const { return dir / "cohort"; }
  std::filesystem::path cohort_stats() const { return dir / "cohort_stats.json"; }
  std::filesystem::path rates() const { return dir / "rates.json"; }
  std::filesystem::path correlation() const { return dir / "correlation.json"; }
  std::filesystem::path emotions() const { return dir / "emotions.json"; }
  std::filesystem::path stats_json() const { return dir / "export" / "stats.json"; }
  std::filesystem::path stats_csv() const { return dir / "export" / "stats.csv"; }
  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path stamp(std::string_view stage) const {
    return dir / "stages" / (std::string(stage) + ".json");
  }
};

struct StageRecord {
  std::string name;
  std::map<std::string, std::uint64_t> counts;
  std::map<std::string, double> metrics;
  double seconds = 0.0;
  bool resumed = false;
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::map<std::string, std::string> input_hashes;  // input name -> sha256
  std::vector<StageRecord> stages;
  std::string tool_version{kToolVersion};
  std::string status = "running";  // completed | failed
  std::optional<std::string> failed_stage;
  std::optional<std::string> error;

  const StageRecord* stage(std::string_view name) const;
};

nlohmann::json manifest_to_json(const RunManifest& m);

class StageFailure : public Error {
 public:
  StageFailure(std::string stage, const std::string& message, RunManifest partial)
      : Error("stage '" + stage + "' failed: " + message),
        stage_(std::move(stage)),
        manifest_(std::move(partial)) {}

  const std::string& stage() const { return stage_; }
  const RunManifest& manifest() const { return manifest_; }

 private:
  std::string stage_;
  RunManifest manifest_;
};

struct RunOptions {
  bool resume = false;
};

// Validates inputs (ConfigError before any stage runs), then runs every
// stage. Throws StageFailure carrying the partial manifest, which is also
// written to the work directory.
RunManifest run_pipeline(const PipelineConfig& config, const RunOptions& options = {});

// Runs one stage against the work directory's persisted intermediates and
// clears the resume stamps of that stage and every later one. Throws
// StageFailure.
StageRecord run_stage(const PipelineConfig& config, std::string_view stage);

// Building blocks shared with the CLI.
std::vector<classify::Example> to_examples(const std::vector<classify::LabeledText>& rows,
                                           const classify::FeatureConfig& features);
std::vector<classify::LinearModel> train_models(const ClassifierSettings& settings,
                                                const std::vector<classify::LabeledText>& rows,
                                                std::uint64_t seed);
// Scores `texts` with every model and external scorer, then fuses.
std::vector<classify::Prediction> score_texts(const std::vector<classify::LinearModel>& models,
                                              const std::vector<std::string>& external_scorers,
                                              std::uint32_t scorer_timeout_ms,
                                              classify::FusionStrategy fusion,
                                              const std::vector<std::string>& ids,
                                              const std::vector<std::string>& texts);

}  // namespace toxipipe::gateway
