#pragma once

// Four-class post filtering: hashed n-gram features, a multinomial logistic
// regression baseline trained by SGD, score fusion across models, and
// minority-class centred evaluation.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "toxipipe/labels.hpp"

namespace toxipipe::classify {

struct FeatureConfig {
  unsigned hash_bits = 18;  // hash space = 2^hash_bits
  std::size_t word_min = 1;
  std::size_t word_max = 3;  // 0 disables word n-grams
  std::size_t char_min = 2;
  std::size_t char_max = 5;  // 0 disables character n-grams
  std::uint64_t hash_seed = 0;

  std::uint32_t dimension() const { return std::uint32_t{1} << hash_bits; }
  void validate() const;

  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

// Sparse vector, entries sorted by index with no duplicates.
struct FeatureVector {
  std::vector<std::pair<std::uint32_t, double>> entries;
  std::uint32_t dimension = 0;

  bool empty() const { return entries.empty(); }
};

// Word n-grams over whitespace tokens and character n-grams over the scalar
// values of the whole text, hashed into 2^hash_bits buckets; each bucket
// holds log(1 + count).
FeatureVector featurize(std::string_view normalized_text, const FeatureConfig& config);

struct Prediction {
  std::string post_id;
  std::array<double, kNumClasses> scores{};
  LabelClass argmax = LabelClass::NonmedicalUse;

  double score(LabelClass c) const { return scores[index_of(c)]; }

  // Fills argmax with the lowest-index class attaining the maximum.
  static Prediction from_scores(std::string post_id, const std::array<double, kNumClasses>& scores);
};

struct TrainParams {
  std::size_t epochs = 10;
  double learning_rate = 0.05;
  double l2 = 1e-6;
  std::array<double, kNumClasses> class_weights{1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 1;

  friend bool operator==(const TrainParams&, const TrainParams&) = default;
};

struct Example {
  FeatureVector features;
  LabelClass label = LabelClass::Unrelated;
};

class LinearModel {
 public:
  LinearModel() = default;
  explicit LinearModel(const FeatureConfig& features);

  const FeatureConfig& features() const { return features_; }
  std::uint32_t dimension() const { return features_.dimension(); }

  // Class-major: weight(c, j) == weights()[c * dimension() + j].
  std::span<double> weights() { return weights_; }
  std::span<const double> weights() const { return weights_; }
  std::array<double, kNumClasses>& bias() { return bias_; }
  const std::array<double, kNumClasses>& bias() const { return bias_; }
  double weight(LabelClass c, std::uint32_t j) const {
    return weights_[index_of(c) * dimension() + j];
  }

  std::array<double, kNumClasses> logits(const FeatureVector& x) const;

  TrainParams params;
  std::vector<double> epoch_losses;

  friend bool operator==(const LinearModel&, const LinearModel&) = default;

 private:
  FeatureConfig features_;
  std::vector<double> weights_;
  std::array<double, kNumClasses> bias_{};
};

// Multinomial logistic regression by SGD on the class-weighted
// cross-entropy plus (l2 / 2) * ||W||^2 (biases unregularized). One pass per
// epoch over a seeded shuffle; deterministic for a given seed. Throws
// ContractError unless at least two classes are present.
LinearModel train(std::span<const Example> examples, const FeatureConfig& features,
                  const TrainParams& params);

struct Objective {
  double loss = 0.0;
  // Same layout as LinearModel::weights() followed by the kNumClasses biases.
  std::vector<double> gradient;
};

// Full-batch objective: mean class-weighted cross-entropy + (l2/2)||W||^2,
// and its analytic gradient. This is the function SGD descends.
Objective loss_and_gradient(const LinearModel& model, std::span<const Example> examples,
                            const TrainParams& params);

Prediction predict(const LinearModel& model, const FeatureVector& x, std::string post_id = {});

// Numerically stable softmax.
std::array<double, kNumClasses> softmax(const std::array<double, kNumClasses>& logits);

enum class FusionStrategy { Mean, Majority };

std::string_view to_string(FusionStrategy s);
std::optional<FusionStrategy> parse_fusion(std::string_view s);

// Combines k >= 1 predictions for one post. Both strategies report the
// renormalized mean scores. Mean takes their argmax; Majority takes the
// most-voted argmax, breaking vote ties by mean score, then declaration
// order. k == 1 returns the input unchanged.
Prediction fuse(std::span<const Prediction> predictions, FusionStrategy strategy);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // gold count
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  std::array<ClassMetrics, kNumClasses> per_class{};
  // confusion[gold][predicted]
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  double micro_recall = 0.0;
  std::size_t n = 0;

  const ClassMetrics& nonmedical() const { return per_class[index_of(LabelClass::NonmedicalUse)]; }
};

// Every prediction must have a gold label (ContractError otherwise); 0/0
// ratios are reported as 0.
EvalReport evaluate(std::span<const Prediction> predictions,
                    const std::map<std::string, LabelClass>& gold);

nlohmann::json eval_to_json(const EvalReport& report);

// Versioned JSON container; only non-zero weight rows are stored.
void save_model(const LinearModel& model, const std::filesystem::path& path);
LinearModel load_model(const std::filesystem::path& path);
nlohmann::json model_to_json(const LinearModel& model);
LinearModel model_from_json(const nlohmann::json& j);

nlohmann::json prediction_to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j);
void write_predictions(const std::filesystem::path& path, std::span<const Prediction> preds);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

struct LabeledText {
  std::string id;
  std::string text;
  LabelClass label = LabelClass::Unrelated;
};

// JSONL with "text" and "label" (and optional "post_id").
std::vector<LabeledText> read_labeled_jsonl(const std::filesystem::path& path);

}  // namespace toxipipe::classify
