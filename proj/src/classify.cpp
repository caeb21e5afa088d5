#include "toxipipe/classify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include "toxipipe/error.hpp"
#include "toxipipe/random.hpp"
#include "toxipipe/text.hpp"

namespace toxipipe::classify {

using nlohmann::json;

void FeatureConfig::validate() const {
  if (hash_bits < 1 || hash_bits > 28) throw ContractError("hash_bits must be in [1, 28]");
  if (word_max != 0 && (word_min < 1 || word_min > word_max)) {
    throw ContractError("word n-gram range is invalid");
  }
  if (char_max != 0 && (char_min < 1 || char_min > char_max)) {
    throw ContractError("character n-gram range is invalid");
  }
}

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

// splitmix64 finalizer; spreads FNV output over the low bits we keep.
std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t seeded(std::uint64_t seed, char kind) {
  std::uint64_t h = fnv_bytes(kFnvOffset, &seed, sizeof seed);
  return fnv_bytes(h, &kind, 1);
}

}  // namespace

FeatureVector featurize(std::string_view normalized_text, const FeatureConfig& config) {
  config.validate();
  const std::uint32_t mask = config.dimension() - 1;
  std::unordered_map<std::uint32_t, double> counts;

  if (config.word_max != 0) {
    const auto words = text::split_whitespace(normalized_text);
    const std::uint64_t base = seeded(config.hash_seed, 'w');
    for (std::size_t n = config.word_min; n <= config.word_max; ++n) {
      for (std::size_t i = 0; i + n <= words.size(); ++i) {
        std::uint64_t h = base;
        for (std::size_t k = 0; k < n; ++k) {
          if (k != 0) h = fnv_bytes(h, " ", 1);
          h = fnv_bytes(h, words[i + k].data(), words[i + k].size());
        }
        counts[static_cast<std::uint32_t>(mix(h)) & mask] += 1.0;
      }
    }
  }
  if (config.char_max != 0) {
    const std::u32string cps = text::decode_utf8(normalized_text);
    const std::uint64_t base = seeded(config.hash_seed, 'c');
    for (std::size_t n = config.char_min; n <= config.char_max; ++n) {
      for (std::size_t i = 0; i + n <= cps.size(); ++i) {
        const std::uint64_t h = fnv_bytes(base, cps.data() + i, n * sizeof(char32_t));
        counts[static_cast<std::uint32_t>(mix(h)) & mask] += 1.0;
      }
    }
  }
  FeatureVector fv;
  fv.dimension = config.dimension();
  fv.entries.reserve(counts.size());
  for (const auto& [idx, c] : counts) fv.entries.emplace_back(idx, std::log1p(c));
  std::sort(fv.entries.begin(), fv.entries.end());
  return fv;
}

Prediction Prediction::from_scores(std::string post_id,
                                   const std::array<double, kNumClasses>& scores) {
  Prediction p;
  p.post_id = std::move(post_id);
  p.scores = scores;
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (scores[c] > scores[best]) best = c;
  }
  p.argmax = static_cast<LabelClass>(best);
  return p;
}

LinearModel::LinearModel(const FeatureConfig& features)
    : features_(features),
      weights_(static_cast<std::size_t>(features.dimension()) * kNumClasses, 0.0) {
  features_.validate();
}

std::array<double, kNumClasses> LinearModel::logits(const FeatureVector& x) const {
  std::array<double, kNumClasses> z = bias_;
  const std::size_t dim = dimension();
  for (const auto& [j, v] : x.entries) {
    for (std::size_t c = 0; c < kNumClasses; ++c) z[c] += weights_[c * dim + j] * v;
  }
  return z;
}

std::array<double, kNumClasses> softmax(const std::array<double, kNumClasses>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::array<double, kNumClasses> p{};
  double sum = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    p[c] = std::exp(logits[c] - m);
    sum += p[c];
  }
  for (auto& v : p) v /= sum;
  return p;
}

namespace {

void check_dimension(const LinearModel& model, const FeatureVector& x) {
  if (x.dimension != model.dimension()) {
    throw ContractError("feature vector hash space (" + std::to_string(x.dimension) +
                        ") differs from the model's (" + std::to_string(model.dimension()) + ")");
  }
}

void check_trainable(std::span<const Example> examples, const LinearModel& model,
                     const TrainParams& params) {
  std::array<bool, kNumClasses> present{};
  for (const auto& e : examples) {
    check_dimension(model, e.features);
    present[index_of(e.label)] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2) {
    throw ContractError("training set must contain at least two classes");
  }
  for (double w : params.class_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ContractError("class weights must be finite and >= 0");
  }
  if (!(params.learning_rate > 0.0) || !(params.l2 >= 0.0)) {
    throw ContractError("learning_rate must be > 0 and l2 >= 0");
  }
}

}  // namespace

LinearModel train(std::span<const Example> examples, const FeatureConfig& features,
                  const TrainParams& params) {
  LinearModel model(features);
  check_trainable(examples, model, params);
  model.params = params;

  const std::size_t dim = model.dimension();
  std::vector<double> v(model.weights().begin(), model.weights().end());
  double scale = 1.0;  // W = scale * v, so the L2 shrink is O(1) per step
  auto& bias = model.bias();
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(params.seed);
  const double shrink = 1.0 - params.learning_rate * params.l2;
  if (!(shrink > 0.0)) throw ContractError("learning_rate * l2 must be < 1");

  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const Example& ex = examples[idx];
      std::array<double, kNumClasses> z = bias;
      for (const auto& [j, x] : ex.features.entries) {
        for (std::size_t c = 0; c < kNumClasses; ++c) z[c] += scale * v[c * dim + j] * x;
      }
      const auto p = softmax(z);
      const std::size_t y = index_of(ex.label);
      const double cw = params.class_weights[y];
      epoch_loss += -cw * std::log(std::max(p[y], 1e-300));
      if (params.l2 > 0.0) scale *= shrink;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double g = cw * (p[c] - (c == y ? 1.0 : 0.0));
        if (g == 0.0) continue;
        const double step = params.learning_rate * g / scale;
        for (const auto& [j, x] : ex.features.entries) v[c * dim + j] -= step * x;
        bias[c] -= params.learning_rate * g;
      }
      if (scale < 1e-9) {
        for (double& w : v) w *= scale;
        scale = 1.0;
      }
    }
    model.epoch_losses.push_back(examples.empty() ? 0.0
                                                  : epoch_loss / static_cast<double>(examples.size()));
  }
  auto w = model.weights();
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = scale * v[k];
  return model;
}

Objective loss_and_gradient(const LinearModel& model, std::span<const Example> examples,
                            const TrainParams& params) {
  const std::size_t dim = model.dimension();
  const auto w = model.weights();
  Objective obj;
  obj.gradient.assign(w.size() + kNumClasses, 0.0);
  if (examples.empty()) return obj;
  const double inv_n = 1.0 / static_cast<double>(examples.size());
  for (const auto& ex : examples) {
    check_dimension(model, ex.features);
    const auto p = softmax(model.logits(ex.features));
    const std::size_t y = index_of(ex.label);
    const double cw = params.class_weights[y];
    obj.loss += -cw * std::log(std::max(p[y], 1e-300)) * inv_n;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double g = cw * (p[c] - (c == y ? 1.0 : 0.0)) * inv_n;
      for (const auto& [j, x] : ex.features.entries) obj.gradient[c * dim + j] += g * x;
      obj.gradient[w.size() + c] += g;
    }
  }
  double sq = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    sq += w[k] * w[k];
    obj.gradient[k] += params.l2 * w[k];
  }
  obj.loss += 0.5 * params.l2 * sq;
  return obj;
}

Prediction predict(const LinearModel& model, const FeatureVector& x, std::string post_id) {
  check_dimension(model, x);
  return Prediction::from_scores(std::move(post_id), softmax(model.logits(x)));
}

std::string_view to_string(FusionStrategy s) { return s == FusionStrategy::Mean ? "mean" : "majority"; }

std::optional<FusionStrategy> parse_fusion(std::string_view s) {
  if (s == "mean") return FusionStrategy::Mean;
  if (s == "majority") return FusionStrategy::Majority;
  return std::nullopt;
}

Prediction fuse(std::span<const Prediction> predictions, FusionStrategy strategy) {
  if (predictions.empty()) throw ContractError("fuse: no predictions");
  const std::string& id = predictions.front().post_id;
  for (const auto& p : predictions) {
    if (p.post_id != id) throw ContractError("fuse: predictions for different posts");
  }
  if (predictions.size() == 1) return predictions.front();

  std::array<double, kNumClasses> mean{};
  std::array<std::size_t, kNumClasses> votes{};
  for (const auto& p : predictions) {
    for (std::size_t c = 0; c < kNumClasses; ++c) mean[c] += p.scores[c];
    ++votes[index_of(p.argmax)];
  }
  double total = 0.0;
  for (double& m : mean) {
    m /= static_cast<double>(predictions.size());
    total += m;
  }
  if (total > 0.0) {
    for (double& m : mean) m /= total;
  }
  Prediction out = Prediction::from_scores(id, mean);
  if (strategy == FusionStrategy::Majority) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c) {
      if (votes[c] > votes[best] || (votes[c] == votes[best] && mean[c] > mean[best])) best = c;
    }
    out.argmax = static_cast<LabelClass>(best);
  }
  return out;
}

EvalReport evaluate(std::span<const Prediction> predictions,
                    const std::map<std::string, LabelClass>& gold) {
  if (predictions.empty()) throw ContractError("evaluate: no predictions");
  EvalReport r;
  for (const auto& p : predictions) {
    const auto it = gold.find(p.post_id);
    if (it == gold.end()) throw ContractError("evaluate: no gold label for '" + p.post_id + "'");
    ++r.confusion[index_of(it->second)][index_of(p.argmax)];
  }
  r.n = predictions.size();
  std::size_t trace = 0;
  std::size_t tp_sum = 0, tp_fn_sum = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ClassMetrics& m = r.per_class[c];
    m.tp = r.confusion[c][c];
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      if (k == c) continue;
      m.fn += r.confusion[c][k];
      m.fp += r.confusion[k][c];
    }
    m.support = m.tp + m.fn;
    const auto ratio = [](std::size_t num, std::size_t den) {
      return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = (m.precision + m.recall) == 0.0
               ? 0.0
               : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    f1_sum += m.f1;
    trace += m.tp;
    tp_sum += m.tp;
    tp_fn_sum += m.tp + m.fn;
  }
  r.macro_f1 = f1_sum / static_cast<double>(kNumClasses);
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.n);
  r.micro_recall = static_cast<double>(tp_sum) / static_cast<double>(tp_fn_sum);
  return r;
}

json eval_to_json(const EvalReport& r) {
  json j;
  json per_class = json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& m = r.per_class[c];
    per_class[std::string(to_string(static_cast<LabelClass>(c)))] = {
        {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support},
        {"tp", m.tp},               {"fp", m.fp},         {"fn", m.fn}};
  }
  j["per_class"] = std::move(per_class);
  j["confusion"] = r.confusion;  // rows gold, columns predicted
  j["macro_f1"] = r.macro_f1;
  j["accuracy"] = r.accuracy;
  j["n"] = r.n;
  j["nonmedical_use"] = {{"precision", r.nonmedical().precision},
                         {"recall", r.nonmedical().recall},
                         {"f1", r.nonmedical().f1}};
  return j;
}

namespace {
constexpr const char* kModelFormat = "toxipipe-linear-model";
constexpr int kModelVersion = 1;
}  // namespace

json model_to_json(const LinearModel& model) {
  const auto& f = model.features();
  json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  json classes = json::array();
  for (auto c : kAllClasses) classes.push_back(to_string(c));
  j["classes"] = std::move(classes);
  j["features"] = {{"hash_bits", f.hash_bits}, {"word_min", f.word_min}, {"word_max", f.word_max},
                   {"char_min", f.char_min},   {"char_max", f.char_max}, {"hash_seed", f.hash_seed}};
  j["bias"] = model.bias();
  json rows = json::array();
  const std::size_t dim = model.dimension();
  const auto w = model.weights();
  for (std::size_t k = 0; k < dim; ++k) {
    bool nonzero = false;
    for (std::size_t c = 0; c < kNumClasses; ++c) nonzero = nonzero || w[c * dim + k] != 0.0;
    if (!nonzero) continue;
    json row = json::array({k});
    for (std::size_t c = 0; c < kNumClasses; ++c) row.push_back(w[c * dim + k]);
    rows.push_back(std::move(row));
  }
  j["weights"] = std::move(rows);
  const auto& p = model.params;
  j["training"] = {{"epochs", p.epochs},
                   {"learning_rate", p.learning_rate},
                   {"l2", p.l2},
                   {"class_weights", p.class_weights},
                   {"seed", p.seed},
                   {"epoch_losses", model.epoch_losses}};
  return j;
}

LinearModel model_from_json(const json& j) {
  try {
    if (j.at("format") != kModelFormat) throw FormatError("not a toxipipe linear model");
    if (j.at("version").get<int>() != kModelVersion) {
      throw FormatError("unsupported model version " + j.at("version").dump());
    }
    const auto& classes = j.at("classes");
    if (classes.size() != kNumClasses) throw FormatError("model must have exactly 4 classes");
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (classes[c] != to_string(static_cast<LabelClass>(c))) {
        throw FormatError("model class order does not match the label scheme");
      }
    }
    FeatureConfig f;
    const auto& jf = j.at("features");
    f.hash_bits = jf.at("hash_bits").get<unsigned>();
    f.word_min = jf.at("word_min").get<std::size_t>();
    f.word_max = jf.at("word_max").get<std::size_t>();
    f.char_min = jf.at("char_min").get<std::size_t>();
    f.char_max = jf.at("char_max").get<std::size_t>();
    f.hash_seed = jf.at("hash_seed").get<std::uint64_t>();
    LinearModel model(f);
    model.bias() = j.at("bias").get<std::array<double, kNumClasses>>();
    const std::size_t dim = model.dimension();
    auto w = model.weights();
    for (const auto& row : j.at("weights")) {
      const auto k = row.at(0).get<std::size_t>();
      if (k >= dim || row.size() != kNumClasses + 1) throw FormatError("bad weight row");
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double v = row.at(c + 1).get<double>();
        if (!std::isfinite(v)) throw FormatError("non-finite weight");
        w[c * dim + k] = v;
      }
    }
    if (auto it = j.find("training"); it != j.end()) {
      auto& p = model.params;
      p.epochs = it->value("epochs", p.epochs);
      p.learning_rate = it->value("learning_rate", p.learning_rate);
      p.l2 = it->value("l2", p.l2);
      if (it->contains("class_weights")) {
        p.class_weights = it->at("class_weights").get<std::array<double, kNumClasses>>();
      }
      p.seed = it->value("seed", p.seed);
      if (it->contains("epoch_losses")) {
        model.epoch_losses = it->at("epoch_losses").get<std::vector<double>>();
      }
    }
    return model;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const LinearModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << model_to_json(model).dump() << '\n';
}

LinearModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  try {
    return model_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

json prediction_to_json(const Prediction& p) {
  json scores = json::object();
  for (auto c : kAllClasses) scores[std::string(to_string(c))] = p.score(c);
  return {{"post_id", p.post_id}, {"scores", std::move(scores)}, {"label", to_string(p.argmax)}};
}

Prediction prediction_from_json(const json& j) {
  try {
    std::array<double, kNumClasses> scores{};
    const auto& js = j.at("scores");
    for (auto c : kAllClasses) scores[index_of(c)] = js.at(std::string(to_string(c))).get<double>();
    Prediction p = Prediction::from_scores(j.at("post_id").get<std::string>(), scores);
    if (auto it = j.find("label"); it != j.end()) p.argmax = require_label(it->get<std::string>());
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed prediction: ") + e.what());
  }
}

void write_predictions(const std::filesystem::path& path, std::span<const Prediction> preds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : preds) out << prediction_to_json(p).dump() << '\n';
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(prediction_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<LabeledText> read_labeled_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<LabeledText> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      LabeledText t;
      t.text = j.at("text").get<std::string>();
      t.label = require_label(j.at("label").get<std::string>());
      t.id = j.value("post_id", std::to_string(line_no));
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace toxipipe::classify
