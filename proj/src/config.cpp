#include "toxipipe/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "toxipipe/error.hpp"
#include "toxipipe/hashing.hpp"
#include "toxipipe/scorer.hpp"
#include "toxipipe/time.hpp"

namespace toxipipe::gateway {

using nlohmann::json;

namespace {

// Typed access to one JSON object; reports the dotted key path in errors and
// rejects keys that nothing asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown config key '" + join(k) + "'");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, join(key));
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + join(key) + "' has the wrong type");
    }
  }

  template <typename T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError("missing config key '" + join(key) + "'");
    return get<T>(key, T{});
  }

  double number(const std::string& key, double fallback, double lo, double hi) {
    const double v = get<double>(key, fallback);
    if (!std::isfinite(v) || v < lo || v > hi) {
      throw ConfigError("config key '" + join(key) + "' must be in [" + num(lo) + ", " + num(hi) + "]");
    }
    return v;
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback, std::uint64_t lo,
                      std::uint64_t hi) {
    // Documents built in memory hold small counts as signed integers.
    if (has(key) && !(j_.at(key).is_number_unsigned() ||
                      (j_.at(key).is_number_integer() && j_.at(key).get<std::int64_t>() >= 0))) {
      throw ConfigError("config key '" + join(key) + "' must be a non-negative integer");
    }
    const auto v = get<std::uint64_t>(key, fallback);
    if (v < lo || v > hi) {
      throw ConfigError("config key '" + join(key) + "' must be in [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]");
    }
    return v;
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
  static std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

}  // namespace

annotation::StoreConfig PipelineConfig::store_config() const {
  annotation::StoreConfig s;
  s.target_annotations = server.target_annotations;
  s.lease_seconds = server.lease_seconds;
  s.open_enrollment = server.open_enrollment;
  return s;
}

PipelineConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  Section root(j, "");
  c.schema_version = static_cast<int>(root.require<std::int64_t>("schema_version"));
  if (c.schema_version != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version) +
                      " (expected " + std::to_string(kSchemaVersion) + ")");
  }
  c.seed = root.count("seed", 1, 0, std::numeric_limits<std::uint64_t>::max());

  {
    Section p = root.sub("paths");
    const auto path = [&](const char* key) { return resolve(base_dir, p.require<std::string>(key)); };
    c.paths.embeddings = path("embeddings");
    c.paths.seeds = path("seeds");
    c.paths.corpus = path("corpus");
    c.paths.archive = path("archive");
    c.paths.train = path("train");
    c.paths.test = path("test");
    c.paths.region_table = path("region_table");
    c.paths.emotion_lexicon = path("emotion_lexicon");
    c.paths.guideline = path("guideline");
    c.paths.work_dir = path("work_dir");
    c.paths.labels = p.has("labels") ? path("labels") : c.paths.work_dir / "labels.csv";
    if (p.has("population_table")) c.paths.population_table = path("population_table");
  }
  {
    Section s = root.sub("lexvar");
    c.lexvar.theta_sem = s.number("theta_sem", c.lexvar.theta_sem, -1.0, 1.0);
    c.lexvar.theta_lex = s.number("theta_lex", c.lexvar.theta_lex, 0.0, 1.0);
    c.lexvar.max_depth = s.count("max_depth", c.lexvar.max_depth, 0, 100);
    c.lexvar.max_neighbors = s.count("max_neighbors", c.lexvar.max_neighbors, 1, 100000);
    c.lexvar.max_altered_tokens = s.count("max_altered_tokens", c.lexvar.max_altered_tokens, 1, 16);
  }
  {
    Section s = root.sub("corpus");
    c.dedup = s.get<bool>("dedup", true);
  }
  {
    Section s = root.sub("classifier");
    auto& f = c.classifier.features;
    f.hash_bits = static_cast<unsigned>(s.count("hash_bits", f.hash_bits, 4, 24));
    const auto range = [&](const char* key, std::size_t& lo, std::size_t& hi) {
      if (!s.has(key)) return;
      const auto v = s.get<std::vector<std::size_t>>(key, {});
      if (v.size() != 2) throw ConfigError("config key '" + s.join(key) + "' must be [min, max]");
      lo = v[0];
      hi = v[1];
    };
    range("word_ngrams", f.word_min, f.word_max);
    range("char_ngrams", f.char_min, f.char_max);
    try {
      f.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("classifier features: ") + e.what());
    }
    auto& t = c.classifier.train;
    t.epochs = s.count("epochs", t.epochs, 1, 10000);
    t.learning_rate = s.number("learning_rate", t.learning_rate, 1e-9, 10.0);
    t.l2 = s.number("l2", t.l2, 0.0, 1.0);
    if (s.has("class_weights")) {
      const auto w = s.get<std::vector<double>>("class_weights", {});
      if (w.size() != kNumClasses) throw ConfigError("classifier.class_weights needs 4 values");
      for (std::size_t i = 0; i < kNumClasses; ++i) {
        if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
          throw ConfigError("classifier.class_weights must be positive");
        }
        t.class_weights[i] = w[i];
      }
    }
    c.classifier.models = s.count("models", 1, 1, 64);
    const auto fusion = classify::parse_fusion(s.get<std::string>("fusion", "mean"));
    if (!fusion) throw ConfigError("classifier.fusion must be 'mean' or 'majority'");
    c.classifier.fusion = *fusion;
    c.classifier.external_scorers = s.get<std::vector<std::string>>("external_scorers", {});
    for (const auto& e : c.classifier.external_scorers) {
      if (!classify::ScorerEndpoint::looks_like_endpoint(e)) {
        throw ConfigError("classifier.external_scorers: '" + e + "' is not exec:... or tcp:host:port");
      }
    }
    c.classifier.scorer_timeout_ms =
        static_cast<std::uint32_t>(s.count("scorer_timeout_ms", 30000, 1, 3600000));
  }
  {
    Section s = root.sub("cohort");
    c.cohort.salt = s.require<std::string>("salt");
    if (c.cohort.salt.empty()) throw ConfigError("cohort.salt must not be empty");
    const auto mode = s.get<std::string>("admission", "argmax");
    if (mode == "argmax") {
      c.cohort.admission.mode = cohort::AdmissionPolicy::Mode::Argmax;
    } else if (mode == "threshold") {
      c.cohort.admission.mode = cohort::AdmissionPolicy::Mode::Threshold;
    } else {
      throw ConfigError("cohort.admission must be 'argmax' or 'threshold'");
    }
    c.cohort.admission.threshold = s.number("admission_threshold", 0.5, 0.0, 1.0);
    c.cohort.recollection_interval =
        static_cast<UtcSeconds>(s.count("recollection_interval_days", 14, 1, 3650)) * kSecondsPerDay;
    if (s.has("now")) {
      try {
        c.cohort.now = parse_iso8601(s.get<std::string>("now", ""));
      } catch (const FormatError& e) {
        throw ConfigError(std::string("cohort.now: ") + e.what());
      }
    }
    c.cohort.bot_threshold = s.number("bot_threshold", 0.5, 0.0, 2.0);
    Section b = s.sub("bot");
    auto& bot = c.cohort.bot;
    bot.min_posts = b.count("min_posts", bot.min_posts, 1, 1000000);
    bot.max_posts_per_day = b.number("max_posts_per_day", bot.max_posts_per_day, 0.0, 1e9);
    bot.max_duplicate_ratio = b.number("max_duplicate_ratio", bot.max_duplicate_ratio, 0.0, 1.0);
    bot.max_url_ratio = b.number("max_url_ratio", bot.max_url_ratio, 0.0, 1.0);
    bot.min_gap_cv = b.number("min_gap_cv", bot.min_gap_cv, 0.0, 1e9);
    bot.min_gaps_for_regularity =
        b.count("min_gaps_for_regularity", bot.min_gaps_for_regularity, 1, 1000000);
  }
  {
    Section s = root.sub("signals");
    c.signals.permutations = s.count("permutations", 9999, 100, 100000000);
    c.signals.min_support = s.count("min_support", 30, 0, 1000000000);
    c.signals.keep_low_support = s.get<bool>("keep_low_support", false);
    c.signals.emotion_group_by = s.get<std::string>("emotion_group_by", "label");
    if (c.signals.emotion_group_by != "label" && c.signals.emotion_group_by != "source" &&
        c.signals.emotion_group_by != "region") {
      throw ConfigError("signals.emotion_group_by must be label, source or region");
    }
  }
  {
    Section s = root.sub("server");
    c.server.bind = s.get<std::string>("bind", c.server.bind);
    c.server.port = static_cast<std::uint16_t>(s.count("port", c.server.port, 0, 65535));
    c.server.open_enrollment = s.get<bool>("open_enrollment", true);
    c.server.annotator_tokens = s.get<std::vector<std::string>>("annotator_tokens", {});
    c.server.target_annotations = s.count("target_annotations", 2, 1, 100);
    c.server.lease_seconds = static_cast<UtcSeconds>(s.count("lease_seconds", 600, 1, 86400 * 30));
  }
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, std::filesystem::absolute(path).parent_path());
}

void validate_inputs(const PipelineConfig& c) {
  const std::pair<const char*, const std::filesystem::path*> inputs[] = {
      {"embeddings", &c.paths.embeddings},
      {"seeds", &c.paths.seeds},
      {"corpus", &c.paths.corpus},
      {"archive", &c.paths.archive},
      {"train", &c.paths.train},
      {"test", &c.paths.test},
      {"region_table", &c.paths.region_table},
      {"emotion_lexicon", &c.paths.emotion_lexicon},
      {"guideline", &c.paths.guideline},
  };
  for (const auto& [name, p] : inputs) {
    if (!std::filesystem::is_regular_file(*p)) {
      throw ConfigError(std::string("paths.") + name + ": no such file " + p->string());
    }
  }
  if (c.paths.population_table && !std::filesystem::is_regular_file(*c.paths.population_table)) {
    throw ConfigError("paths.population_table: no such file " + c.paths.population_table->string());
  }
}

json demo_config_json(std::uint64_t seed) {
  return {
      {"schema_version", kSchemaVersion},
      {"seed", seed},
      {"paths",
       {{"embeddings", "embeddings.txt"},
        {"seeds", "seeds.txt"},
        {"corpus", "corpus.jsonl"},
        {"archive", "archive.jsonl"},
        {"train", "train.jsonl"},
        {"test", "test.jsonl"},
        {"region_table", "regions.csv"},
        {"emotion_lexicon", "emotions.tsv"},
        {"guideline", "guideline.md"},
        {"work_dir", "work"}}},
      {"lexvar", {{"theta_sem", 0.70}, {"theta_lex", 0.65}, {"max_depth", 3}, {"max_neighbors", 50}}},
      {"corpus", {{"dedup", true}}},
      {"classifier", {{"models", 3}, {"fusion", "mean"}, {"epochs", 10}}},
      {"cohort",
       {{"salt", "demo-salt-replace-for-real-data"},
        {"admission", "argmax"},
        {"recollection_interval_days", 14},
        {"now", "2024-04-01T00:00:00Z"},
        {"bot_threshold", 0.5}}},
      {"signals", {{"permutations", 9999}, {"min_support", 30}, {"emotion_group_by", "label"}}},
      {"server", {{"bind", "127.0.0.1"}, {"port", 8080}, {"open_enrollment", true}, {"target_annotations", 2}}},
  };
}

std::string config_hash(const PipelineConfig& config) { return sha256_hex(config.raw.dump()); }

}  // namespace toxipipe::gateway
