#include <gtest/gtest.h>

#include <fstream>

#include "support/tempdir.hpp"
#include "toxipipe/config.hpp"
#include "toxipipe/error.hpp"
#include "toxipipe/synth.hpp"

using namespace toxipipe;
using namespace toxipipe::gateway;
using nlohmann::json;

namespace {

PipelineConfig parse(const json& j) { return config_from_json(j, "/base"); }

json with(json j, const json::json_pointer& ptr, json value) {
  j[ptr] = std::move(value);
  return j;
}

}  // namespace

TEST(Config, DemoDefaults) {
  const auto c = parse(demo_config_json(7));
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.paths.corpus, "/base/corpus.jsonl");
  EXPECT_EQ(c.paths.labels, "/base/work/labels.csv");
  EXPECT_EQ(c.classifier.models, 3u);
  EXPECT_EQ(c.cohort.recollection_interval, 14 * kSecondsPerDay);
  EXPECT_EQ(c.cohort.now, parse_iso8601("2024-04-01T00:00:00Z"));
  EXPECT_EQ(c.signals.permutations, 9999u);
  EXPECT_EQ(c.store_config().target_annotations, 2u);
  EXPECT_EQ(config_hash(c), config_hash(parse(json::parse(demo_config_json(7).dump()))));
  EXPECT_NE(config_hash(c), config_hash(parse(demo_config_json(8))));
}

TEST(Config, AbsolutePathsKept) {
  const auto c = parse(with(demo_config_json(1), "/paths/corpus"_json_pointer, "/data/c.jsonl"));
  EXPECT_EQ(c.paths.corpus, "/data/c.jsonl");
  const auto d = parse(with(demo_config_json(1), "/paths/corpus"_json_pointer, "../x/./c.jsonl"));
  EXPECT_EQ(d.paths.corpus, "/x/c.jsonl");
}

TEST(Config, RejectsUnknownKeys) {
  EXPECT_THROW(parse(with(demo_config_json(1), "/extra"_json_pointer, 1)), ConfigError);
  EXPECT_THROW(parse(with(demo_config_json(1), "/lexvar/theta"_json_pointer, 0.5)), ConfigError);
  EXPECT_THROW(parse(with(demo_config_json(1), "/cohort/bot/min_post"_json_pointer, 3)), ConfigError);
}

TEST(Config, RejectsOutOfRangeAndWrongTypes) {
  const std::vector<std::pair<std::string, json>> bad{
      {"/schema_version", 2},
      {"/lexvar/theta_sem", 1.5},
      {"/lexvar/theta_lex", -0.1},
      {"/lexvar/max_depth", -1},
      {"/lexvar/max_depth", 2.5},
      {"/lexvar/max_neighbors", 0},
      {"/classifier/fusion", "median"},
      {"/classifier/models", 0},
      {"/classifier/class_weights", json::array({1, 1, 1})},
      {"/classifier/class_weights", json::array({1, 0, 1, 1})},
      {"/classifier/char_ngrams", json::array({3, 2})},
      {"/classifier/external_scorers", json::array({"model.bin"})},
      {"/cohort/salt", ""},
      {"/cohort/admission", "vote"},
      {"/cohort/admission_threshold", 1.2},
      {"/cohort/now", "yesterday"},
      {"/signals/permutations", 99},
      {"/signals/emotion_group_by", "author"},
      {"/server/port", 70000},
      {"/corpus/dedup", "yes"},
  };
  for (const auto& [ptr, value] : bad) {
    EXPECT_THROW(parse(with(demo_config_json(1), json::json_pointer(ptr), value)), ConfigError) << ptr << " = " << value;
  }
  auto no_salt = demo_config_json(1);
  no_salt["cohort"].erase("salt");
  EXPECT_THROW(parse(no_salt), ConfigError);
  auto no_corpus = demo_config_json(1);
  no_corpus["paths"].erase("corpus");
  EXPECT_THROW(parse(no_corpus), ConfigError);
}

TEST(Config, LoadAndValidateInputs) {
  TempDir dir;
  synth::write_demo(dir.path());
  {
    std::ofstream out(dir / "config.json");
    out << demo_config_json(3).dump(2);
  }
  const auto c = load_config(dir / "config.json");
  EXPECT_EQ(c.paths.corpus, (dir / "corpus.jsonl").lexically_normal());
  EXPECT_NO_THROW(validate_inputs(c));
  std::filesystem::remove(dir / "regions.csv");
  try {
    validate_inputs(c);
    FAIL() << "missing input accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("region_table"), std::string::npos);
  }
  EXPECT_THROW(load_config(dir / "nope.json"), ConfigError);
  {
    std::ofstream out(dir / "broken.json");
    out << "{\"schema_version\": ";
  }
  EXPECT_THROW(load_config(dir / "broken.json"), ConfigError);
}
