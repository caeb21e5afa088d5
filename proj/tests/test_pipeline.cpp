#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support/tempdir.hpp"
#include "toxipipe/config.hpp"
#include "toxipipe/pipeline.hpp"
#include "toxipipe/synth.hpp"

using namespace toxipipe;
using namespace toxipipe::gateway;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Workspace {
  TempDir dir;
  synth::GroundTruth truth;
  PipelineConfig config;

  Workspace() {
    truth = synth::write_demo(dir.path());
    std::ofstream(dir / "config.json") << demo_config_json(truth.seed).dump(2);
    config = load_config(dir / "config.json");
  }
  WorkLayout layout() const { return {config.paths.work_dir}; }
};

// One completed run shared by the read-only checks.
const Workspace& completed() {
  static const Workspace* w = [] {
    auto* ws = new Workspace;
    run_pipeline(ws->config);
    return ws;
  }();
  return *w;
}

}  // namespace

TEST(Pipeline, ManifestCoversEveryStage) {
  const auto& w = completed();
  const auto j = nlohmann::json::parse(slurp(w.layout().manifest()));
  EXPECT_EQ(j.at("status"), "completed");
  ASSERT_EQ(j.at("stages").size(), kStages.size());
  for (std::size_t i = 0; i < kStages.size(); ++i) {
    const auto& s = j.at("stages")[i];
    EXPECT_EQ(s.at("name"), kStages[i]);
    bool any = false;
    for (const auto& [k, v] : s.at("counts").items()) any = any || v.get<std::uint64_t>() > 0;
    EXPECT_TRUE(any) << kStages[i];
  }
  EXPECT_EQ(j.at("input_hashes").size(), 8u);
  EXPECT_EQ(j.at("stages")[1].at("counts").at("matched"), w.truth.seed_posts + w.truth.variant_posts);
  EXPECT_EQ(j.at("stages")[4].at("counts").at("excluded"), w.truth.bots_excluded);
  EXPECT_TRUE(fs::exists(w.layout().stats_json()));
  EXPECT_TRUE(fs::exists(w.layout().stats_csv()));
}

TEST(Pipeline, MissingInputFailsBeforeAnyStage) {
  Workspace w;
  fs::remove(w.dir / "corpus.jsonl");
  EXPECT_THROW(run_pipeline(w.config), ConfigError);
  EXPECT_FALSE(fs::exists(w.layout().dir));
}

TEST(Pipeline, IdenticalInputsGiveIdenticalExports) {
  const auto& a = completed();
  Workspace b;
  const auto m = run_pipeline(b.config);
  EXPECT_EQ(slurp(a.layout().stats_json()), slurp(b.layout().stats_json()));
  EXPECT_EQ(slurp(a.layout().stats_csv()), slurp(b.layout().stats_csv()));
  EXPECT_EQ(m.run_id, nlohmann::json::parse(slurp(a.layout().manifest())).at("run_id"));
}

TEST(Pipeline, ResumeSkipsFinishedStages) {
  Workspace w;
  const auto first = run_pipeline(w.config);
  const auto json_before = slurp(w.layout().stats_json());
  const auto again = run_pipeline(w.config, {.resume = true});
  ASSERT_EQ(again.stages.size(), kStages.size());
  for (const auto& s : again.stages) EXPECT_TRUE(s.resumed) << s.name;
  EXPECT_EQ(again.stage("ingest")->counts, first.stage("ingest")->counts);
  EXPECT_EQ(slurp(w.layout().stats_json()), json_before);

  // Rerunning one stage clears the stamps after it.
  const auto rec = run_stage(w.config, "signals");
  EXPECT_EQ(rec.counts.at("correlated_regions"), 10u);
  EXPECT_TRUE(fs::exists(w.layout().stamp("bot_filter")));
  EXPECT_FALSE(fs::exists(w.layout().stamp("export")));
  const auto partial = run_pipeline(w.config, {.resume = true});
  EXPECT_TRUE(partial.stage("bot_filter")->resumed);
  EXPECT_FALSE(partial.stage("signals")->resumed);
  EXPECT_FALSE(partial.stage("export")->resumed);
  EXPECT_EQ(slurp(w.layout().stats_json()), json_before);

  // A changed input invalidates everything.
  std::ofstream(w.dir / "seeds.txt", std::ios::app) << "\n# trailing comment\n";
  const auto changed = run_pipeline(w.config, {.resume = true});
  for (const auto& s : changed.stages) EXPECT_FALSE(s.resumed) << s.name;
  EXPECT_THROW(run_stage(w.config, "nonsense"), Error);
}

TEST(Pipeline, StageFailureCarriesPartialManifest) {
  Workspace w;
  std::ofstream(w.dir / "regions.csv", std::ios::app) << "R01,3.0\n";  // duplicate region
  try {
    run_pipeline(w.config);
    FAIL() << "expected a stage failure";
  } catch (const StageFailure& e) {
    EXPECT_EQ(e.stage(), "signals");
    EXPECT_EQ(e.manifest().status, "failed");
    EXPECT_EQ(e.manifest().failed_stage, "signals");
    EXPECT_TRUE(e.manifest().stage("bot_filter"));
    EXPECT_FALSE(e.manifest().stage("export"));
  }
  const auto j = nlohmann::json::parse(slurp(w.layout().manifest()));
  EXPECT_EQ(j.at("status"), "failed");
  EXPECT_EQ(j.at("failed_stage"), "signals");
  EXPECT_FALSE(fs::exists(w.layout().stats_json()));
}

TEST(Pipeline, ExportsCarryNoIdentifiers) {
  const auto& w = completed();
  const std::string exported = slurp(w.layout().stats_json()) + slurp(w.layout().stats_csv());
  std::ifstream in(w.dir / "corpus.jsonl");
  std::string line;
  std::set<std::string> authors;
  while (std::getline(in, line)) {
    try {
      authors.insert(nlohmann::json::parse(line).at("author_id").get<std::string>());
    } catch (const std::exception&) {
    }
  }
  ASSERT_GT(authors.size(), 10u);
  for (const auto& a : authors) {
    EXPECT_EQ(exported.find(a), std::string::npos) << a;
    EXPECT_EQ(exported.find(cohort::member_id_for(w.config.cohort.salt, a)), std::string::npos) << a;
  }
}
