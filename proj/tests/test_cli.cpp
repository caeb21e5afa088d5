#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "support/tempdir.hpp"
#include "toxipipe/config.hpp"
#include "toxipipe/synth.hpp"

using namespace toxipipe;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome cli(const std::string& args) {
  const std::string cmd = std::string(TOXIPIPE_CLI) + " " + args + " 2>/dev/null";
  Outcome o;
  FILE* p = ::popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) o.out.append(buf, n);
  const int status = ::pclose(p);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, ParseOutcomes) {
  EXPECT_EQ(cli("--version").code, 0);
  EXPECT_NE(cli("--version").out.find(std::string(gateway::kToolVersion)), std::string::npos);
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("run --bogus").code, 2);
  EXPECT_EQ(cli("run").code, 2);  // no config
  EXPECT_EQ(cli("--config /nonexistent/config.json run").code, 2);
}

TEST(Cli, RunAndSubcommands) {
  TempDir dir;
  ASSERT_EQ(cli("synth --out " + q(dir.path())).code, 0);
  const auto cfg = q(dir / "config.json");

  const auto run = cli("run --config " + cfg);
  ASSERT_EQ(run.code, 0);
  const auto manifest = nlohmann::json::parse(run.out);
  EXPECT_EQ(manifest.at("status"), "completed");
  const auto resumed = nlohmann::json::parse(cli("--config " + cfg + " run --resume").out);
  for (const auto& s : resumed.at("stages")) EXPECT_TRUE(s.at("resumed"));

  const auto csv = cli("--config " + cfg + " export --format csv");
  EXPECT_EQ(csv.code, 0);
  EXPECT_EQ(csv.out, slurp(dir / "work" / "export" / "stats.csv"));
  ASSERT_EQ(cli("--config " + cfg + " export --format json --region R02 --out " + q(dir / "r02.json")).code, 0);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "r02.json")).at("region_rates").at("regions").size(), 1u);
  EXPECT_EQ(cli("--config " + cfg + " export --format xml").code, 2);

  const auto corr = cli("--config " + cfg + " correlate --permutations 999 --seed 5");
  ASSERT_EQ(corr.code, 0);
  const auto cj = nlohmann::json::parse(corr.out);
  EXPECT_TRUE(cj.at("inputs").contains("region_table"));
  EXPECT_EQ(cli("--config " + cfg + " correlate --permutations 10").code, 3);

  const auto summary = nlohmann::json::parse(cli("--config " + cfg + " cohort summary").out);
  EXPECT_EQ(summary.at("total"), manifest.at("stages")[3].at("counts").at("members"));
  EXPECT_EQ(cli("--config " + cfg + " cohort due --now 2024-04-01T00:00:00Z").code, 0);
  EXPECT_EQ(cli("--config " + cfg + " cohort due --now yesterday").code, 2);

  const auto eval = cli("--config " + cfg + " eval");
  ASSERT_EQ(eval.code, 0);
  EXPECT_GE(nlohmann::json::parse(eval.out).at("per_class").at("nonmedical_use").at("f1").get<double>(), 0.9);

  EXPECT_EQ(cli("--config " + cfg + " emotions --group-by source").code, 0);
  EXPECT_EQ(cli("--config " + cfg + " expand-lexicon --theta-sem 0.9").code, 0);
}

TEST(Cli, ConfigAndStageErrors) {
  TempDir dir;
  synth::write_demo(dir.path());
  auto j = gateway::demo_config_json(1);
  j["lexvar"]["theta_sem"] = 7;
  std::ofstream(dir / "bad.json") << j.dump();
  EXPECT_EQ(cli("--config " + q(dir / "bad.json") + " run").code, 2);

  std::ofstream(dir / "good.json") << gateway::demo_config_json(1).dump();
  fs::rename(dir / "corpus.jsonl", dir / "moved.jsonl");
  EXPECT_EQ(cli("--config " + q(dir / "good.json") + " run").code, 2);
  fs::rename(dir / "moved.jsonl", dir / "corpus.jsonl");

  std::ofstream(dir / "regions.csv", std::ios::app) << "R01,1.0\n";
  EXPECT_EQ(cli("--config " + q(dir / "good.json") + " run").code, 3);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "work" / "manifest.json")).at("failed_stage"), "signals");
}
