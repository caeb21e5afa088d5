// toxipipe command-line entry point.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "toxipipe/classify.hpp"
#include "toxipipe/cohort.hpp"
#include "toxipipe/config.hpp"
#include "toxipipe/corpus.hpp"
#include "toxipipe/error.hpp"
#include "toxipipe/hashing.hpp"
#include "toxipipe/pipeline.hpp"
#include "toxipipe/random.hpp"
#include "toxipipe/scorer.hpp"
#include "toxipipe/server.hpp"
#include "toxipipe/signals.hpp"
#include "toxipipe/stats_export.hpp"
#include "toxipipe/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace toxipipe;
using namespace toxipipe::gateway;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Globals {
  std::string config_path;
  std::optional<PipelineConfig> config;

  PipelineConfig& need() {
    if (!config) {
      if (config_path.empty()) throw ConfigError("--config is required for this command");
      config = load_config(config_path);
    }
    return *config;
  }
};

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

json record_json(const StageRecord& r) {
  return {{"stage", r.name}, {"counts", r.counts}, {"metrics", r.metrics}, {"seconds", r.seconds}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<classify::LinearModel> work_models(const WorkLayout& layout) {
  std::vector<fs::path> files;
  if (fs::exists(layout.models())) {
    for (const auto& e : fs::directory_iterator(layout.models())) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<classify::LinearModel> models;
  for (const auto& f : files) models.push_back(classify::load_model(f));
  return models;
}

UtcSeconds parse_now(const std::string& s) {
  try {
    return parse_iso8601(s);
  } catch (const FormatError& e) {
    throw ConfigError(std::string("--now: ") + e.what());
  }
}

int serve(const PipelineConfig& config, std::optional<int> port) {
  ServerOptions options = server_options(config);
  if (port) options.settings.port = static_cast<std::uint16_t>(*port);
  // Block the shutdown signals before any server thread exists so only
  // sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  Server server(std::move(options));
  const int bound = server.start();
  std::cerr << "listening on " << config.server.bind << ":" << bound << '\n';
  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "shutting down\n";
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toxipipe: offline toxicovigilance pipeline"};
  app.require_subcommand(1);
  // --config is accepted after the subcommand as well.
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "run configuration (JSON)");
  app.set_version_flag("--version", std::string(kToolVersion));

  std::function<int()> action;

  // run
  auto* run = app.add_subcommand("run", "run every stage");
  bool resume = false;
  run->add_flag("--resume", resume, "skip stages whose inputs are unchanged");
  run->callback([&] {
    action = [&] {
      RunOptions opts;
      opts.resume = resume;
      print_json(manifest_to_json(run_pipeline(g.need(), opts)));
      return 0;
    };
  });

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "serve the HTTP API");
  std::optional<int> port;
  serve_cmd->add_option("--port", port, "override server.port")->check(CLI::Range(0, 65535));
  serve_cmd->callback([&] { action = [&] { return serve(g.need(), port); }; });

  // expand-lexicon
  auto* expand = app.add_subcommand("expand-lexicon", "generate lexical variants for the seed list");
  std::optional<double> theta_sem, theta_lex;
  std::optional<std::size_t> max_depth;
  std::string seeds_override;
  expand->add_option("--theta-sem", theta_sem, "semantic threshold");
  expand->add_option("--theta-lex", theta_lex, "lexical threshold");
  expand->add_option("--max-depth", max_depth, "recursion depth");
  expand->add_option("--seeds", seeds_override, "seed list file");
  expand->callback([&] {
    action = [&] {
      auto& c = g.need();
      if (theta_sem) c.lexvar.theta_sem = *theta_sem;
      if (theta_lex) c.lexvar.theta_lex = *theta_lex;
      if (max_depth) c.lexvar.max_depth = *max_depth;
      if (!seeds_override.empty()) c.paths.seeds = seeds_override;
      try {
        c.lexvar.validate();
      } catch (const ContractError& e) {
        throw ConfigError(e.what());
      }
      print_json(record_json(run_stage(c, "expand")));
      return 0;
    };
  });

  // ingest
  auto* ingest = app.add_subcommand("ingest", "normalize, deduplicate and match the corpus");
  bool no_dedup = false;
  std::string corpus_override;
  ingest->add_flag("--no-dedup", no_dedup, "keep reposts and duplicates");
  ingest->add_option("--in", corpus_override, "corpus JSONL");
  ingest->callback([&] {
    action = [&] {
      auto& c = g.need();
      if (no_dedup) c.dedup = false;
      if (!corpus_override.empty()) c.paths.corpus = corpus_override;
      print_json(record_json(run_stage(c, "ingest")));
      return 0;
    };
  });

  // train
  auto* train = app.add_subcommand("train", "train the classifier ensemble");
  std::optional<std::size_t> n_models;
  std::string train_override, train_out;
  train->add_option("--models", n_models, "number of differently seeded models")->check(CLI::Range(1, 64));
  train->add_option("--data,--train", train_override, "labeled JSONL");
  train->add_option("--out", train_out, "model directory (default: work_dir/models)");
  train->callback([&] {
    action = [&] {
      auto& c = g.need();
      if (n_models) c.classifier.models = *n_models;
      const fs::path data = train_override.empty() ? c.paths.train : fs::path(train_override);
      const fs::path dir = train_out.empty() ? WorkLayout{c.paths.work_dir}.models() : fs::path(train_out);
      const auto models = train_models(c.classifier, classify::read_labeled_jsonl(data), c.seed);
      fs::create_directories(dir);
      json files = json::array();
      for (std::size_t i = 0; i < models.size(); ++i) {
        const fs::path f = dir / ("model-" + std::to_string(i) + ".json");
        classify::save_model(models[i], f);
        files.push_back({{"path", f.string()}, {"final_loss", models[i].epoch_losses.back()}});
      }
      print_json({{"models", files}});
      return 0;
    };
  });

  // classify
  auto* classify_cmd = app.add_subcommand("classify", "score matched posts");
  std::string classify_in, classify_out, model_list, fuse_name;
  classify_cmd->add_option("--in", classify_in, "matched JSONL (default: work_dir/matched.jsonl)");
  classify_cmd->add_option("--out", classify_out, "predictions JSONL (default: work_dir/predictions.jsonl)");
  classify_cmd->add_option("--model", model_list, "comma list of model files, exec:CMD or tcp:HOST:PORT");
  classify_cmd->add_option("--fuse", fuse_name, "mean | majority");
  classify_cmd->callback([&] {
    action = [&] {
      auto& c = g.need();
      const WorkLayout layout{c.paths.work_dir};
      std::vector<classify::LinearModel> models;
      std::vector<std::string> external;
      if (model_list.empty()) {
        models = work_models(layout);
        external = c.classifier.external_scorers;
      } else {
        for (const auto& m : split_commas(model_list)) {
          if (classify::ScorerEndpoint::looks_like_endpoint(m)) {
            external.push_back(m);
          } else {
            models.push_back(classify::load_model(m));
          }
        }
      }
      auto fusion = c.classifier.fusion;
      if (!fuse_name.empty()) {
        const auto f = classify::parse_fusion(fuse_name);
        if (!f) throw ConfigError("--fuse must be mean or majority");
        fusion = *f;
      }
      const auto matched = corpus::read_matched_jsonl(classify_in.empty() ? layout.matched() : fs::path(classify_in));
      std::vector<std::string> ids, texts;
      for (const auto& m : matched) {
        ids.push_back(m.post.post_id);
        texts.push_back(m.post.text);
      }
      const auto preds = score_texts(models, external, c.classifier.scorer_timeout_ms, fusion, ids, texts);
      classify::write_predictions(classify_out.empty() ? layout.predictions() : fs::path(classify_out), preds);
      json counts = json::object();
      for (auto cls : kAllClasses) counts[std::string(to_string(cls))] = 0;
      for (const auto& p : preds) {
        auto& n = counts[std::string(to_string(p.argmax))];
        n = n.get<std::size_t>() + 1;
      }
      print_json({{"predicted", preds.size()}, {"by_label", counts}});
      return 0;
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate predictions against gold labels");
  std::string eval_preds, eval_gold;
  eval->add_option("--pred,--predictions", eval_preds, "predictions JSONL (default: score the test set)");
  eval->add_option("--gold", eval_gold, "labeled JSONL (default: paths.test)");
  eval->callback([&] {
    action = [&] {
      auto& c = g.need();
      const auto gold_rows = classify::read_labeled_jsonl(eval_gold.empty() ? c.paths.test : fs::path(eval_gold));
      std::map<std::string, LabelClass> gold;
      std::vector<std::string> ids, texts;
      for (const auto& r : gold_rows) {
        gold[r.id] = r.label;
        ids.push_back(r.id);
        texts.push_back(r.text);
      }
      std::vector<classify::Prediction> preds;
      if (!eval_preds.empty()) {
        preds = classify::read_predictions(eval_preds);
      } else {
        preds = score_texts(work_models(WorkLayout{c.paths.work_dir}), c.classifier.external_scorers,
                            c.classifier.scorer_timeout_ms, c.classifier.fusion, ids, texts);
      }
      print_json(classify::eval_to_json(classify::evaluate(preds, gold)));
      return 0;
    };
  });

  // cohort
  auto* cohort_cmd = app.add_subcommand("cohort", "cohort maintenance");
  cohort_cmd->require_subcommand(1);
  std::string now_text;
  auto* c_admit = cohort_cmd->add_subcommand("admit", "rebuild the cohort from predictions");
  auto* c_due = cohort_cmd->add_subcommand("due", "list members due for recollection");
  auto* c_merge = cohort_cmd->add_subcommand("merge", "merge archive posts into due timelines");
  auto* c_bots = cohort_cmd->add_subcommand("bots", "recollect, then exclude likely bots");
  auto* c_summary = cohort_cmd->add_subcommand("summary", "member counts");
  for (auto* sub : {c_due, c_merge}) sub->add_option("--now", now_text, "collection time (ISO 8601)");
  c_admit->callback([&] { action = [&] { print_json(record_json(run_stage(g.need(), "cohort_admit"))); return 0; }; });
  c_bots->callback([&] { action = [&] { print_json(record_json(run_stage(g.need(), "bot_filter"))); return 0; }; });
  c_summary->callback([&] {
    action = [&] {
      auto& c = g.need();
      const auto s = cohort::CohortStore(WorkLayout{c.paths.work_dir}.cohort()).load(c.cohort.salt).summary();
      print_json({{"total", s.total}, {"active", s.active}, {"excluded_bot", s.excluded_bot},
                  {"excluded_manual", s.excluded_manual}});
      return 0;
    };
  });
  const auto resolve_now = [&](const PipelineConfig& c) {
    if (!now_text.empty()) return parse_now(now_text);
    if (c.cohort.now) return *c.cohort.now;
    throw ConfigError("--now or cohort.now is required");
  };
  c_due->callback([&] {
    action = [&] {
      auto& c = g.need();
      const auto cohort = cohort::CohortStore(WorkLayout{c.paths.work_dir}.cohort()).load(c.cohort.salt);
      print_json({{"due", cohort.due_for_recollection(resolve_now(c), c.cohort.recollection_interval)}});
      return 0;
    };
  });
  c_merge->callback([&] {
    action = [&] {
      auto& c = g.need();
      const cohort::CohortStore store(WorkLayout{c.paths.work_dir}.cohort());
      auto cohort = store.load(c.cohort.salt);
      const UtcSeconds now = resolve_now(c);
      const auto due = cohort.due_for_recollection(now, c.cohort.recollection_interval);
      std::map<std::string, std::vector<corpus::PostRecord>> by_member;
      corpus::JsonlReader reader(c.paths.archive);
      while (auto p = reader.next()) {
        const std::string id = cohort::member_id_for(cohort.salt(), p->author_id);
        if (cohort.find(id) && p->created_at <= now) by_member[id].push_back(std::move(*p));
      }
      std::size_t merged = 0;
      for (const auto& id : due) {
        const auto& posts = by_member[id];
        merged += posts.size();
        cohort.merge(id, posts, now);
      }
      store.append_events(cohort);
      print_json({{"due", due.size()}, {"merged_posts", merged}});
      return 0;
    };
  });

  // correlate
  auto* correlate = app.add_subcommand("correlate", "region rates against a reference metric table");
  std::string rates_path, table_path;
  std::optional<std::size_t> perms;
  std::optional<std::uint64_t> corr_seed;
  bool keep_low = false;
  correlate->add_option("--rates", rates_path, "rates JSON (default: work_dir/rates.json)");
  correlate->add_option("--table", table_path, "CSV region,<metric> (default: paths.region_table)");
  correlate->add_option("--permutations", perms, "permutation count (>= 100)");
  correlate->add_option("--seed", corr_seed, "permutation seed");
  correlate->add_flag("--keep-low-support", keep_low, "keep regions below min_support");
  correlate->callback([&] {
    action = [&] {
      signals::CorrelationOptions opts;
      fs::path rates_file = rates_path, table_file = table_path;
      if (rates_file.empty() || table_file.empty() || !g.config_path.empty()) {
        auto& c = g.need();
        if (rates_file.empty()) rates_file = WorkLayout{c.paths.work_dir}.rates();
        if (table_file.empty()) table_file = c.paths.region_table;
        opts.permutations = c.signals.permutations;
        opts.seed = derive_seed(c.seed, "signals/correlation");
        opts.keep_low_support = c.signals.keep_low_support;
      }
      if (perms) opts.permutations = *perms;
      if (corr_seed) opts.seed = *corr_seed;
      if (keep_low) opts.keep_low_support = true;
      std::ifstream in(rates_file, std::ios::binary);
      if (!in) throw IoError("cannot open " + rates_file.string());
      const auto rates = signals::rates_from_json(json::parse(in));
      const auto table = signals::read_metric_table(table_file);
      json j = signals::correlation_to_json(signals::correlate_report(rates, table, opts));
      j["inputs"] = {{"rates", sha256_file(rates_file)}, {"region_table", sha256_file(table_file)}};
      print_json(j);
      return 0;
    };
  });

  // emotions
  auto* emotions = app.add_subcommand("emotions", "emotion profiles of matched posts");
  std::string emo_in, emo_lex, emo_preds, group_by;
  emotions->add_option("--in", emo_in, "matched JSONL (default: work_dir/matched.jsonl)");
  emotions->add_option("--lexicon", emo_lex, "emotion lexicon TSV (default: paths.emotion_lexicon)");
  emotions->add_option("--predictions", emo_preds, "predictions JSONL, needed to group by label");
  emotions->add_option("--group-by", group_by, "none | label | source | region")
      ->check(CLI::IsMember({"none", "label", "source", "region"}));
  emotions->callback([&] {
    action = [&] {
      fs::path in = emo_in, lex = emo_lex, preds_path = emo_preds;
      std::optional<std::uint64_t> seed;
      std::size_t permutations = 9999;
      if (in.empty() || lex.empty() || !g.config_path.empty()) {
        auto& c = g.need();
        const WorkLayout layout{c.paths.work_dir};
        if (in.empty()) in = layout.matched();
        if (lex.empty()) lex = c.paths.emotion_lexicon;
        if (preds_path.empty()) preds_path = layout.predictions();
        seed = c.seed;
        permutations = c.signals.permutations;
      }
      const auto lexicon = signals::read_emotion_lexicon(lex);
      const auto matched = corpus::read_matched_jsonl(in);
      const std::string by = group_by.empty() ? "none" : group_by;
      std::vector<classify::Prediction> preds;
      if (by == "label") {
        if (preds_path.empty()) throw ConfigError("--group-by label needs --predictions");
        preds = classify::read_predictions(preds_path);
        if (preds.size() != matched.size()) throw ContractError("predictions do not line up with matched posts");
      }
      std::vector<std::string> all;
      std::map<std::string, std::vector<std::string>> groups;
      for (std::size_t i = 0; i < matched.size(); ++i) {
        all.push_back(matched[i].normalized_text);
        if (by == "label") groups[std::string(to_string(preds[i].argmax))].push_back(matched[i].normalized_text);
        if (by == "source") groups[std::string(corpus::to_string(matched[i].post.source))].push_back(matched[i].normalized_text);
        if (by == "region") groups[matched[i].post.region.value_or("unknown")].push_back(matched[i].normalized_text);
      }
      json out = {{"group_by", by}, {"overall", signals::profile_to_json(signals::emotion_profile(all, lexicon))}};
      out["inputs"] = {{"matched", sha256_file(in)}, {"emotion_lexicon", sha256_file(lex)}};
      std::map<std::string, signals::EmotionProfile> profiles;
      json gj = json::object();
      for (const auto& [k, texts] : groups) {
        profiles[k] = signals::emotion_profile(texts, lexicon);
        gj[k] = signals::profile_to_json(profiles[k]);
      }
      out["groups"] = gj;
      json cmp = json::array();
      for (auto a = profiles.begin(); a != profiles.end(); ++a) {
        for (auto b = std::next(a); b != profiles.end(); ++b) {
          if (a->second.zero_total || b->second.zero_total) continue;
          const std::uint64_t s = derive_seed(seed.value_or(1), "signals/emotions/" + a->first + "|" + b->first);
          json j = signals::chi_square_to_json(signals::compare_groups(a->second.counts, b->second.counts, permutations, s));
          j["a"] = a->first;
          j["b"] = b->first;
          cmp.push_back(std::move(j));
        }
      }
      out["comparisons"] = cmp;
      print_json(out);
      return 0;
    };
  });

  // export
  auto* export_cmd = app.add_subcommand("export", "aggregated statistics of the last completed run");
  std::string format = "json", region, export_out;
  export_cmd->add_option("--format", format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  export_cmd->add_option("--region", region, "keep only this region's rows");
  export_cmd->add_option("--out", export_out, "output file (default: stdout)");
  export_cmd->callback([&] {
    action = [&] {
      json stats = load_stats(g.need().paths.work_dir);
      if (!region.empty()) stats = filter_region(stats, region);
      const std::string text = format == "csv" ? stats_to_csv(stats) : stats_to_json_text(stats);
      if (export_out.empty()) {
        std::cout << text;
      } else {
        write_text(export_out, text);
      }
      return 0;
    };
  });

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "write the synthetic demo workspace");
  std::string synth_out;
  std::uint64_t synth_seed = 20240101;
  synth_cmd->add_option("--out", synth_out, "directory")->required();
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->callback([&] {
    action = [&] {
      const auto truth = synth::write_demo(synth_out, synth_seed);
      write_text(fs::path(synth_out) / "config.json", demo_config_json(synth_seed).dump(2) + "\n");
      print_json({{"dir", synth_out}, {"corpus_lines", truth.corpus_lines}, {"expected_gain", truth.expected_gain}});
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const StageFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
}
