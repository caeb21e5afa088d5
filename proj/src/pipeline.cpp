#include "toxipipe/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <functional>
#include <set>
#include <unordered_map>

#include "toxipipe/cohort.hpp"
#include "toxipipe/corpus.hpp"
#include "toxipipe/hashing.hpp"
#include "toxipipe/lexvar.hpp"
#include "toxipipe/random.hpp"
#include "toxipipe/scorer.hpp"
#include "toxipipe/signals.hpp"
#include "toxipipe/stats_export.hpp"

namespace toxipipe::gateway {

using nlohmann::json;
namespace fs = std::filesystem;

const StageRecord* RunManifest::stage(std::string_view name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

json manifest_to_json(const RunManifest& m) {
  json stages = json::array();
  for (const auto& s : m.stages) {
    stages.push_back({{"name", s.name},
                      {"counts", s.counts},
                      {"metrics", s.metrics},
                      {"seconds", s.seconds},
                      {"resumed", s.resumed}});
  }
  json j = {{"run_id", m.run_id},
            {"config_hash", m.config_hash},
            {"input_hashes", m.input_hashes},
            {"stages", std::move(stages)},
            {"tool_version", m.tool_version},
            {"status", m.status}};
  if (m.failed_stage) j["failed_stage"] = *m.failed_stage;
  if (m.error) j["error"] = *m.error;
  return j;
}

std::vector<classify::Example> to_examples(const std::vector<classify::LabeledText>& rows,
                                           const classify::FeatureConfig& features) {
  std::vector<classify::Example> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    out.push_back({classify::featurize(corpus::normalize(r.text), features), r.label});
  }
  return out;
}

std::vector<classify::LinearModel> train_models(const ClassifierSettings& settings,
                                                const std::vector<classify::LabeledText>& rows,
                                                std::uint64_t seed) {
  const auto examples = to_examples(rows, settings.features);
  std::vector<classify::LinearModel> models;
  for (std::size_t i = 0; i < settings.models; ++i) {
    classify::TrainParams params = settings.train;
    params.seed = derive_seed(seed, "classify/model/" + std::to_string(i));
    models.push_back(classify::train(examples, settings.features, params));
  }
  return models;
}

std::vector<classify::Prediction> score_texts(const std::vector<classify::LinearModel>& models,
                                              const std::vector<std::string>& external_scorers,
                                              std::uint32_t scorer_timeout_ms,
                                              classify::FusionStrategy fusion,
                                              const std::vector<std::string>& ids,
                                              const std::vector<std::string>& texts) {
  if (models.empty() && external_scorers.empty()) {
    throw ContractError("no model or external scorer to classify with");
  }
  std::vector<std::vector<classify::Prediction>> per_source;
  for (const auto& m : models) {
    std::vector<classify::Prediction> preds;
    preds.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
      preds.push_back(
          classify::predict(m, classify::featurize(corpus::normalize(texts[i]), m.features()), ids[i]));
    }
    per_source.push_back(std::move(preds));
  }
  if (!external_scorers.empty()) {
    std::vector<classify::ScoreRequest> batch;
    for (std::size_t i = 0; i < texts.size(); ++i) batch.push_back({ids[i], texts[i]});
    for (const auto& spec : external_scorers) {
      auto endpoint = classify::ScorerEndpoint::parse(spec);
      endpoint.timeout = std::chrono::milliseconds(scorer_timeout_ms);
      per_source.push_back(classify::external_score(batch, endpoint));
    }
  }
  std::vector<classify::Prediction> fused;
  fused.reserve(texts.size());
  std::vector<classify::Prediction> row(per_source.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (std::size_t s = 0; s < per_source.size(); ++s) row[s] = per_source[s][i];
    fused.push_back(classify::fuse(row, fusion));
  }
  return fused;
}

namespace {

using Clock = std::chrono::steady_clock;

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(1) << '\n';
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct StageOutput {
  std::map<std::string, std::uint64_t> counts;
  std::map<std::string, double> metrics;
};

class Runner {
 public:
  Runner(const PipelineConfig& config, const RunOptions& options)
      : config_(config), options_(options), layout_{config.paths.work_dir} {}

  RunManifest run() {
    prepare();
    chain_ = manifest_.run_id + std::string(kToolVersion);
    stage("expand", [&] { return expand(); });
    stage("ingest", [&] { return ingest(); });
    stage("classify", [&] { return classify_stage(); });
    stage("cohort_admit", [&] { return cohort_admit(); });
    stage("bot_filter", [&] { return bot_filter(); });
    stage("signals", [&] { return signals_stage(); });
    stage("export", [&] { return export_stage(); });
    manifest_.status = "completed";
    write_json(layout_.manifest(), manifest_to_json(manifest_));
    return manifest_;
  }

  StageRecord single(std::string_view name) {
    const std::map<std::string_view, std::function<StageOutput()>> bodies = {
        {"expand", [&] { return expand(); }},
        {"ingest", [&] { return ingest(); }},
        {"classify", [&] { return classify_stage(); }},
        {"cohort_admit", [&] { return cohort_admit(); }},
        {"bot_filter", [&] { return bot_filter(); }},
        {"signals", [&] { return signals_stage(); }},
        {"export", [&] { return export_stage(); }},
    };
    const auto it = bodies.find(name);
    if (it == bodies.end()) throw ContractError("unknown stage '" + std::string(name) + "'");
    prepare();
    // Outputs from here on no longer match any resume stamp.
    bool later = false;
    for (auto s : kStages) {
      later = later || s == name;
      if (later) fs::remove(layout_.stamp(s));
    }
    const auto start = Clock::now();
    StageOutput out;
    try {
      out = it->second();
    } catch (const std::exception& e) {
      throw StageFailure(std::string(name), e.what(), manifest_);
    }
    StageRecord record;
    record.name = name;
    record.counts = std::move(out.counts);
    record.metrics = std::move(out.metrics);
    record.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return record;
  }

 private:
  void prepare() {
    validate_inputs(config_);
    manifest_.config_hash = config_hash(config_);
    const std::pair<const char*, fs::path> inputs[] = {
        {"embeddings", config_.paths.embeddings},   {"seeds", config_.paths.seeds},
        {"corpus", config_.paths.corpus},           {"archive", config_.paths.archive},
        {"train", config_.paths.train},             {"test", config_.paths.test},
        {"region_table", config_.paths.region_table}, {"emotion_lexicon", config_.paths.emotion_lexicon},
    };
    std::string id_material = manifest_.config_hash;
    for (const auto& [name, path] : inputs) {
      manifest_.input_hashes[name] = sha256_file(path);
      id_material += "\x1f" + std::string(name) + "=" + manifest_.input_hashes[name];
    }
    if (config_.paths.population_table) {
      manifest_.input_hashes["population_table"] = sha256_file(*config_.paths.population_table);
      id_material += "\x1fpopulation_table=" + manifest_.input_hashes["population_table"];
    }
    manifest_.run_id = sha256_hex(id_material).substr(0, 16);
    fs::create_directories(layout_.dir);
  }

  void stage(std::string_view name, const std::function<StageOutput()>& body) {
    // Each stamp key covers every earlier stage, so a change upstream
    // invalidates everything after it.
    chain_ = sha256_hex(chain_ + "\x1f" + std::string(name));
    StageRecord record;
    record.name = name;
    const auto start = Clock::now();
    try {
      std::optional<StageOutput> out;
      if (options_.resume && fs::exists(layout_.stamp(name))) {
        const json stamp = read_json(layout_.stamp(name));
        if (stamp.value("key", "") == chain_) {
          out = StageOutput{stamp.at("counts").get<std::map<std::string, std::uint64_t>>(),
                            stamp.at("metrics").get<std::map<std::string, double>>()};
          record.resumed = true;
        }
      }
      if (!out) {
        fs::remove(layout_.stamp(name));
        out = body();
        write_json(layout_.stamp(name), {{"key", chain_}, {"counts", out->counts}, {"metrics", out->metrics}});
      }
      record.counts = std::move(out->counts);
      record.metrics = std::move(out->metrics);
    } catch (const std::exception& e) {
      record.seconds = std::chrono::duration<double>(Clock::now() - start).count();
      manifest_.stages.push_back(std::move(record));
      manifest_.status = "failed";
      manifest_.failed_stage = std::string(name);
      manifest_.error = e.what();
      try {
        write_json(layout_.manifest(), manifest_to_json(manifest_));
      } catch (const std::exception&) {
        // keep the stage error as the one reported
      }
      throw StageFailure(std::string(name), e.what(), manifest_);
    }
    record.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    manifest_.stages.push_back(std::move(record));
  }

  StageOutput expand() {
    const auto model = lexvar::load_embeddings(config_.paths.embeddings);
    const auto seeds = lexvar::read_seeds(config_.paths.seeds);
    const auto lexicon = lexvar::expand_lexicon(seeds, model, config_.lexvar);
    lexvar::write_lexicon_csv(layout_.lexicon(), lexicon);
    StageOutput out;
    out.counts["seeds"] = seeds.size();
    out.counts["variants"] = lexicon.variant_count();
    out.counts["vocabulary"] = model.size();
    std::uint64_t missing = 0;
    for (const auto& e : lexicon.entries) missing += e.not_in_vocabulary ? 1 : 0;
    out.counts["seeds_not_in_vocabulary"] = missing;
    return out;
  }

  StageOutput ingest() {
    const auto lexicon = lexvar::read_lexicon_csv(layout_.lexicon());
    corpus::MatchedWriter writer(layout_.matched());
    const auto stats = corpus::ingest(config_.paths.corpus, lexicon, {config_.dedup},
                                      [&](const corpus::MatchedPost& m) { writer.write(m); });
    StageOutput out;
    out.counts["lines"] = stats.read.lines;
    out.counts["records"] = stats.read.records;
    out.counts["skipped"] = stats.read.skipped;
    out.counts["deduplicated"] = stats.deduplicated;
    out.counts["matched"] = stats.matched;
    out.counts["seed_only_matched"] = stats.seed_only_matched;
    out.counts["variant_matches"] = stats.variant_matches;
    if (stats.seed_only_matched > 0) {
      out.metrics["retrieval_gain_percent"] =
          lexvar::retrieval_gain(stats.seed_only_matched, stats.matched);
    }
    return out;
  }

  StageOutput classify_stage() {
    const auto train = classify::read_labeled_jsonl(config_.paths.train);
    const auto test = classify::read_labeled_jsonl(config_.paths.test);
    const auto models = train_models(config_.classifier, train, config_.seed);
    fs::create_directories(layout_.models());
    for (std::size_t i = 0; i < models.size(); ++i) {
      classify::save_model(models[i], layout_.models() / ("model-" + std::to_string(i) + ".json"));
    }
    const auto& cc = config_.classifier;

    std::vector<std::string> ids, texts;
    std::map<std::string, LabelClass> gold;
    for (const auto& t : test) {
      ids.push_back(t.id);
      texts.push_back(t.text);
      gold[t.id] = t.label;
    }
    json eval = json::object();
    json per_model = json::array();
    for (const auto& m : models) {
      const auto preds = score_texts({m}, {}, cc.scorer_timeout_ms, cc.fusion, ids, texts);
      per_model.push_back(classify::eval_to_json(classify::evaluate(preds, gold)));
    }
    const auto fused_test =
        score_texts(models, cc.external_scorers, cc.scorer_timeout_ms, cc.fusion, ids, texts);
    const auto report = classify::evaluate(fused_test, gold);
    eval["fused"] = classify::eval_to_json(report);
    eval["models"] = std::move(per_model);
    eval["fusion"] = classify::to_string(cc.fusion);
    write_json(layout_.eval(), eval);

    const auto matched = corpus::read_matched_jsonl(layout_.matched());
    ids.clear();
    texts.clear();
    for (const auto& m : matched) {
      ids.push_back(m.post.post_id);
      texts.push_back(m.post.text);
    }
    const auto preds =
        score_texts(models, cc.external_scorers, cc.scorer_timeout_ms, cc.fusion, ids, texts);
    classify::write_predictions(layout_.predictions(), preds);

    StageOutput out;
    out.counts["train_examples"] = train.size();
    out.counts["test_examples"] = test.size();
    out.counts["models"] = models.size() + cc.external_scorers.size();
    out.counts["predicted"] = preds.size();
    for (LabelClass c : kAllClasses) out.counts["predicted_" + std::string(to_string(c))] = 0;
    for (const auto& p : preds) ++out.counts["predicted_" + std::string(to_string(p.argmax))];
    out.metrics["test_nonmedical_f1"] = report.nonmedical().f1;
    out.metrics["test_macro_f1"] = report.macro_f1;
    out.metrics["test_accuracy"] = report.accuracy;
    return out;
  }

  StageOutput cohort_admit() {
    const auto matched = corpus::read_matched_jsonl(layout_.matched());
    const auto preds = classify::read_predictions(layout_.predictions());
    if (preds.size() != matched.size()) {
      throw ContractError("predictions do not line up with matched posts");
    }
    fs::remove_all(layout_.cohort());
    cohort::CohortStore store(layout_.cohort());
    cohort::Cohort c(config_.cohort.salt);
    StageOutput out;
    for (const char* k : {"admitted", "evidence_updated", "unchanged", "not_qualified"}) out.counts[k] = 0;
    for (std::size_t i = 0; i < matched.size(); ++i) {
      cohort::AdmitOutcome outcome{};
      c.admit(preds[i], matched[i].post, config_.cohort.admission, &outcome);
      switch (outcome) {
        case cohort::AdmitOutcome::Admitted: ++out.counts["admitted"]; break;
        case cohort::AdmitOutcome::EvidenceUpdated: ++out.counts["evidence_updated"]; break;
        case cohort::AdmitOutcome::Unchanged: ++out.counts["unchanged"]; break;
        case cohort::AdmitOutcome::NotQualified: ++out.counts["not_qualified"]; break;
      }
    }
    store.append_events(c);
    out.counts["members"] = c.members().size();
    return out;
  }

  StageOutput bot_filter() {
    cohort::CohortStore store(layout_.cohort());
    cohort::Cohort c = store.load(config_.cohort.salt);

    // Archive posts grouped by member id; authors outside the cohort are
    // never retained.
    std::map<std::string, std::vector<corpus::PostRecord>> by_member;
    UtcSeconds newest = 0;
    {
      corpus::JsonlReader reader(config_.paths.archive);
      while (auto p = reader.next()) {
        newest = std::max(newest, p->created_at);
        const std::string id = cohort::member_id_for(c.salt(), p->author_id);
        if (c.find(id)) by_member[id].push_back(std::move(*p));
      }
    }
    const UtcSeconds now = config_.cohort.now.value_or(newest);
    const auto due = c.due_for_recollection(now, config_.cohort.recollection_interval);
    std::uint64_t merged = 0;
    for (const auto& id : due) {
      std::vector<corpus::PostRecord> posts;
      if (auto it = by_member.find(id); it != by_member.end()) {
        for (const auto& p : it->second) {
          if (p.created_at <= now) posts.push_back(p);
        }
      }
      merged += posts.size();
      c.merge(id, posts, now);
    }
    const auto report = c.filter_bots(config_.cohort.bot_threshold, config_.cohort.bot);
    store.append_events(c);
    store.compact(c);

    const auto summary = c.summary();
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> months;  // admitted, active
    for (const auto& [id, m] : c.members()) {
      auto& slot = months[format_iso8601(m.admitted_at).substr(0, 7)];
      ++slot.first;
      if (m.status == cohort::MemberStatus::Active) ++slot.second;
    }
    json series = json::array();
    std::uint64_t cumulative = 0, cumulative_active = 0;
    for (const auto& [month, counts] : months) {
      cumulative += counts.first;
      cumulative_active += counts.second;
      series.push_back({{"month", month},
                        {"admitted", counts.first},
                        {"cumulative", cumulative},
                        {"cumulative_active", cumulative_active}});
    }
    write_json(layout_.cohort_stats(), {{"summary",
                                         {{"total", summary.total},
                                          {"active", summary.active},
                                          {"excluded_bot", summary.excluded_bot},
                                          {"excluded_manual", summary.excluded_manual}}},
                                        {"size_over_time", std::move(series)},
                                        {"collected_at", format_iso8601(now)}});
    StageOutput out;
    out.counts["due"] = due.size();
    out.counts["merged_posts"] = merged;
    out.counts["scored"] = report.scored;
    out.counts["unscored"] = report.unscored;
    out.counts["excluded"] = report.excluded.size();
    out.counts["active"] = summary.active;
    return out;
  }

  StageOutput signals_stage() {
    const auto matched = corpus::read_matched_jsonl(layout_.matched());
    const auto preds = classify::read_predictions(layout_.predictions());
    if (preds.size() != matched.size()) {
      throw ContractError("predictions do not line up with matched posts");
    }
    const auto table = signals::read_metric_table(config_.paths.region_table);
    std::optional<signals::RegionMetricTable> population;
    if (config_.paths.population_table) population = signals::read_metric_table(*config_.paths.population_table);

    // Posts by members excluded as bots drop out of every statistic below.
    std::vector<bool> keep(matched.size(), true);
    StageOutput out;
    {
      const cohort::Cohort c = cohort::CohortStore(layout_.cohort()).load(config_.cohort.salt);
      std::uint64_t dropped = 0;
      for (std::size_t i = 0; i < matched.size(); ++i) {
        const auto* m = c.find(cohort::member_id_for(c.salt(), matched[i].post.author_id));
        if (m && m->status == cohort::MemberStatus::ExcludedBot) {
          keep[i] = false;
          ++dropped;
        }
      }
      out.counts["bot_posts_dropped"] = dropped;
    }
    std::vector<signals::RegionPost> posts;
    for (std::size_t i = 0; i < matched.size(); ++i) {
      if (keep[i]) posts.push_back({matched[i].post.region, preds[i].argmax});
    }
    std::vector<std::string> known;
    for (const auto& [region, v] : table.rows) known.push_back(region);
    const auto rates = signals::region_rates(posts, config_.signals.min_support, known,
                                             population ? &*population : nullptr);
    write_json(layout_.rates(), signals::rates_to_json(rates));

    out.counts["regions"] = rates.regions.size();
    out.counts["empty_regions"] = rates.empty_regions.size();
    out.counts["regionless_posts"] = rates.regionless_posts;
    signals::CorrelationOptions opts;
    opts.permutations = config_.signals.permutations;
    opts.seed = derive_seed(config_.seed, "signals/correlation");
    opts.keep_low_support = config_.signals.keep_low_support;
    try {
      const auto corr = signals::correlate_report(rates, table, opts);
      json j = signals::correlation_to_json(corr);
      j["inputs"] = {{"region_table", manifest_.input_hashes.at("region_table")}};
      write_json(layout_.correlation(), j);
      out.counts["correlated_regions"] = corr.n;
      out.metrics["pearson_r"] = corr.pearson_r;
      out.metrics["spearman_rho"] = corr.spearman_rho;
    } catch (const DomainError& e) {
      write_json(layout_.correlation(), {{"metric", table.name}, {"error", e.what()}});
      out.counts["correlated_regions"] = 0;
    }

    const auto lexicon = signals::read_emotion_lexicon(config_.paths.emotion_lexicon);
    std::vector<std::string> all;
    std::map<std::string, std::vector<std::string>> groups;
    const auto& by = config_.signals.emotion_group_by;
    for (std::size_t i = 0; i < matched.size(); ++i) {
      if (!keep[i]) continue;
      all.push_back(matched[i].normalized_text);
      std::string key;
      if (by == "label") {
        key = std::string(to_string(preds[i].argmax));
      } else if (by == "source") {
        key = std::string(corpus::to_string(matched[i].post.source));
      } else {
        key = matched[i].post.region.value_or("unknown");
      }
      groups[key].push_back(matched[i].normalized_text);
    }
    const auto overall = signals::emotion_profile(all, lexicon);
    json emotions = {{"group_by", by},
                     {"overall", signals::profile_to_json(overall)},
                     {"inputs", {{"emotion_lexicon", manifest_.input_hashes.at("emotion_lexicon")}}}};
    std::map<std::string, signals::EmotionProfile> profiles;
    json groups_j = json::object();
    for (const auto& [key, texts] : groups) {
      profiles[key] = signals::emotion_profile(texts, lexicon);
      groups_j[key] = signals::profile_to_json(profiles[key]);
    }
    emotions["groups"] = std::move(groups_j);
    json comparisons = json::array();
    for (auto a = profiles.begin(); a != profiles.end(); ++a) {
      for (auto b = std::next(a); b != profiles.end(); ++b) {
        if (a->second.zero_total || b->second.zero_total) continue;
        const auto chi = signals::compare_groups(
            a->second.counts, b->second.counts, config_.signals.permutations,
            derive_seed(config_.seed, "signals/emotions/" + a->first + "|" + b->first));
        json j = signals::chi_square_to_json(chi);
        j["a"] = a->first;
        j["b"] = b->first;
        comparisons.push_back(std::move(j));
      }
    }
    out.counts["emotion_hits"] = overall.total_hits;
    out.counts["emotion_comparisons"] = comparisons.size();
    emotions["comparisons"] = std::move(comparisons);
    write_json(layout_.emotions(), emotions);
    return out;
  }

  StageOutput export_stage() {
    json stats = build_stats(layout_);
    stats["run"] = {{"run_id", manifest_.run_id}, {"config_hash", manifest_.config_hash}};
    fs::create_directories(layout_.stats_json().parent_path());
    {
      std::ofstream out(layout_.stats_json(), std::ios::binary);
      out << stats_to_json_text(stats);
    }
    {
      std::ofstream out(layout_.stats_csv(), std::ios::binary);
      out << stats_to_csv(stats);
    }
    StageOutput out;
    out.counts["regions"] = stats.at("region_rates").at("regions").size();
    std::uint64_t rows = 0;
    const std::string csv = stats_to_csv(stats);
    for (char ch : csv) rows += ch == '\n' ? 1 : 0;
    out.counts["csv_rows"] = rows > 0 ? rows - 1 : 0;
    return out;
  }

  const PipelineConfig& config_;
  const RunOptions& options_;
  WorkLayout layout_;
  RunManifest manifest_;
  std::string chain_;
};

}  // namespace

RunManifest run_pipeline(const PipelineConfig& config, const RunOptions& options) {
  return Runner(config, options).run();
}

StageRecord run_stage(const PipelineConfig& config, std::string_view stage) {
  const RunOptions options;
  return Runner(config, options).single(stage);
}

}  // namespace toxipipe::gateway
