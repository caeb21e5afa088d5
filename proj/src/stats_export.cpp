#include "toxipipe/stats_export.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "toxipipe/csv.hpp"
#include "toxipipe/error.hpp"
#include "toxipipe/pipeline.hpp"

namespace toxipipe::gateway {

using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("missing stage output " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string cell(const json& v) {
  switch (v.type()) {
    case json::value_t::boolean:
      return v.get<bool>() ? "1" : "0";
    case json::value_t::number_unsigned:
      return std::to_string(v.get<std::uint64_t>());
    case json::value_t::number_integer:
      return std::to_string(v.get<std::int64_t>());
    case json::value_t::number_float: {
      char buf[32];
      const auto res = std::to_chars(buf, buf + sizeof buf, v.get<double>());
      return std::string(buf, res.ptr);
    }
    case json::value_t::string:
      return v.get<std::string>();
    case json::value_t::null:
      return "";
    default:
      return v.dump();
  }
}

class CsvSink {
 public:
  CsvSink() { csv::write_row(out_, {"section", "key", "metric", "value"}); }
  void row(const std::string& section, const std::string& key, const std::string& metric,
           const json& value) {
    csv::write_row(out_, {section, key, metric, cell(value)});
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

void profile_rows(CsvSink& sink, const std::string& key, const json& p) {
  sink.row("emotions", key, "posts", p.at("posts"));
  sink.row("emotions", key, "total_hits", p.at("total_hits"));
  for (const auto& [cat, n] : p.at("counts").items()) sink.row("emotions", key, "count:" + cat, n);
  for (const auto& [cat, x] : p.at("distribution").items()) sink.row("emotions", key, "share:" + cat, x);
}

}  // namespace

json build_stats(const WorkLayout& layout) {
  json stats = {{"format", "toxipipe-stats"}, {"version", 1}};
  stats["region_rates"] = read_json(layout.rates());
  stats["correlation"] = read_json(layout.correlation());
  stats["emotions"] = read_json(layout.emotions());
  stats["cohort"] = read_json(layout.cohort_stats());
  const json eval = read_json(layout.eval());
  const json& fused = eval.at("fused");
  stats["classifier"] = {{"fusion", eval.at("fusion")},
                         {"models", eval.at("models").size()},
                         {"test_nonmedical_f1", fused.at("per_class").at("nonmedical_use").at("f1")},
                         {"test_macro_f1", fused.at("macro_f1")},
                         {"test_accuracy", fused.at("accuracy")}};
  return stats;
}

json load_stats(const std::filesystem::path& work_dir) {
  const WorkLayout layout{work_dir};
  if (!std::filesystem::exists(layout.stats_json())) {
    throw DomainError("no completed run in " + work_dir.string());
  }
  return read_json(layout.stats_json());
}

json filter_region(const json& stats, const std::string& region) {
  json out = {{"format", stats.at("format")}, {"version", stats.at("version")}};
  if (stats.contains("run")) out["run"] = stats.at("run");
  json regions = json::object();
  const json& all = stats.at("region_rates").at("regions");
  if (all.contains(region)) regions[region] = all.at(region);
  out["region_rates"] = {{"regions", std::move(regions)},
                         {"min_support", stats.at("region_rates").at("min_support")}};
  return out;
}

std::string stats_to_json_text(const json& stats) { return stats.dump(2) + "\n"; }

std::string stats_to_csv(const json& stats) {
  CsvSink sink;
  if (stats.contains("region_rates")) {
    const json& rr = stats.at("region_rates");
    for (const auto& [region, r] : rr.at("regions").items()) {
      for (const char* m : {"nm_posts", "total_matched", "rate", "low_support", "per_capita"}) {
        if (r.contains(m)) sink.row("region_rates", region, m, r.at(m));
      }
    }
    if (rr.contains("empty_regions")) {
      for (const auto& region : rr.at("empty_regions")) {
        sink.row("region_rates", region.get<std::string>(), "empty", true);
      }
    }
    if (rr.contains("regionless_posts")) sink.row("region_rates", "*", "regionless_posts", rr.at("regionless_posts"));
    sink.row("region_rates", "*", "min_support", rr.at("min_support"));
  }
  if (stats.contains("correlation")) {
    const json& c = stats.at("correlation");
    const std::string key = c.value("metric", "");
    if (c.contains("error")) {
      sink.row("correlation", key, "error", c.at("error"));
    } else {
      sink.row("correlation", key, "n", c.at("n"));
      sink.row("correlation", key, "pearson_r", c.at("pearson").at("r"));
      sink.row("correlation", key, "pearson_p", c.at("pearson").at("p_value"));
      sink.row("correlation", key, "spearman_rho", c.at("spearman").at("rho"));
      sink.row("correlation", key, "spearman_p", c.at("spearman").at("p_value"));
      sink.row("correlation", key, "permutations", c.at("permutations"));
      for (const auto& d : c.at("dropped")) {
        sink.row("correlation", d.at("region").get<std::string>(), "dropped", d.at("reason"));
      }
    }
  }
  if (stats.contains("emotions")) {
    const json& e = stats.at("emotions");
    profile_rows(sink, "overall", e.at("overall"));
    for (const auto& [group, p] : e.at("groups").items()) profile_rows(sink, "group:" + group, p);
    for (const auto& cmp : e.at("comparisons")) {
      const std::string key = "compare:" + cmp.at("a").get<std::string>() + "|" + cmp.at("b").get<std::string>();
      sink.row("emotions", key, "chi_square", cmp.at("statistic"));
      sink.row("emotions", key, "df", cmp.at("df"));
      sink.row("emotions", key, "p_value", cmp.at("p_value"));
    }
  }
  if (stats.contains("cohort")) {
    const json& c = stats.at("cohort");
    for (const auto& [k, v] : c.at("summary").items()) sink.row("cohort", "summary", k, v);
    for (const auto& m : c.at("size_over_time")) {
      const std::string month = m.at("month").get<std::string>();
      sink.row("cohort", month, "admitted", m.at("admitted"));
      sink.row("cohort", month, "cumulative", m.at("cumulative"));
      sink.row("cohort", month, "cumulative_active", m.at("cumulative_active"));
    }
  }
  if (stats.contains("classifier")) {
    for (const auto& [k, v] : stats.at("classifier").items()) sink.row("classifier", "test", k, v);
  }
  return sink.str();
}

}  // namespace toxipipe::gateway
