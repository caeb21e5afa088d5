#include "toxipipe/signals.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "toxipipe/csv.hpp"
#include "toxipipe/error.hpp"
#include "toxipipe/random.hpp"
#include "toxipipe/text.hpp"

namespace toxipipe::signals {

using nlohmann::json;

namespace {

constexpr double kTieTolerance = 1e-12;

double parse_finite(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError(where + ": '" + s + "' is not a number");
  }
  if (used != s.size() || !std::isfinite(v)) {
    throw FormatError(where + ": '" + s + "' is not a finite number");
  }
  return v;
}

}  // namespace

RegionMetricTable read_metric_table(std::istream& in) {
  const auto header = csv::read_row(in);
  if (!header || header->size() != 2 || (*header)[0] != "region") {
    throw FormatError("metric table header must be 'region,<metric>'");
  }
  RegionMetricTable table;
  table.name = (*header)[1];
  std::size_t line = 1;
  while (auto row = csv::read_row(in)) {
    ++line;
    if (row->size() == 1 && row->front().empty()) continue;
    if (row->size() != 2) {
      throw FormatError("metric table row " + std::to_string(line) + ": expected 2 fields");
    }
    const double v = parse_finite((*row)[1], "metric table row " + std::to_string(line));
    if (!table.rows.emplace((*row)[0], v).second) {
      throw FormatError("metric table: duplicate region '" + (*row)[0] + "'");
    }
  }
  return table;
}

RegionMetricTable read_metric_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_metric_table(in);
}

void write_metric_table(std::ostream& out, const RegionMetricTable& table) {
  csv::write_row(out, {"region", table.name});
  for (const auto& [region, value] : table.rows) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    csv::write_row(out, {region, std::string(buf, res.ptr)});
  }
}

RegionRateReport region_rates(std::span<const RegionPost> posts, std::size_t min_support,
                              std::span<const std::string> known_regions,
                              const RegionMetricTable* population) {
  RegionRateReport report;
  report.min_support = min_support;
  for (const auto& p : posts) {
    if (!p.region || p.region->empty()) {
      ++report.regionless_posts;
      continue;
    }
    RegionRate& r = report.regions[*p.region];
    ++r.total_matched;
    if (p.label == LabelClass::NonmedicalUse) ++r.nm_posts;
  }
  for (auto& [region, r] : report.regions) {
    r.rate = static_cast<double>(r.nm_posts) / static_cast<double>(r.total_matched);
    r.low_support = r.total_matched < min_support;
    if (population) {
      if (auto it = population->rows.find(region); it != population->rows.end() && it->second > 0) {
        r.per_capita = static_cast<double>(r.nm_posts) / it->second;
      }
    }
  }
  std::set<std::string> empty;
  for (const auto& region : known_regions) {
    if (!report.regions.contains(region)) empty.insert(region);
  }
  report.empty_regions.assign(empty.begin(), empty.end());
  return report;
}

json rates_to_json(const RegionRateReport& report) {
  json regions = json::object();
  for (const auto& [region, r] : report.regions) {
    json row = {{"nm_posts", r.nm_posts},
                {"total_matched", r.total_matched},
                {"rate", r.rate},
                {"low_support", r.low_support}};
    if (r.per_capita) row["per_capita"] = *r.per_capita;
    regions[region] = std::move(row);
  }
  return {{"regions", std::move(regions)},
          {"empty_regions", report.empty_regions},
          {"regionless_posts", report.regionless_posts},
          {"min_support", report.min_support}};
}

RegionRateReport rates_from_json(const json& j) {
  try {
    RegionRateReport report;
    for (const auto& [region, row] : j.at("regions").items()) {
      RegionRate r;
      r.nm_posts = row.at("nm_posts").get<std::size_t>();
      r.total_matched = row.at("total_matched").get<std::size_t>();
      r.rate = row.at("rate").get<double>();
      r.low_support = row.at("low_support").get<bool>();
      if (row.contains("per_capita")) r.per_capita = row.at("per_capita").get<double>();
      report.regions.emplace(region, r);
    }
    report.empty_regions = j.value("empty_regions", std::vector<std::string>{});
    report.regionless_posts = j.value("regionless_posts", std::size_t{0});
    report.min_support = j.value("min_support", kDefaultMinSupport);
    return report;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed rate report: ") + e.what());
  }
}

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("correlation inputs differ in length");
  if (x.size() < 3) throw ContractError("correlation needs at least 3 observations");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw DomainError("correlation inputs must be finite");
    }
  }
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> centered(std::span<const double> v) {
  const double m = mean_of(v);
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [m](double a) { return a - m; });
  return out;
}

double sum_sq(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a * a;
  return s;
}

// Correlation of pre-centred inputs under an ordering of y.
class CenteredPair {
 public:
  CenteredPair(std::span<const double> x, std::span<const double> y)
      : xc_(centered(x)), yc_(centered(y)) {
    const double sxx = sum_sq(xc_);
    const double syy = sum_sq(yc_);
    if (sxx == 0.0 || syy == 0.0) throw DomainError("correlation of a constant vector");
    denom_ = std::sqrt(sxx) * std::sqrt(syy);
  }

  std::size_t size() const { return xc_.size(); }

  double at(std::span<const std::size_t> order) const {
    double sxy = 0.0;
    for (std::size_t i = 0; i < xc_.size(); ++i) sxy += xc_[i] * yc_[order[i]];
    return std::clamp(sxy / denom_, -1.0, 1.0);
  }

 private:
  std::vector<double> xc_;
  std::vector<double> yc_;
  double denom_ = 0.0;
};

std::vector<std::size_t> identity(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const CenteredPair pair(x, y);
  const auto order = identity(x.size());
  return pair.at(order);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx = identity(v.size());
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i + 1;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    // Positions i..j-1 hold equal values: ranks i+1..j, mean (i+1+j)/2.
    const double r = static_cast<double>(i + 1 + j) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

std::string_view to_string(Statistic s) { return s == Statistic::Pearson ? "pearson" : "spearman"; }

std::optional<Statistic> parse_statistic(std::string_view s) {
  if (s == "pearson") return Statistic::Pearson;
  if (s == "spearman") return Statistic::Spearman;
  return std::nullopt;
}

double permutation_pvalue(std::span<const double> x, std::span<const double> y, Statistic statistic,
                          std::size_t permutations, std::uint64_t seed) {
  if (permutations < 100) throw ContractError("permutation test needs at least 100 permutations");
  check_pair(x, y);
  std::vector<double> xs(x.begin(), x.end()), ys(y.begin(), y.end());
  if (statistic == Statistic::Spearman) {
    xs = average_ranks(x);
    ys = average_ranks(y);
  }
  const CenteredPair pair(xs, ys);
  std::vector<std::size_t> order = identity(xs.size());
  const double observed = std::abs(pair.at(order));
  const double cut = observed - kTieTolerance;

  std::size_t orderings = 1;
  bool exhaustive = true;
  for (std::size_t k = 2; k <= xs.size() && exhaustive; ++k) {
    orderings *= k;
    exhaustive = orderings <= permutations;
  }
  if (exhaustive) {
    std::size_t hits = 0;
    do {
      if (std::abs(pair.at(order)) >= cut) ++hits;
    } while (std::next_permutation(order.begin(), order.end()));
    return static_cast<double>(hits) / static_cast<double>(orderings);
  }

  Rng rng(seed);
  std::size_t hits = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    shuffle(std::span<std::size_t>(order), rng);
    if (std::abs(pair.at(order)) >= cut) ++hits;
  }
  return static_cast<double>(hits + 1) / static_cast<double>(permutations + 1);
}

CorrelationReport correlate_report(const RegionRateReport& rates, const RegionMetricTable& table,
                                   const CorrelationOptions& options) {
  CorrelationReport report;
  report.metric = table.name;
  report.permutations = options.permutations;
  report.seed = options.seed;
  std::vector<double> x, y;
  for (const auto& [region, r] : rates.regions) {
    if (r.low_support && !options.keep_low_support) {
      report.dropped.push_back({region, "low_support"});
      continue;
    }
    const auto it = table.rows.find(region);
    if (it == table.rows.end()) {
      report.dropped.push_back({region, "not_in_table"});
      continue;
    }
    report.regions.push_back(region);
    x.push_back(r.rate);
    y.push_back(it->second);
  }
  for (const auto& [region, value] : table.rows) {
    if (!rates.regions.contains(region)) report.dropped.push_back({region, "not_in_rates"});
  }
  std::sort(report.dropped.begin(), report.dropped.end(),
            [](const auto& a, const auto& b) { return a.region < b.region; });
  report.n = x.size();
  if (report.n < 3) {
    throw DomainError("only " + std::to_string(report.n) +
                      " region(s) overlap after filtering; at least 3 are needed");
  }
  report.pearson_r = pearson(x, y);
  report.spearman_rho = spearman(x, y);
  report.pearson_p =
      permutation_pvalue(x, y, Statistic::Pearson, options.permutations, options.seed);
  report.spearman_p =
      permutation_pvalue(x, y, Statistic::Spearman, options.permutations, options.seed);
  return report;
}

json correlation_to_json(const CorrelationReport& r) {
  json dropped = json::array();
  for (const auto& d : r.dropped) dropped.push_back({{"region", d.region}, {"reason", d.reason}});
  return {{"metric", r.metric},
          {"n", r.n},
          {"regions", r.regions},
          {"pearson", {{"r", r.pearson_r}, {"p_value", r.pearson_p}}},
          {"spearman", {{"rho", r.spearman_rho}, {"p_value", r.spearman_p}}},
          {"permutations", r.permutations},
          {"seed", r.seed},
          {"dropped", std::move(dropped)}};
}

EmotionLexicon read_emotion_lexicon(std::istream& in, std::span<const std::string_view> categories) {
  EmotionLexicon lex;
  std::unordered_map<std::string, std::size_t> index;
  for (auto c : categories) {
    index.emplace(std::string(c), lex.categories.size());
    lex.categories.emplace_back(c);
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto tab = t.find('\t');
    if (tab == std::string_view::npos) {
      throw FormatError("emotion lexicon line " + std::to_string(line_no) + ": missing tab");
    }
    const std::string token = text::fold_case(text::trim(t.substr(0, tab)));
    if (token.empty()) {
      throw FormatError("emotion lexicon line " + std::to_string(line_no) + ": empty token");
    }
    auto& cats = lex.tokens[token];
    std::string_view rest = t.substr(tab + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string name(text::trim(rest.substr(0, comma)));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      const auto it = index.find(name);
      if (it == index.end()) {
        throw FormatError("emotion lexicon line " + std::to_string(line_no) +
                          ": unknown category '" + name + "'");
      }
      if (std::find(cats.begin(), cats.end(), it->second) == cats.end()) cats.push_back(it->second);
    }
    std::sort(cats.begin(), cats.end());
  }
  return lex;
}

EmotionLexicon read_emotion_lexicon(const std::filesystem::path& path,
                                    std::span<const std::string_view> categories) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_emotion_lexicon(in, categories);
}

EmotionProfile emotion_profile(std::span<const std::string> texts, const EmotionLexicon& lexicon) {
  if (lexicon.empty()) throw ContractError("emotion lexicon is empty");
  EmotionProfile p;
  p.categories = lexicon.categories;
  p.counts.assign(p.categories.size(), 0);
  p.distribution.assign(p.categories.size(), 0.0);
  p.posts = texts.size();
  for (const auto& t : texts) {
    for (const auto& tok : text::tokenize(t)) {
      const auto it = lexicon.tokens.find(text::fold_case(tok.text));
      if (it == lexicon.tokens.end()) continue;
      for (std::size_t c : it->second) {
        ++p.counts[c];
        ++p.total_hits;
      }
    }
  }
  p.zero_total = p.total_hits == 0;
  if (!p.zero_total) {
    for (std::size_t c = 0; c < p.counts.size(); ++c) {
      p.distribution[c] = static_cast<double>(p.counts[c]) / static_cast<double>(p.total_hits);
    }
  }
  return p;
}

json profile_to_json(const EmotionProfile& p) {
  json counts = json::object(), dist = json::object();
  for (std::size_t c = 0; c < p.categories.size(); ++c) {
    counts[p.categories[c]] = p.counts[c];
    dist[p.categories[c]] = p.distribution[c];
  }
  return {{"posts", p.posts},
          {"total_hits", p.total_hits},
          {"zero_total", p.zero_total},
          {"counts", std::move(counts)},
          {"distribution", std::move(dist)}};
}

namespace {

void check_groups(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) throw ContractError("groups use different category lists");
  const auto ta = std::accumulate(a.begin(), a.end(), std::uint64_t{0});
  const auto tb = std::accumulate(b.begin(), b.end(), std::uint64_t{0});
  if (ta == 0 && tb == 0) throw DomainError("contingency table is all zero");
  if (ta == 0 || tb == 0) throw ContractError("each group needs at least one hit");
}

// sum_i D_i^2 / (c_i Na Nb) with D_i = a_i Nb - b_i Na, an exact integer, so
// exactly proportional groups give exactly zero.
double chi_square_kept(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                       std::span<const std::size_t> kept) {
  std::uint64_t na = 0, nb = 0;
  for (std::size_t i : kept) {
    na += a[i];
    nb += b[i];
  }
  double stat = 0.0;
  for (std::size_t i : kept) {
    const __int128 d = static_cast<__int128>(a[i]) * nb - static_cast<__int128>(b[i]) * na;
    if (d == 0) continue;
    const double dd = static_cast<double>(d);
    stat += dd * dd /
            (static_cast<double>(a[i] + b[i]) * static_cast<double>(na) * static_cast<double>(nb));
  }
  return stat;
}

std::vector<std::size_t> nonzero_categories(std::span<const std::uint64_t> a,
                                            std::span<const std::uint64_t> b) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] + b[i] > 0) kept.push_back(i);
  }
  return kept;
}

}  // namespace

double chi_square_statistic(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  check_groups(a, b);
  const auto kept = nonzero_categories(a, b);
  return chi_square_kept(a, b, kept);
}

ChiSquareResult compare_groups(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                               std::size_t permutations, std::uint64_t seed) {
  check_groups(a, b);
  if (permutations < 100) throw ContractError("permutation test needs at least 100 permutations");
  ChiSquareResult r;
  r.kept = nonzero_categories(a, b);
  r.df = r.kept.size() - 1;
  r.permutations = permutations;
  r.statistic = chi_square_kept(a, b, r.kept);
  if (r.df == 0) return r;

  // Pool hits by compact category, then redraw group A as a uniform random
  // subset of the pooled hits (partial Fisher-Yates over the smaller group).
  const std::size_t k = r.kept.size();
  std::vector<std::uint64_t> ka(k), kb(k);
  std::vector<std::uint32_t> pool;
  std::uint64_t na = 0, nb = 0;
  for (std::size_t j = 0; j < k; ++j) {
    ka[j] = a[r.kept[j]];
    kb[j] = b[r.kept[j]];
    na += ka[j];
    nb += kb[j];
    pool.insert(pool.end(), ka[j] + kb[j], static_cast<std::uint32_t>(j));
  }
  const bool draw_a = na <= nb;
  const std::size_t draws = draw_a ? na : nb;
  const std::vector<std::size_t> all = identity(k);
  const double cut = r.statistic - kTieTolerance * std::max(1.0, r.statistic);

  Rng rng(seed);
  std::vector<std::uint64_t> pa(k), pb(k);
  std::size_t hits = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    std::vector<std::uint64_t> drawn(k, 0);
    const std::size_t n = pool.size();
    for (std::size_t i = 0; i < draws; ++i) {
      std::swap(pool[i], pool[i + uniform_below(rng, n - i)]);
      ++drawn[pool[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      const std::uint64_t total = ka[j] + kb[j];
      pa[j] = draw_a ? drawn[j] : total - drawn[j];
      pb[j] = total - pa[j];
    }
    if (chi_square_kept(pa, pb, all) >= cut) ++hits;
  }
  r.p_value = static_cast<double>(hits + 1) / static_cast<double>(permutations + 1);
  return r;
}

json chi_square_to_json(const ChiSquareResult& r) {
  return {{"statistic", r.statistic},
          {"df", r.df},
          {"p_value", r.p_value},
          {"permutations", r.permutations}};
}

DistributionComparison distribution_compare(const std::map<std::string, double>& estimated,
                                            const std::map<std::string, double>& reference) {
  DistributionComparison out;
  if (estimated.size() != reference.size() ||
      !std::equal(estimated.begin(), estimated.end(), reference.begin(),
                  [](const auto& a, const auto& b) { return a.first == b.first; })) {
    throw ContractError("distributions cover different categories");
  }
  const auto check_sum = [](const std::map<std::string, double>& d, const char* which) {
    double s = 0.0;
    for (const auto& [k, v] : d) {
      if (!std::isfinite(v) || v < 0.0) {
        throw ContractError(std::string(which) + " distribution has an invalid proportion");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ContractError(std::string(which) + " distribution does not sum to 1");
    }
  };
  check_sum(estimated, "estimated");
  check_sum(reference, "reference");

  std::vector<double> x, y;
  for (const auto& [k, v] : estimated) {
    out.categories.push_back(k);
    x.push_back(v);
    const double r = reference.at(k);
    y.push_back(r);
    out.max_abs_diff = std::max(out.max_abs_diff, std::abs(v - r));
  }
  if (x.size() < 3) {
    out.r_note = "fewer than 3 categories";
  } else {
    try {
      out.pearson_r = pearson(x, y);
    } catch (const DomainError&) {
      out.r_note = "constant distribution";
    }
  }
  return out;
}

}  // namespace toxipipe::signals
