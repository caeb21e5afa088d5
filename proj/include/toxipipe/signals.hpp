#pragma once

// Surveillance signals from classified posts: per-region rates, correlation
// against reference metric tables with permutation significance, emotion
// profiles and group comparisons.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "toxipipe/labels.hpp"

namespace toxipipe::signals {

inline constexpr std::size_t kDefaultMinSupport = 30;

struct RegionMetricTable {
  std::string name;
  std::map<std::string, double> rows;
  std::string units;
};

// CSV `region,<metric name>`. Duplicate regions and non-finite values are
// FormatErrors.
RegionMetricTable read_metric_table(std::istream& in);
RegionMetricTable read_metric_table(const std::filesystem::path& path);
void write_metric_table(std::ostream& out, const RegionMetricTable& table);

struct RegionRate {
  std::size_t nm_posts = 0;
  std::size_t total_matched = 0;
  double rate = 0.0;
  bool low_support = false;
  std::optional<double> per_capita;  // nm_posts / population, when given

  friend bool operator==(const RegionRate&, const RegionRate&) = default;
};

struct RegionRateReport {
  std::map<std::string, RegionRate> regions;
  std::vector<std::string> empty_regions;  // known regions with no matched post
  std::size_t regionless_posts = 0;
  std::size_t min_support = kDefaultMinSupport;

  friend bool operator==(const RegionRateReport&, const RegionRateReport&) = default;
};

struct RegionPost {
  std::optional<std::string> region;
  LabelClass label = LabelClass::Unrelated;
};

// `known_regions` only feeds empty_regions; `population` adds per-capita
// rates for the regions it covers.
RegionRateReport region_rates(std::span<const RegionPost> posts,
                              std::size_t min_support = kDefaultMinSupport,
                              std::span<const std::string> known_regions = {},
                              const RegionMetricTable* population = nullptr);

nlohmann::json rates_to_json(const RegionRateReport& report);
RegionRateReport rates_from_json(const nlohmann::json& j);

// Sample Pearson correlation. ContractError for mismatched lengths or n < 3,
// DomainError when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);
// Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y);
// 1-based ranks, ties share the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> v);

enum class Statistic { Pearson, Spearman };
std::string_view to_string(Statistic s);
std::optional<Statistic> parse_statistic(std::string_view s);

// Two-sided permutation p-value for |statistic|. When every ordering of y
// fits within `permutations` (n! <= permutations) all n! orderings are
// enumerated and p is the exact fraction at least as extreme. Otherwise
// p = (1 + hits) / (permutations + 1) over seeded random shuffles.
// ContractError when permutations < 100.
double permutation_pvalue(std::span<const double> x, std::span<const double> y, Statistic statistic,
                          std::size_t permutations, std::uint64_t seed);

struct CorrelationOptions {
  std::size_t permutations = 9999;
  std::uint64_t seed = 1;
  bool keep_low_support = false;
};

struct DroppedRegion {
  std::string region;
  std::string reason;  // low_support | not_in_table | not_in_rates

  friend bool operator==(const DroppedRegion&, const DroppedRegion&) = default;
};

struct CorrelationReport {
  std::string metric;
  std::size_t n = 0;
  std::vector<std::string> regions;
  double pearson_r = 0.0;
  double pearson_p = 1.0;
  double spearman_rho = 0.0;
  double spearman_p = 1.0;
  std::size_t permutations = 0;
  std::uint64_t seed = 0;
  std::vector<DroppedRegion> dropped;
};

// Correlates per-region rates with the table. DomainError with fewer than
// three regions left in common.
CorrelationReport correlate_report(const RegionRateReport& rates, const RegionMetricTable& table,
                                   const CorrelationOptions& options = {});
nlohmann::json correlation_to_json(const CorrelationReport& r);

inline constexpr std::array<std::string_view, 8> kDefaultEmotions = {
    "anger", "anticipation", "disgust", "fear", "joy", "sadness", "surprise", "trust"};

struct EmotionLexicon {
  std::vector<std::string> categories;
  std::unordered_map<std::string, std::vector<std::size_t>> tokens;  // folded token -> categories

  bool empty() const { return tokens.empty(); }
};

// TSV `token<TAB>category[,category...]`; blank and # lines skipped. Unknown
// categories are FormatErrors.
EmotionLexicon read_emotion_lexicon(std::istream& in,
                                    std::span<const std::string_view> categories = kDefaultEmotions);
EmotionLexicon read_emotion_lexicon(const std::filesystem::path& path,
                                    std::span<const std::string_view> categories = kDefaultEmotions);

struct EmotionProfile {
  std::vector<std::string> categories;
  std::vector<std::uint64_t> counts;
  std::vector<double> distribution;  // all zero when zero_total
  std::uint64_t total_hits = 0;
  std::size_t posts = 0;
  bool zero_total = true;
};

// Counts lexicon hits per category over the tokens of each text. A token
// listed under several categories counts once for each. ContractError on an
// empty lexicon.
EmotionProfile emotion_profile(std::span<const std::string> texts, const EmotionLexicon& lexicon);
nlohmann::json profile_to_json(const EmotionProfile& p);

struct ChiSquareResult {
  double statistic = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
  std::size_t permutations = 0;
  std::vector<std::size_t> kept;  // category indices with a nonzero total
};

// Pearson chi-square over the 2 x K table; categories empty in both groups
// are dropped first. Exactly proportional groups give exactly 0.
double chi_square_statistic(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

// Statistic plus a permutation p-value from reassigning group membership at
// the hit level. ContractError for mismatched lengths or an empty group,
// DomainError for an all-zero table.
ChiSquareResult compare_groups(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                               std::size_t permutations = 9999, std::uint64_t seed = 1);
nlohmann::json chi_square_to_json(const ChiSquareResult& r);

struct DistributionComparison {
  std::vector<std::string> categories;
  std::optional<double> pearson_r;
  std::string r_note;  // why pearson_r is unavailable
  double max_abs_diff = 0.0;
};

// Both maps must cover the same categories (ContractError) and each sum to 1
// within 1e-6. r needs at least three categories and non-constant inputs.
DistributionComparison distribution_compare(const std::map<std::string, double>& estimated,
                                            const std::map<std::string, double>& reference);

}  // namespace toxipipe::signals
