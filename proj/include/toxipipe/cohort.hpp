#pragma once

// Longitudinal cohort: admission on detected nonmedical-use posts, bi-weekly
// recollection scheduling, timeline merging and bot filtering.
//
// Raw author ids never leave this module: members are keyed by a salted
// SHA-256 of the author id, and stored timeline posts carry the member id in
// place of the author id.

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "toxipipe/classify.hpp"
#include "toxipipe/corpus.hpp"
#include "toxipipe/time.hpp"

namespace toxipipe::cohort {

enum class MemberStatus { Active, ExcludedBot, ExcludedManual };

std::string_view to_string(MemberStatus s);
std::optional<MemberStatus> parse_status(std::string_view s);

struct CohortMember {
  std::string member_id;
  UtcSeconds admitted_at = 0;
  std::string admitting_post_id;
  double admitting_score = 0.0;
  std::optional<double> bot_score;
  MemberStatus status = MemberStatus::Active;
  // Set by a manual reinstatement; filter_bots leaves such members alone.
  bool bot_exempt = false;

  friend bool operator==(const CohortMember&, const CohortMember&) = default;
};

struct Timeline {
  std::string member_id;
  std::vector<corpus::PostRecord> posts;  // ascending (created_at, post_id), unique ids
  std::optional<UtcSeconds> last_collected_at;
};

struct AdmissionPolicy {
  enum class Mode { Argmax, Threshold };
  Mode mode = Mode::Argmax;
  double threshold = 0.5;

  bool qualifies(const classify::Prediction& p) const;
};

// Hex SHA-256 of salt || 0x1f || author_id.
std::string member_id_for(std::string_view salt, std::string_view author_id);

// Union by post_id with existing records winning, re-sorted, and
// last_collected_at advanced to max(collected_at, newest post). Every new
// post must hash (under `salt`) to the timeline's member id, or carry that
// member id directly; otherwise ContractError.
Timeline merge_timeline(const Timeline& existing, std::span<const corpus::PostRecord> new_posts,
                        UtcSeconds collected_at, std::string_view salt);

struct BotConfig {
  std::size_t min_posts = 10;
  double max_posts_per_day = 50.0;
  double max_duplicate_ratio = 0.5;
  double max_url_ratio = 0.8;
  double min_gap_cv = 0.1;
  std::size_t min_gaps_for_regularity = 20;
};

enum BotFlag : std::size_t { kHighRate = 0, kDuplicateText = 1, kUrlHeavy = 2, kRegularIntervals = 3 };
inline constexpr std::size_t kNumBotFlags = 4;
std::string_view bot_flag_name(std::size_t flag);

struct BotAssessment {
  std::optional<double> score;  // unset below min_posts
  std::array<bool, kNumBotFlags> flags{};
  double posts_per_day = 0.0;
  double duplicate_ratio = 0.0;
  double url_ratio = 0.0;
  std::optional<double> gap_cv;  // set when there are enough gaps
};

// Mean of four binary flags: posting rate, repeated normalized text, URL
// share, and inter-post interval regularity.
BotAssessment bot_score(const Timeline& timeline, const BotConfig& config = {});

enum class AdmitOutcome { NotQualified, Admitted, EvidenceUpdated, Unchanged };

struct BotReportEntry {
  std::string member_id;
  double bot_score = 0.0;
  std::array<bool, kNumBotFlags> flags{};
};

struct BotReport {
  std::vector<BotReportEntry> excluded;  // newly excluded by this run
  std::size_t scored = 0;
  std::size_t unscored = 0;  // below min_posts
};

struct CohortSummary {
  std::size_t total = 0;
  std::size_t active = 0;
  std::size_t excluded_bot = 0;
  std::size_t excluded_manual = 0;
};

// In-memory cohort with an append-only event log. Single writer: callers
// serialize mutations; const members may run concurrently with each other.
class Cohort {
 public:
  explicit Cohort(std::string salt);

  const std::string& salt() const { return salt_; }

  std::optional<CohortMember> admit(const classify::Prediction& prediction,
                                    const corpus::PostRecord& post, const AdmissionPolicy& policy,
                                    AdmitOutcome* outcome = nullptr);

  // Active members due for recollection at `now`, least recently collected
  // first (never-collected members first of all).
  std::vector<std::string> due_for_recollection(UtcSeconds now,
                                                UtcSeconds interval = 14 * kSecondsPerDay) const;

  // Merges into the member's timeline. NotFoundError for unknown members.
  const Timeline& merge(const std::string& member_id, std::span<const corpus::PostRecord> posts,
                        UtcSeconds collected_at);

  // Scores every active member's timeline and moves those at or above
  // `threshold` to ExcludedBot.
  BotReport filter_bots(double threshold, const BotConfig& config = {});

  // Manual status change. Reinstating (Active) marks the member bot-exempt.
  void set_status(const std::string& member_id, MemberStatus status);

  const CohortMember* find(const std::string& member_id) const;
  const Timeline* timeline(const std::string& member_id) const;
  const std::map<std::string, CohortMember>& members() const { return members_; }
  const std::map<std::string, Timeline>& timelines() const { return timelines_; }
  CohortSummary summary() const;

  // Events recorded since construction/load (or the last take_events),
  // oldest first.
  const std::vector<nlohmann::json>& events() const { return events_; }
  std::vector<nlohmann::json> take_events() { return std::exchange(events_, {}); }

  nlohmann::json snapshot() const;
  // Applies one logged event without re-recording it.
  void replay(const nlohmann::json& event);

 private:
  friend class CohortStore;

  void record(nlohmann::json event);

  std::string salt_;
  std::map<std::string, CohortMember> members_;
  std::map<std::string, Timeline> timelines_;
  std::vector<nlohmann::json> events_;
  // Session-only author map for collision detection; never persisted.
  std::map<std::string, std::string> seen_authors_;
};

// Directory-backed store: snapshot.json (compacted) plus events.jsonl
// (events since the snapshot).
class CohortStore {
 public:
  explicit CohortStore(std::filesystem::path dir);

  bool exists() const;
  // Loads snapshot + replays events. Creates an empty cohort with `salt` if
  // nothing is stored yet; throws ContractError if a stored salt differs.
  Cohort load(const std::string& salt) const;
  // Moves the cohort's pending events to the end of the log.
  void append_events(Cohort& cohort) const;
  // Writes a fresh snapshot and truncates the event log.
  void compact(const Cohort& cohort) const;

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

}  // namespace toxipipe::cohort
