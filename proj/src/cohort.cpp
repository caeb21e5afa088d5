#include "toxipipe/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "toxipipe/error.hpp"
#include "toxipipe/hashing.hpp"
#include "toxipipe/text.hpp"

namespace toxipipe::cohort {

using nlohmann::json;

namespace {
constexpr int kStoreVersion = 1;
}

std::string_view to_string(MemberStatus s) {
  switch (s) {
    case MemberStatus::Active:
      return "active";
    case MemberStatus::ExcludedBot:
      return "excluded_bot";
    case MemberStatus::ExcludedManual:
      return "excluded_manual";
  }
  return "active";
}

std::optional<MemberStatus> parse_status(std::string_view s) {
  if (s == "active") return MemberStatus::Active;
  if (s == "excluded_bot") return MemberStatus::ExcludedBot;
  if (s == "excluded_manual") return MemberStatus::ExcludedManual;
  return std::nullopt;
}

std::string_view bot_flag_name(std::size_t flag) {
  static constexpr std::array<std::string_view, kNumBotFlags> kNames = {
      "high_rate", "duplicate_text", "url_heavy", "regular_intervals"};
  return kNames.at(flag);
}

bool AdmissionPolicy::qualifies(const classify::Prediction& p) const {
  if (mode == Mode::Argmax) return p.argmax == LabelClass::NonmedicalUse;
  return p.score(LabelClass::NonmedicalUse) >= threshold;
}

std::string member_id_for(std::string_view salt, std::string_view author_id) {
  std::string buf;
  buf.reserve(salt.size() + 1 + author_id.size());
  buf.append(salt).push_back('\x1f');
  buf.append(author_id);
  return sha256_hex(buf);
}

namespace {

bool post_order(const corpus::PostRecord& a, const corpus::PostRecord& b) {
  return std::tie(a.created_at, a.post_id) < std::tie(b.created_at, b.post_id);
}

}  // namespace

Timeline merge_timeline(const Timeline& existing, std::span<const corpus::PostRecord> new_posts,
                        UtcSeconds collected_at, std::string_view salt) {
  Timeline out = existing;
  std::unordered_set<std::string> ids;
  for (const auto& p : out.posts) ids.insert(p.post_id);
  UtcSeconds newest = collected_at;
  for (const auto& p : new_posts) {
    if (p.author_id != existing.member_id &&
        member_id_for(salt, p.author_id) != existing.member_id) {
      throw ContractError("post '" + p.post_id + "' belongs to a different author");
    }
    if (!ids.insert(p.post_id).second) continue;  // existing record wins
    corpus::PostRecord stored = p;
    stored.author_id = existing.member_id;
    newest = std::max(newest, stored.created_at);
    out.posts.push_back(std::move(stored));
  }
  for (const auto& p : out.posts) newest = std::max(newest, p.created_at);
  std::sort(out.posts.begin(), out.posts.end(), post_order);
  out.last_collected_at = std::max(existing.last_collected_at.value_or(newest), newest);
  return out;
}

BotAssessment bot_score(const Timeline& timeline, const BotConfig& config) {
  BotAssessment a;
  const auto& posts = timeline.posts;
  const std::size_t n = posts.size();
  if (n == 0) return a;

  const UtcSeconds span = posts.back().created_at - posts.front().created_at;
  a.posts_per_day = static_cast<double>(n) /
                    (static_cast<double>(std::max<UtcSeconds>(span, 1)) / kSecondsPerDay);

  std::unordered_set<std::string> texts;
  std::size_t duplicates = 0, urls = 0;
  for (const auto& p : posts) {
    std::string norm = corpus::normalize(p.text);
    if (norm.find("<url>") != std::string::npos) ++urls;
    if (!texts.insert(std::move(norm)).second) ++duplicates;
  }
  a.duplicate_ratio = static_cast<double>(duplicates) / static_cast<double>(n);
  a.url_ratio = static_cast<double>(urls) / static_cast<double>(n);

  const std::size_t gaps = n - 1;
  if (gaps >= config.min_gaps_for_regularity && gaps > 0) {
    double mean = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      mean += static_cast<double>(posts[i].created_at - posts[i - 1].created_at);
    }
    mean /= static_cast<double>(gaps);
    double var = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      const double d = static_cast<double>(posts[i].created_at - posts[i - 1].created_at) - mean;
      var += d * d;
    }
    var /= static_cast<double>(gaps);
    // Identical timestamps throughout count as perfectly regular.
    a.gap_cv = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
  }

  a.flags[kHighRate] = a.posts_per_day > config.max_posts_per_day;
  a.flags[kDuplicateText] = a.duplicate_ratio > config.max_duplicate_ratio;
  a.flags[kUrlHeavy] = a.url_ratio > config.max_url_ratio;
  a.flags[kRegularIntervals] = a.gap_cv.has_value() && *a.gap_cv < config.min_gap_cv;
  if (n >= config.min_posts) {
    const auto raised = std::count(a.flags.begin(), a.flags.end(), true);
    a.score = static_cast<double>(raised) / static_cast<double>(kNumBotFlags);
  }
  return a;
}

namespace {

json member_to_json(const CohortMember& m) {
  json j = {{"member_id", m.member_id},
            {"admitted_at", format_iso8601(m.admitted_at)},
            {"admitting_post_id", m.admitting_post_id},
            {"admitting_score", m.admitting_score},
            {"status", to_string(m.status)},
            {"bot_exempt", m.bot_exempt}};
  j["bot_score"] = m.bot_score ? json(*m.bot_score) : json(nullptr);
  return j;
}

CohortMember member_from_json(const json& j) {
  CohortMember m;
  m.member_id = j.at("member_id").get<std::string>();
  m.admitted_at = parse_iso8601(j.at("admitted_at").get<std::string>());
  m.admitting_post_id = j.at("admitting_post_id").get<std::string>();
  m.admitting_score = j.at("admitting_score").get<double>();
  const auto status = parse_status(j.at("status").get<std::string>());
  if (!status) throw FormatError("unknown member status");
  m.status = *status;
  m.bot_exempt = j.value("bot_exempt", false);
  if (auto it = j.find("bot_score"); it != j.end() && !it->is_null()) m.bot_score = it->get<double>();
  return m;
}

json timeline_to_json(const Timeline& t) {
  json posts = json::array();
  for (const auto& p : t.posts) posts.push_back(corpus::post_to_json(p));
  json j = {{"member_id", t.member_id}, {"posts", std::move(posts)}};
  j["last_collected_at"] =
      t.last_collected_at ? json(format_iso8601(*t.last_collected_at)) : json(nullptr);
  return j;
}

Timeline timeline_from_json(const json& j) {
  Timeline t;
  t.member_id = j.at("member_id").get<std::string>();
  for (const auto& p : j.at("posts")) t.posts.push_back(corpus::post_from_json(p));
  if (auto it = j.find("last_collected_at"); it != j.end() && !it->is_null()) {
    t.last_collected_at = parse_iso8601(it->get<std::string>());
  }
  return t;
}

std::string salt_fingerprint(std::string_view salt) {
  return sha256_hex("toxipipe-salt-fingerprint\x1f" + std::string(salt));
}

}  // namespace

Cohort::Cohort(std::string salt) : salt_(std::move(salt)) {
  if (salt_.empty()) throw ContractError("cohort salt must not be empty");
}

void Cohort::record(json event) {
  event["v"] = kStoreVersion;
  events_.push_back(std::move(event));
}

std::optional<CohortMember> Cohort::admit(const classify::Prediction& prediction,
                                          const corpus::PostRecord& post,
                                          const AdmissionPolicy& policy, AdmitOutcome* outcome) {
  if (!prediction.post_id.empty() && prediction.post_id != post.post_id) {
    throw ContractError("prediction '" + prediction.post_id + "' does not belong to post '" +
                        post.post_id + "'");
  }
  const auto set = [&](AdmitOutcome o) {
    if (outcome) *outcome = o;
  };
  if (!policy.qualifies(prediction)) {
    set(AdmitOutcome::NotQualified);
    return std::nullopt;
  }
  const std::string id = member_id_for(salt_, post.author_id);
  if (auto [it, inserted] = seen_authors_.emplace(id, post.author_id);
      !inserted && it->second != post.author_id) {
    throw Error("member id collision between two distinct authors");
  }
  const double score = prediction.score(LabelClass::NonmedicalUse);
  auto it = members_.find(id);
  if (it != members_.end()) {
    if (score > it->second.admitting_score) {
      it->second.admitting_score = score;
      it->second.admitting_post_id = post.post_id;
      record({{"type", "admit"}, {"member", member_to_json(it->second)}});
      set(AdmitOutcome::EvidenceUpdated);
    } else {
      set(AdmitOutcome::Unchanged);
    }
    return it->second;
  }
  CohortMember m;
  m.member_id = id;
  m.admitted_at = post.created_at;
  m.admitting_post_id = post.post_id;
  m.admitting_score = score;
  members_.emplace(id, m);
  record({{"type", "admit"}, {"member", member_to_json(m)}});
  set(AdmitOutcome::Admitted);
  return m;
}

std::vector<std::string> Cohort::due_for_recollection(UtcSeconds now, UtcSeconds interval) const {
  std::vector<std::pair<std::optional<UtcSeconds>, std::string>> due;
  for (const auto& [id, m] : members_) {
    if (m.status != MemberStatus::Active) continue;
    std::optional<UtcSeconds> last;
    if (auto it = timelines_.find(id); it != timelines_.end()) last = it->second.last_collected_at;
    if (!last || now - *last >= interval) due.emplace_back(last, id);
  }
  // nullopt sorts before any value.
  std::sort(due.begin(), due.end());
  std::vector<std::string> out;
  out.reserve(due.size());
  for (auto& [last, id] : due) out.push_back(std::move(id));
  return out;
}

const Timeline& Cohort::merge(const std::string& member_id,
                              std::span<const corpus::PostRecord> posts, UtcSeconds collected_at) {
  if (!members_.contains(member_id)) throw NotFoundError("unknown member '" + member_id + "'");
  auto [it, inserted] = timelines_.try_emplace(member_id);
  if (inserted) it->second.member_id = member_id;
  it->second = merge_timeline(it->second, posts, collected_at, salt_);
  json stored = json::array();
  for (const auto& p : posts) {
    corpus::PostRecord copy = p;
    copy.author_id = member_id;
    stored.push_back(corpus::post_to_json(copy));
  }
  record({{"type", "merge"},
          {"member_id", member_id},
          {"collected_at", format_iso8601(collected_at)},
          {"posts", std::move(stored)}});
  return it->second;
}

BotReport Cohort::filter_bots(double threshold, const BotConfig& config) {
  if (!(threshold >= 0.0)) throw ContractError("bot threshold must be >= 0");
  BotReport report;
  static const Timeline kEmpty;
  for (auto& [id, m] : members_) {
    if (m.status != MemberStatus::Active || m.bot_exempt) continue;
    const auto it = timelines_.find(id);
    const BotAssessment a = bot_score(it == timelines_.end() ? kEmpty : it->second, config);
    if (!a.score) {
      ++report.unscored;
      continue;
    }
    ++report.scored;
    const bool changed_score = m.bot_score != a.score;
    m.bot_score = a.score;
    if (*a.score >= threshold) {
      m.status = MemberStatus::ExcludedBot;
      report.excluded.push_back({id, *a.score, a.flags});
    }
    if (changed_score || m.status == MemberStatus::ExcludedBot) {
      record({{"type", "status"},
              {"member_id", id},
              {"status", to_string(m.status)},
              {"bot_score", *a.score},
              {"bot_exempt", m.bot_exempt}});
    }
  }
  return report;
}

void Cohort::set_status(const std::string& member_id, MemberStatus status) {
  auto it = members_.find(member_id);
  if (it == members_.end()) throw NotFoundError("unknown member '" + member_id + "'");
  it->second.status = status;
  it->second.bot_exempt = status == MemberStatus::Active;
  json event = {{"type", "status"},
                {"member_id", member_id},
                {"status", to_string(status)},
                {"bot_exempt", it->second.bot_exempt}};
  event["bot_score"] = it->second.bot_score ? json(*it->second.bot_score) : json(nullptr);
  record(std::move(event));
}

const CohortMember* Cohort::find(const std::string& member_id) const {
  const auto it = members_.find(member_id);
  return it == members_.end() ? nullptr : &it->second;
}

const Timeline* Cohort::timeline(const std::string& member_id) const {
  const auto it = timelines_.find(member_id);
  return it == timelines_.end() ? nullptr : &it->second;
}

CohortSummary Cohort::summary() const {
  CohortSummary s;
  for (const auto& [id, m] : members_) {
    ++s.total;
    switch (m.status) {
      case MemberStatus::Active:
        ++s.active;
        break;
      case MemberStatus::ExcludedBot:
        ++s.excluded_bot;
        break;
      case MemberStatus::ExcludedManual:
        ++s.excluded_manual;
        break;
    }
  }
  return s;
}

json Cohort::snapshot() const {
  json members = json::array();
  for (const auto& [id, m] : members_) members.push_back(member_to_json(m));
  json timelines = json::array();
  for (const auto& [id, t] : timelines_) timelines.push_back(timeline_to_json(t));
  return {{"format", "toxipipe-cohort-snapshot"},
          {"version", kStoreVersion},
          {"salt_fingerprint", salt_fingerprint(salt_)},
          {"members", std::move(members)},
          {"timelines", std::move(timelines)}};
}

void Cohort::replay(const json& event) {
  try {
    const std::string type = event.at("type").get<std::string>();
    if (type == "admit") {
      CohortMember m = member_from_json(event.at("member"));
      members_[m.member_id] = std::move(m);
    } else if (type == "merge") {
      const std::string id = event.at("member_id").get<std::string>();
      std::vector<corpus::PostRecord> posts;
      for (const auto& p : event.at("posts")) posts.push_back(corpus::post_from_json(p));
      auto [it, inserted] = timelines_.try_emplace(id);
      if (inserted) it->second.member_id = id;
      it->second = merge_timeline(it->second, posts,
                                  parse_iso8601(event.at("collected_at").get<std::string>()), salt_);
    } else if (type == "status") {
      auto it = members_.find(event.at("member_id").get<std::string>());
      if (it == members_.end()) throw FormatError("status event for unknown member");
      const auto status = parse_status(event.at("status").get<std::string>());
      if (!status) throw FormatError("unknown member status");
      it->second.status = *status;
      it->second.bot_exempt = event.value("bot_exempt", false);
      if (auto b = event.find("bot_score"); b != event.end() && !b->is_null()) {
        it->second.bot_score = b->get<double>();
      }
    } else {
      throw FormatError("unknown cohort event type '" + type + "'");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed cohort event: ") + e.what());
  }
}

CohortStore::CohortStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

bool CohortStore::exists() const {
  return std::filesystem::exists(dir_ / "snapshot.json") ||
         std::filesystem::exists(dir_ / "events.jsonl");
}

Cohort CohortStore::load(const std::string& salt) const {
  Cohort cohort(salt);
  const auto snap_path = dir_ / "snapshot.json";
  if (std::filesystem::exists(snap_path)) {
    std::ifstream in(snap_path, std::ios::binary);
    json snap;
    try {
      snap = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError(snap_path.string() + ": " + e.what());
    }
    if (snap.value("format", "") != "toxipipe-cohort-snapshot" ||
        snap.value("version", 0) != kStoreVersion) {
      throw FormatError(snap_path.string() + ": not a version 1 cohort snapshot");
    }
    if (snap.value("salt_fingerprint", "") != salt_fingerprint(salt)) {
      throw ContractError("cohort store was created with a different salt");
    }
    for (const auto& m : snap.at("members")) {
      cohort.replay({{"type", "admit"}, {"member", m}});
    }
    for (const auto& t : snap.at("timelines")) {
      Timeline tl = timeline_from_json(t);
      cohort.timelines_[tl.member_id] = std::move(tl);
    }
  }
  const auto log_path = dir_ / "events.jsonl";
  if (std::filesystem::exists(log_path)) {
    std::ifstream in(log_path, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (text::trim(line).empty()) continue;
      try {
        cohort.replay(json::parse(line));
      } catch (const json::parse_error& e) {
        throw FormatError(log_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  return cohort;
}

void CohortStore::append_events(Cohort& cohort) const {
  std::filesystem::create_directories(dir_);
  std::ofstream out(dir_ / "events.jsonl", std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + (dir_ / "events.jsonl").string());
  for (const auto& e : cohort.take_events()) out << e.dump() << '\n';
}

void CohortStore::compact(const Cohort& cohort) const {
  std::filesystem::create_directories(dir_);
  const auto tmp = dir_ / "snapshot.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << cohort.snapshot().dump(1) << '\n';
  }
  std::filesystem::rename(tmp, dir_ / "snapshot.json");
  std::ofstream truncate(dir_ / "events.jsonl", std::ios::binary | std::ios::trunc);
}

}  // namespace toxipipe::cohort
