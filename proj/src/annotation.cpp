#include "toxipipe/annotation.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <fstream>
#include <numeric>

#include "toxipipe/csv.hpp"
#include "toxipipe/error.hpp"

namespace toxipipe::annotation {

std::string_view to_string(GoldStatus s) {
  return s == GoldStatus::Resolved ? "resolved" : "needs_adjudication";
}

double cohens_kappa(std::span<const LabelClass> a, std::span<const LabelClass> b) {
  if (a.size() != b.size()) throw ContractError("cohens_kappa: label sequences differ in length");
  if (a.size() < 2) throw ContractError("cohens_kappa: need at least 2 aligned labels");
  std::array<std::int64_t, kNumClasses> marg_a{}, marg_b{};
  std::int64_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++marg_a[index_of(a[i])];
    ++marg_b[index_of(b[i])];
    agree += a[i] == b[i];
  }
  const auto n = static_cast<std::int64_t>(a.size());
  std::int64_t chance = 0;  // n^2 * p_e
  for (std::size_t c = 0; c < kNumClasses; ++c) chance += marg_a[c] * marg_b[c];
  const std::int64_t denom = n * n - chance;
  if (denom == 0) {
    if (agree == n) return 1.0;
    throw DomainError("cohens_kappa: chance agreement is 1 but observed agreement is not");
  }
  return static_cast<double>(n * agree - chance) / static_cast<double>(denom);
}

AgreementReport agreement(std::span<const AnnotationRecord> records) {
  // post -> annotator -> label, both ordered for deterministic alignment
  std::map<std::string, std::map<std::string, LabelClass>> by_post;
  std::set<std::string> annotators;
  for (const auto& r : records) {
    by_post[r.post_id][r.annotator_id] = r.label;
    annotators.insert(r.annotator_id);
  }
  AgreementReport report;
  report.annotators.assign(annotators.begin(), annotators.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < report.annotators.size(); ++i) {
    for (std::size_t j = i + 1; j < report.annotators.size(); ++j) {
      const auto& a = report.annotators[i];
      const auto& b = report.annotators[j];
      std::vector<LabelClass> la, lb;
      for (const auto& [post, labels] : by_post) {
        const auto ia = labels.find(a);
        const auto ib = labels.find(b);
        if (ia != labels.end() && ib != labels.end()) {
          la.push_back(ia->second);
          lb.push_back(ib->second);
        }
      }
      PairAgreement pair{a, b, la.size(), std::nullopt};
      if (la.size() >= 2) {
        pair.kappa = cohens_kappa(la, lb);
        sum += *pair.kappa;
        ++report.eligible_pairs;
      }
      report.pairs.push_back(std::move(pair));
    }
  }
  if (report.eligible_pairs > 0) report.average = sum / static_cast<double>(report.eligible_pairs);
  return report;
}

double pairwise_average_kappa(std::span<const AnnotationRecord> records) {
  const auto report = agreement(records);
  if (!report.average) {
    throw DomainError("pairwise_average_kappa: no annotator pair shares at least 2 posts");
  }
  return *report.average;
}

GoldLabel adjudicate(std::span<const AnnotationRecord> records, std::size_t min_annotators) {
  if (records.empty()) throw ContractError("adjudicate: no records");
  GoldLabel gold;
  gold.post_id = records.front().post_id;
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& r : records) {
    if (r.post_id != gold.post_id) throw ContractError("adjudicate: records span several posts");
    ++counts[index_of(r.label)];
  }
  if (records.size() < std::max<std::size_t>(min_annotators, 1)) return gold;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] * 2 > records.size()) {
      gold.label = static_cast<LabelClass>(c);
      gold.status = GoldStatus::Resolved;
    }
  }
  return gold;
}

AnnotationStore::AnnotationStore(StoreConfig config, Clock clock)
    : config_(config), clock_(std::move(clock)) {}

UtcSeconds AnnotationStore::now() const {
  if (clock_) return clock_();
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void AnnotationStore::load_tasks(std::vector<corpus::MatchedPost> tasks) {
  std::sort(tasks.begin(), tasks.end(), [](const auto& x, const auto& y) {
    return std::tie(x.post.created_at, x.post.post_id) < std::tie(y.post.created_at, y.post.post_id);
  });
  std::lock_guard lock(mu_);
  tasks_ = std::move(tasks);
  task_index_.clear();
  for (std::size_t i = 0; i < tasks_.size(); ++i) task_index_.emplace(tasks_[i].post.post_id, i);
  leases_.clear();
}

void AnnotationStore::set_guideline(std::string text) {
  std::lock_guard lock(mu_);
  guideline_ = std::move(text);
}

std::string AnnotationStore::guideline() const {
  std::lock_guard lock(mu_);
  return guideline_;
}

void AnnotationStore::register_annotator(const std::string& annotator_id) {
  if (annotator_id.empty()) throw ContractError("empty annotator id");
  std::lock_guard lock(mu_);
  annotators_.insert(annotator_id);
}

bool AnnotationStore::is_registered(const std::string& annotator_id) const {
  std::lock_guard lock(mu_);
  return annotators_.contains(annotator_id);
}

void AnnotationStore::ensure_annotator(const std::string& annotator_id) {
  if (annotator_id.empty()) throw ContractError("empty annotator id");
  if (annotators_.contains(annotator_id)) return;
  if (!config_.open_enrollment) {
    throw ContractError("unknown annotator '" + annotator_id + "' and enrollment is closed");
  }
  annotators_.insert(annotator_id);
}

std::size_t AnnotationStore::label_count(const std::string& post_id) const {
  std::size_t n = 0;
  for (auto it = records_.lower_bound({post_id, std::string()});
       it != records_.end() && it->first.first == post_id; ++it) {
    ++n;
  }
  return n;
}

std::optional<corpus::MatchedPost> AnnotationStore::next_task(const std::string& annotator_id) {
  std::lock_guard lock(mu_);
  ensure_annotator(annotator_id);
  const UtcSeconds t = now();
  const corpus::MatchedPost* chosen = nullptr;
  const corpus::MatchedPost* fallback = nullptr;
  for (const auto& task : tasks_) {
    const std::string& id = task.post.post_id;
    if (records_.contains({id, annotator_id})) continue;
    const std::size_t labels = label_count(id);
    if (labels >= config_.target_annotations) continue;
    std::size_t others = 0;
    bool mine = false;
    if (auto it = leases_.find(id); it != leases_.end()) {
      for (const auto& lease : it->second) {
        if (lease.expires_at <= t) continue;
        if (lease.annotator_id == annotator_id) {
          mine = true;
        } else {
          ++others;
        }
      }
    }
    if (mine) continue;
    if (others == 0) {
      chosen = &task;
      break;
    }
    if (!fallback && labels + others < config_.target_annotations) fallback = &task;
  }
  if (!chosen) chosen = fallback;
  if (!chosen) return std::nullopt;
  auto& leases = leases_[chosen->post.post_id];
  std::erase_if(leases, [&](const Lease& l) { return l.expires_at <= t; });
  leases.push_back({annotator_id, t + config_.lease_seconds});
  return *chosen;
}

std::size_t AnnotationStore::remaining_for(const std::string& annotator_id) const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& task : tasks_) {
    const std::string& id = task.post.post_id;
    if (!records_.contains({id, annotator_id}) && label_count(id) < config_.target_annotations) ++n;
  }
  return n;
}

AnnotationRecord AnnotationStore::submit(const std::string& post_id,
                                         const std::string& annotator_id, LabelClass label) {
  std::lock_guard lock(mu_);
  if (!task_index_.contains(post_id)) throw NotFoundError("unknown post_id '" + post_id + "'");
  ensure_annotator(annotator_id);
  AnnotationRecord record{post_id, annotator_id, label, now()};
  records_[{post_id, annotator_id}] = record;
  if (auto it = leases_.find(post_id); it != leases_.end()) {
    std::erase_if(it->second, [&](const Lease& l) { return l.annotator_id == annotator_id; });
  }
  return record;
}

void AnnotationStore::restore(const AnnotationRecord& record) {
  std::lock_guard lock(mu_);
  if (!task_index_.contains(record.post_id)) {
    throw NotFoundError("unknown post_id '" + record.post_id + "'");
  }
  annotators_.insert(record.annotator_id);
  records_[{record.post_id, record.annotator_id}] = record;
}

bool AnnotationStore::has_post(const std::string& post_id) const {
  std::lock_guard lock(mu_);
  return task_index_.contains(post_id);
}

std::vector<AnnotationRecord> AnnotationStore::records() const {
  std::lock_guard lock(mu_);
  std::vector<AnnotationRecord> out;
  out.reserve(records_.size());
  for (const auto& [key, r] : records_) out.push_back(r);
  return out;
}

std::vector<AnnotationRecord> AnnotationStore::records_for(const std::string& post_id) const {
  std::lock_guard lock(mu_);
  std::vector<AnnotationRecord> out;
  for (auto it = records_.lower_bound({post_id, std::string()});
       it != records_.end() && it->first.first == post_id; ++it) {
    out.push_back(it->second);
  }
  return out;
}

std::vector<GoldLabel> AnnotationStore::gold() const {
  const auto all = records();
  std::vector<GoldLabel> out;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].post_id == all[i].post_id) ++j;
    out.push_back(adjudicate(std::span(all).subspan(i, j - i), config_.min_annotators));
    i = j;
  }
  return out;
}

AgreementReport AnnotationStore::agreement() const {
  const auto all = records();
  return annotation::agreement(all);
}

std::size_t AnnotationStore::task_count() const {
  std::lock_guard lock(mu_);
  return tasks_.size();
}

void write_labels_csv(std::ostream& out, std::span<const AnnotationRecord> records) {
  csv::write_row(out, {"post_id", "annotator_id", "label", "labeled_at"});
  for (const auto& r : records) {
    csv::write_row(out, {r.post_id, r.annotator_id, std::string(to_string(r.label)),
                         format_iso8601(r.labeled_at)});
  }
}

std::vector<AnnotationRecord> read_labels_csv(std::istream& in) {
  const auto header = csv::read_row(in);
  if (!header) return {};
  const std::size_t c_post = csv::column(*header, "post_id");
  const std::size_t c_ann = csv::column(*header, "annotator_id");
  const std::size_t c_label = csv::column(*header, "label");
  const std::size_t c_at = csv::column(*header, "labeled_at");
  const std::size_t width = std::max({c_post, c_ann, c_label, c_at}) + 1;
  std::vector<AnnotationRecord> out;
  while (auto row = csv::read_row(in)) {
    if (row->size() == 1 && row->front().empty()) continue;
    if (row->size() < width) throw FormatError("labels CSV: short row");
    out.push_back({(*row)[c_post], (*row)[c_ann], require_label((*row)[c_label]),
                   parse_iso8601((*row)[c_at])});
  }
  return out;
}

void write_gold_csv(std::ostream& out, std::span<const GoldLabel> gold) {
  csv::write_row(out, {"post_id", "label", "status"});
  for (const auto& g : gold) {
    csv::write_row(out, {g.post_id, g.label ? std::string(to_string(*g.label)) : std::string(),
                         std::string(to_string(g.status))});
  }
}

std::vector<GoldLabel> read_gold_csv(std::istream& in) {
  const auto header = csv::read_row(in);
  if (!header) return {};
  const std::size_t c_post = csv::column(*header, "post_id");
  const std::size_t c_label = csv::column(*header, "label");
  std::optional<std::size_t> c_status;
  for (std::size_t i = 0; i < header->size(); ++i) {
    if ((*header)[i] == "status") c_status = i;
  }
  std::vector<GoldLabel> out;
  while (auto row = csv::read_row(in)) {
    if (row->size() == 1 && row->front().empty()) continue;
    if (row->size() <= std::max(c_post, c_label)) throw FormatError("gold CSV: short row");
    GoldLabel g;
    g.post_id = (*row)[c_post];
    const std::string status =
        c_status && *c_status < row->size() ? (*row)[*c_status] : std::string("resolved");
    if (status == "resolved") {
      g.status = GoldStatus::Resolved;
      g.label = require_label((*row)[c_label]);
    } else if (status == "needs_adjudication") {
      g.status = GoldStatus::NeedsAdjudication;
    } else {
      throw FormatError("gold CSV: unknown status '" + status + "'");
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<GoldLabel> read_gold_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_gold_csv(in);
}

}  // namespace toxipipe::annotation
