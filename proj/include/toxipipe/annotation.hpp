#pragma once

// Four-class human labeling: agreement statistics, adjudication and the
// task store behind the annotation API.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "toxipipe/corpus.hpp"
#include "toxipipe/labels.hpp"
#include "toxipipe/time.hpp"

namespace toxipipe::annotation {

struct AnnotationRecord {
  std::string post_id;
  std::string annotator_id;
  LabelClass label = LabelClass::Unrelated;
  UtcSeconds labeled_at = 0;
};

enum class GoldStatus { Resolved, NeedsAdjudication };

std::string_view to_string(GoldStatus s);

struct GoldLabel {
  std::string post_id;
  std::optional<LabelClass> label;  // set iff status == Resolved
  GoldStatus status = GoldStatus::NeedsAdjudication;
};

// Cohen's kappa for two aligned label sequences. When both raters used one
// and the same class throughout (p_e = 1) the result is 1.0.
double cohens_kappa(std::span<const LabelClass> a, std::span<const LabelClass> b);

struct PairAgreement {
  std::string annotator_a;
  std::string annotator_b;
  std::size_t shared_posts = 0;
  std::optional<double> kappa;  // empty when shared_posts < 2
};

struct AgreementReport {
  std::vector<std::string> annotators;  // sorted
  std::vector<PairAgreement> pairs;     // every unordered pair, a < b
  std::size_t eligible_pairs = 0;
  std::optional<double> average;  // empty when no pair is eligible
};

// Every annotator pair, kappa over the posts both labeled.
AgreementReport agreement(std::span<const AnnotationRecord> records);

// Unweighted mean of pairwise kappas over pairs sharing >= 2 posts.
// Throws DomainError when no pair qualifies.
double pairwise_average_kappa(std::span<const AnnotationRecord> records);

// Strict majority wins; ties, or fewer than `min_annotators` records, need
// adjudication. Records must all carry the same post_id.
GoldLabel adjudicate(std::span<const AnnotationRecord> records, std::size_t min_annotators = 2);

struct StoreConfig {
  std::size_t target_annotations = 2;
  UtcSeconds lease_seconds = 600;
  bool open_enrollment = true;
  std::size_t min_annotators = 2;
};

// Label store and task queue. All public members are thread-safe; label
// submissions are serialized through one mutex.
class AnnotationStore {
 public:
  using Clock = std::function<UtcSeconds()>;

  explicit AnnotationStore(StoreConfig config = {}, Clock clock = {});

  // Replaces the task set. Tasks are served oldest first by (created_at, post_id).
  void load_tasks(std::vector<corpus::MatchedPost> tasks);
  void set_guideline(std::string text);
  std::string guideline() const;

  void register_annotator(const std::string& annotator_id);
  bool is_registered(const std::string& annotator_id) const;

  // Oldest post the annotator has not labeled, still short of
  // target_annotations, and not currently leased to them. Posts leased to
  // other annotators are handed out only when no unleased post is left.
  // Unknown annotators are enrolled when open_enrollment is set, otherwise
  // ContractError.
  std::optional<corpus::MatchedPost> next_task(const std::string& annotator_id);

  // Insert or overwrite the (post_id, annotator_id) record. Throws
  // NotFoundError for unknown posts and ContractError for unknown annotators
  // without open enrollment. Returns the stored record.
  AnnotationRecord submit(const std::string& post_id, const std::string& annotator_id,
                          LabelClass label);
  // Restores a record as-is (used when reloading persisted labels).
  void restore(const AnnotationRecord& record);

  // Posts the annotator has not labeled that still need labels.
  std::size_t remaining_for(const std::string& annotator_id) const;

  bool has_post(const std::string& post_id) const;
  std::vector<AnnotationRecord> records() const;  // sorted by (post_id, annotator_id)
  std::vector<AnnotationRecord> records_for(const std::string& post_id) const;
  std::vector<GoldLabel> gold() const;
  AgreementReport agreement() const;
  std::size_t task_count() const;

 private:
  struct Lease {
    std::string annotator_id;
    UtcSeconds expires_at;
  };

  UtcSeconds now() const;
  void ensure_annotator(const std::string& annotator_id);
  std::size_t label_count(const std::string& post_id) const;

  StoreConfig config_;
  Clock clock_;
  mutable std::mutex mu_;
  std::vector<corpus::MatchedPost> tasks_;  // sorted
  std::unordered_map<std::string, std::size_t> task_index_;
  std::map<std::pair<std::string, std::string>, AnnotationRecord> records_;
  std::unordered_map<std::string, std::vector<Lease>> leases_;  // by post_id
  std::set<std::string> annotators_;
  std::string guideline_;
};

// CSV post_id,annotator_id,label,labeled_at
void write_labels_csv(std::ostream& out, std::span<const AnnotationRecord> records);
std::vector<AnnotationRecord> read_labels_csv(std::istream& in);
// CSV post_id,label,status (label empty when unresolved)
void write_gold_csv(std::ostream& out, std::span<const GoldLabel> gold);
std::vector<GoldLabel> read_gold_csv(std::istream& in);
std::vector<GoldLabel> read_gold_csv(const std::filesystem::path& path);

}  // namespace toxipipe::annotation
