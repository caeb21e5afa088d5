#pragma once

// File-based post ingestion: JSONL reading, text normalization, lexicon
// matching and deduplication.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "toxipipe/lexvar.hpp"
#include "toxipipe/time.hpp"

namespace toxipipe::corpus {

enum class Source { TwitterLike, RedditLike };

std::string_view to_string(Source s);
// Accepts "twitter-like"/"twitter" and "reddit-like"/"reddit".
std::optional<Source> parse_source(std::string_view s);

struct PostRecord {
  std::string post_id;
  std::string author_id;
  UtcSeconds created_at = 0;
  std::string text;
  Source source = Source::TwitterLike;
  std::optional<std::string> region;
  bool is_repost = false;
};

// Throws FormatError describing the first problem found. Reddit-like records
// with a "title" field get "title\nbody" as their text.
PostRecord post_from_json(const nlohmann::json& j);
nlohmann::json post_to_json(const PostRecord& post);

struct ReadStats {
  std::size_t lines = 0;  // non-blank lines seen
  std::size_t records = 0;
  std::size_t skipped = 0;
};

// Streaming reader. Malformed lines are skipped and counted; when the input
// is exhausted and more than half of the non-blank lines were malformed,
// next() throws FormatError instead of signalling end of stream.
class JsonlReader {
 public:
  explicit JsonlReader(const std::filesystem::path& path);
  explicit JsonlReader(std::unique_ptr<std::istream> in);

  std::optional<PostRecord> next();
  const ReadStats& stats() const { return stats_; }
  // Line numbers and messages of the first few skipped lines.
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::unique_ptr<std::istream> in_;
  std::string name_;
  ReadStats stats_;
  std::vector<std::string> diagnostics_;
  std::size_t line_no_ = 0;
  bool finished_ = false;
};

// Reads a whole file; convenience for small inputs and tests.
std::vector<PostRecord> read_jsonl(const std::filesystem::path& path, ReadStats* stats = nullptr);

// Case-fold, replace URLs with "<url>" and @handles with "<user>", strip
// the registered and trademark signs, collapse whitespace, trim.
std::string normalize(std::string_view text);

struct MatchedTerm {
  std::string seed;
  std::string surface;   // exact slice of the normalized text
  std::size_t offset = 0;  // byte offset into the normalized text
  bool variant = false;  // true when the matched lexicon form is not the seed itself

  friend bool operator==(const MatchedTerm&, const MatchedTerm&) = default;
};

struct MatchedPost {
  PostRecord post;
  std::string normalized_text;
  std::vector<MatchedTerm> matched_terms;
};

nlohmann::json matched_to_json(const MatchedPost& m);
MatchedPost matched_from_json(const nlohmann::json& j);

// Compiled whole-token matcher over every seed and variant of a lexicon.
class LexiconMatcher {
 public:
  // Throws ContractError on an empty lexicon.
  explicit LexiconMatcher(const lexvar::Lexicon& lexicon, bool seeds_only = false);

  // All occurrences of lexicon terms in already-normalized text, ordered by
  // offset, then seed, then surface.
  std::vector<MatchedTerm> find(std::string_view normalized) const;

  std::optional<MatchedPost> match(const PostRecord& post) const;
  std::optional<MatchedPost> match(const PostRecord& post, std::string normalized) const;

 private:
  struct Term {
    std::vector<std::string> tokens;
    std::string seed;
    bool variant = false;
  };
  // Terms keyed by their first token.
  std::unordered_map<std::string, std::vector<Term>> by_first_;
};

// Whether `term` occurs at `offset` of `normalized` on token boundaries.
bool verify_match(std::string_view normalized, const MatchedTerm& term);

// Stateful in-order filter: drops reposts, repeated post ids and repeated
// (author, normalized text) pairs.
class Deduplicator {
 public:
  explicit Deduplicator(bool drop_reposts = true) : drop_reposts_(drop_reposts) {}

  // True if the record survives.
  bool admit(const PostRecord& post, std::string_view normalized);

  std::size_t dropped() const { return dropped_; }
  std::size_t state_size() const { return seen_text_.size() + seen_ids_.size(); }

 private:
  bool drop_reposts_;
  std::unordered_set<std::string> seen_ids_;
  std::unordered_set<std::string> seen_text_;
  std::size_t dropped_ = 0;
};

struct IngestOptions {
  bool dedup = true;
};

struct IngestStats {
  ReadStats read;
  std::size_t deduplicated = 0;
  std::size_t matched = 0;          // posts matched by the full lexicon
  std::size_t seed_only_matched = 0;  // posts matched by seeds alone
  std::size_t variant_matches = 0;  // variant-attributed term occurrences
};

// read -> normalize -> dedup -> match, streaming. `sink` receives every
// matched post in input order.
IngestStats ingest(const std::filesystem::path& in, const lexvar::Lexicon& lexicon,
                   const IngestOptions& options,
                   const std::function<void(const MatchedPost&)>& sink);

// Writes matched posts as JSONL.
class MatchedWriter {
 public:
  explicit MatchedWriter(const std::filesystem::path& path);
  void write(const MatchedPost& m);

 private:
  std::ofstream out_;
};

std::vector<MatchedPost> read_matched_jsonl(const std::filesystem::path& path);

}  // namespace toxipipe::corpus
