#include "toxipipe/corpus.hpp"

#include <algorithm>
#include <sstream>

#include "toxipipe/error.hpp"
#include "toxipipe/text.hpp"

namespace toxipipe::corpus {

using nlohmann::json;

std::string_view to_string(Source s) {
  return s == Source::TwitterLike ? "twitter-like" : "reddit-like";
}

std::optional<Source> parse_source(std::string_view s) {
  if (s == "twitter-like" || s == "twitter") return Source::TwitterLike;
  if (s == "reddit-like" || s == "reddit") return Source::RedditLike;
  return std::nullopt;
}

namespace {

const std::string& required_string(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw FormatError(std::string("field '") + key + "' must be a string");
  return it->get_ref<const std::string&>();
}

}  // namespace

PostRecord post_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("record is not a JSON object");
  PostRecord p;
  p.post_id = required_string(j, "post_id");
  if (p.post_id.empty()) throw FormatError("empty post_id");
  p.author_id = required_string(j, "author_id");
  if (p.author_id.empty()) throw FormatError("empty author_id");
  p.created_at = parse_iso8601(required_string(j, "created_at"));
  const std::string& source = required_string(j, "source");
  const auto parsed = parse_source(source);
  if (!parsed) throw FormatError("unknown source '" + source + "'");
  p.source = *parsed;
  p.text = required_string(j, "text");
  if (p.source == Source::RedditLike) {
    if (auto it = j.find("title"); it != j.end() && it->is_string() && !it->get_ref<const std::string&>().empty()) {
      p.text = it->get<std::string>() + "\n" + p.text;
    }
  }
  if (text::trim(p.text).empty()) throw FormatError("empty text");
  if (auto it = j.find("region"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw FormatError("field 'region' must be a string");
    if (!it->get_ref<const std::string&>().empty()) p.region = it->get<std::string>();
  }
  if (auto it = j.find("is_repost"); it != j.end() && !it->is_null()) {
    if (!it->is_boolean()) throw FormatError("field 'is_repost' must be a boolean");
    p.is_repost = it->get<bool>();
  }
  return p;
}

json post_to_json(const PostRecord& p) {
  json j = {{"post_id", p.post_id},
            {"author_id", p.author_id},
            {"created_at", format_iso8601(p.created_at)},
            {"text", p.text},
            {"source", to_string(p.source)}};
  if (p.region) j["region"] = *p.region;
  if (p.is_repost) j["is_repost"] = true;
  return j;
}

JsonlReader::JsonlReader(const std::filesystem::path& path) : name_(path.string()) {
  auto in = std::make_unique<std::ifstream>(path, std::ios::binary);
  if (!*in) throw IoError("cannot open " + path.string());
  in_ = std::move(in);
}

JsonlReader::JsonlReader(std::unique_ptr<std::istream> in)
    : in_(std::move(in)), name_("<stream>") {}

std::optional<PostRecord> JsonlReader::next() {
  if (finished_) return std::nullopt;
  std::string line;
  while (std::getline(*in_, line)) {
    ++line_no_;
    if (text::trim(line).empty()) continue;
    ++stats_.lines;
    try {
      PostRecord p = post_from_json(json::parse(line));
      ++stats_.records;
      return p;
    } catch (const json::exception& e) {
      ++stats_.skipped;
      if (diagnostics_.size() < 10) {
        diagnostics_.push_back("line " + std::to_string(line_no_) + ": invalid JSON");
      }
    } catch (const FormatError& e) {
      ++stats_.skipped;
      if (diagnostics_.size() < 10) {
        diagnostics_.push_back("line " + std::to_string(line_no_) + ": " + e.what());
      }
    }
  }
  if (in_->bad()) throw IoError("read failed: " + name_);
  finished_ = true;
  if (stats_.skipped * 2 > stats_.lines) {
    std::ostringstream msg;
    msg << name_ << ": " << stats_.skipped << " of " << stats_.lines
        << " lines are malformed (more than half); wrong input format?";
    for (const auto& d : diagnostics_) msg << "\n  " << d;
    throw FormatError(msg.str());
  }
  return std::nullopt;
}

std::vector<PostRecord> read_jsonl(const std::filesystem::path& path, ReadStats* stats) {
  JsonlReader reader(path);
  std::vector<PostRecord> out;
  while (auto p = reader.next()) out.push_back(std::move(*p));
  if (stats) *stats = reader.stats();
  return out;
}

namespace {

bool starts_with_ci(std::u32string_view s, std::size_t i, std::string_view prefix) {
  if (i + prefix.size() > s.size()) return false;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    if (text::fold_case(s[i + k]) != static_cast<char32_t>(prefix[k])) return false;
  }
  return true;
}

bool is_handle_char(char32_t c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

}  // namespace

std::string normalize(std::string_view input) {
  const std::u32string s = text::decode_utf8(input);
  std::string out;
  out.reserve(input.size());
  bool pending_space = false;
  char32_t last = 0;  // last code point written
  const auto put = [&](std::string_view piece, char32_t tail) {
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.append(piece);
    last = tail;
  };
  std::size_t i = 0;
  while (i < s.size()) {
    const char32_t c = s[i];
    // Judged on the output so that normalizing twice changes nothing.
    const bool at_boundary = out.empty() || pending_space || !text::is_alnum(last);
    if (text::is_space(c)) {
      pending_space = true;
      ++i;
    } else if (c == 0xAE || c == 0x2122) {
      ++i;
    } else if (at_boundary && (starts_with_ci(s, i, "http://") || starts_with_ci(s, i, "https://") ||
                               starts_with_ci(s, i, "www."))) {
      while (i < s.size() && !text::is_space(s[i])) ++i;
      put("<url>", U'>');
    } else if (c == '@' && at_boundary && i + 1 < s.size() && is_handle_char(s[i + 1])) {
      ++i;
      while (i < s.size() && is_handle_char(s[i])) ++i;
      put("<user>", U'>');
    } else {
      const char32_t folded = text::fold_case(c);
      std::string piece;
      text::append_utf8(piece, folded);
      put(piece, folded);
      ++i;
    }
  }
  return out;
}

json matched_to_json(const MatchedPost& m) {
  json j = post_to_json(m.post);
  j["normalized_text"] = m.normalized_text;
  json terms = json::array();
  for (const auto& t : m.matched_terms) {
    terms.push_back(
        {{"seed", t.seed}, {"surface", t.surface}, {"offset", t.offset}, {"variant", t.variant}});
  }
  j["matched_terms"] = std::move(terms);
  return j;
}

MatchedPost matched_from_json(const json& j) {
  MatchedPost m;
  m.post = post_from_json(j);
  if (auto it = j.find("normalized_text"); it != j.end() && it->is_string()) {
    m.normalized_text = it->get<std::string>();
  } else {
    m.normalized_text = normalize(m.post.text);
  }
  if (auto it = j.find("matched_terms"); it != j.end() && it->is_array()) {
    for (const auto& t : *it) {
      MatchedTerm term;
      term.seed = t.at("seed").get<std::string>();
      term.surface = t.at("surface").get<std::string>();
      term.offset = t.at("offset").get<std::size_t>();
      term.variant = t.value("variant", false);
      m.matched_terms.push_back(std::move(term));
    }
  }
  return m;
}

LexiconMatcher::LexiconMatcher(const lexvar::Lexicon& lexicon, bool seeds_only) {
  const auto tokens_of = [](std::string_view term) {
    const std::string norm = normalize(term);
    std::vector<std::string> out;
    for (const auto& t : text::tokenize(norm)) out.emplace_back(t.text);
    return out;
  };
  std::size_t count = 0;
  for (const auto& entry : lexicon.entries) {
    const auto seed_tokens = tokens_of(entry.seed);
    if (seed_tokens.empty()) continue;
    const auto add = [&](std::vector<std::string> toks, bool variant) {
      auto& bucket = by_first_[toks.front()];
      for (const auto& existing : bucket) {
        if (existing.tokens == toks && existing.seed == entry.seed) return;
      }
      bucket.push_back({std::move(toks), entry.seed, variant});
      ++count;
    };
    add(seed_tokens, false);
    if (seeds_only) continue;
    for (const auto& v : entry.variants) {
      auto toks = tokens_of(v.token);
      if (!toks.empty() && toks != seed_tokens) add(std::move(toks), true);
    }
  }
  if (count == 0) throw ContractError("lexicon is empty");
}

std::vector<MatchedTerm> LexiconMatcher::find(std::string_view normalized) const {
  std::vector<MatchedTerm> out;
  const auto tokens = text::tokenize(normalized);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto it = by_first_.find(std::string(tokens[i].text));
    if (it == by_first_.end()) continue;
    for (const Term& term : it->second) {
      const std::size_t n = term.tokens.size();
      if (i + n > tokens.size()) continue;
      bool ok = true;
      for (std::size_t k = 1; k < n && ok; ++k) ok = tokens[i + k].text == term.tokens[k];
      if (!ok) continue;
      const std::size_t begin = tokens[i].offset;
      const std::size_t end = tokens[i + n - 1].offset + tokens[i + n - 1].text.size();
      out.push_back({term.seed, std::string(normalized.substr(begin, end - begin)), begin,
                     term.variant});
    }
  }
  std::sort(out.begin(), out.end(), [](const MatchedTerm& a, const MatchedTerm& b) {
    return std::tie(a.offset, a.seed, a.surface, a.variant) <
           std::tie(b.offset, b.seed, b.surface, b.variant);
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::optional<MatchedPost> LexiconMatcher::match(const PostRecord& post) const {
  return match(post, normalize(post.text));
}

std::optional<MatchedPost> LexiconMatcher::match(const PostRecord& post,
                                                 std::string normalized) const {
  auto terms = find(normalized);
  if (terms.empty()) return std::nullopt;
  return MatchedPost{post, std::move(normalized), std::move(terms)};
}

bool verify_match(std::string_view normalized, const MatchedTerm& term) {
  if (term.surface.empty() || term.offset + term.surface.size() > normalized.size()) return false;
  if (normalized.substr(term.offset, term.surface.size()) != term.surface) return false;
  const auto tokens = text::tokenize(normalized);
  const std::size_t end = term.offset + term.surface.size();
  const bool starts = std::any_of(tokens.begin(), tokens.end(),
                                  [&](const text::Token& t) { return t.offset == term.offset; });
  const bool ends = std::any_of(tokens.begin(), tokens.end(), [&](const text::Token& t) {
    return t.offset + t.text.size() == end;
  });
  return starts && ends;
}

bool Deduplicator::admit(const PostRecord& post, std::string_view normalized) {
  if (drop_reposts_ && post.is_repost) {
    ++dropped_;
    return false;
  }
  if (seen_ids_.contains(post.post_id)) {
    ++dropped_;
    return false;
  }
  std::string key;
  key.reserve(post.author_id.size() + 1 + normalized.size());
  key.append(post.author_id).push_back('\x1f');
  key.append(normalized);
  if (!seen_text_.insert(std::move(key)).second) {
    ++dropped_;
    return false;
  }
  seen_ids_.insert(post.post_id);
  return true;
}

IngestStats ingest(const std::filesystem::path& in, const lexvar::Lexicon& lexicon,
                   const IngestOptions& options,
                   const std::function<void(const MatchedPost&)>& sink) {
  const LexiconMatcher full(lexicon);
  const LexiconMatcher seeds(lexicon, /*seeds_only=*/true);
  Deduplicator dedup;
  IngestStats stats;
  JsonlReader reader(in);
  while (auto post = reader.next()) {
    std::string normalized = normalize(post->text);
    auto matched = full.match(*post, std::move(normalized));
    // Only matched posts enter the dedup state; an unmatched post can never
    // be emitted, so skipping it first does not change the output.
    if (!matched) continue;
    if (options.dedup && !dedup.admit(matched->post, matched->normalized_text)) {
      ++stats.deduplicated;
      continue;
    }
    ++stats.matched;
    if (!seeds.find(matched->normalized_text).empty()) ++stats.seed_only_matched;
    stats.variant_matches += static_cast<std::size_t>(
        std::count_if(matched->matched_terms.begin(), matched->matched_terms.end(),
                      [](const MatchedTerm& t) { return t.variant; }));
    sink(*matched);
  }
  stats.read = reader.stats();
  return stats;
}

MatchedWriter::MatchedWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
  if (!out_) throw IoError("cannot write " + path.string());
}

void MatchedWriter::write(const MatchedPost& m) {
  out_ << matched_to_json(m).dump() << '\n';
  if (!out_) throw IoError("write failed");
}

std::vector<MatchedPost> read_matched_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<MatchedPost> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(matched_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace toxipipe::corpus
