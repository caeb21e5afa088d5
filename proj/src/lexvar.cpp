#include "toxipipe/lexvar.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "toxipipe/csv.hpp"
#include "toxipipe/error.hpp"
#include "toxipipe/text.hpp"

namespace toxipipe::lexvar {

namespace {

bool parse_double(std::string_view s, double& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_size(std::string_view s, std::size_t& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double dot(std::span<const double> u, std::span<const double> v) {
  return std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
}

}  // namespace

EmbeddingModel::EmbeddingModel(std::vector<std::string> tokens,
                               std::vector<std::vector<double>> vectors) {
  if (tokens.size() != vectors.size()) {
    throw ContractError("token and vector counts differ");
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i == 0) dimension_ = vectors[i].size();
    if (vectors[i].size() != dimension_) {
      throw FormatError("vector " + std::to_string(i) + " has dimension " +
                        std::to_string(vectors[i].size()) + ", expected " +
                        std::to_string(dimension_));
    }
    add(std::move(tokens[i]), vectors[i]);
  }
  finish();
}

void EmbeddingModel::add(std::string token, std::span<const double> values) {
  if (exact_.contains(token)) {
    ++duplicates_;
    return;
  }
  const std::size_t idx = tokens_.size();
  exact_.emplace(token, idx);
  folded_.emplace(text::fold_case(token), idx);  // first folded spelling wins
  tokens_.push_back(std::move(token));
  data_.insert(data_.end(), values.begin(), values.end());
}

void EmbeddingModel::finish() {
  if (tokens_.empty()) throw FormatError("embedding model has no tokens");
  if (dimension_ == 0) throw FormatError("embedding dimension must be >= 1");
  norms_.resize(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    norms_[i] = std::sqrt(dot(vector(i), vector(i)));
  }
}

std::optional<std::size_t> EmbeddingModel::find(std::string_view token) const {
  if (auto it = exact_.find(std::string(token)); it != exact_.end()) return it->second;
  if (auto it = folded_.find(text::fold_case(token)); it != folded_.end()) return it->second;
  return std::nullopt;
}

EmbeddingModel load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings file " + path.string());
  return load_embeddings(in);
}

EmbeddingModel load_embeddings(std::istream& in) {
  EmbeddingModel model;
  std::string line;
  std::size_t line_no = 0;
  bool first_record = true;
  std::size_t declared_count = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = text::split_whitespace(line);
    if (fields.empty()) continue;
    if (first_record) {
      first_record = false;
      std::size_t count = 0, dim = 0;
      if (fields.size() == 2 && parse_size(fields[0], count) && parse_size(fields[1], dim)) {
        if (dim == 0) throw FormatError("line " + std::to_string(line_no) + ": dimension 0");
        model.dimension_ = dim;
        declared_count = count;
        continue;
      }
      if (fields.size() < 2) {
        throw FormatError("line " + std::to_string(line_no) + ": record has no vector values");
      }
      model.dimension_ = fields.size() - 1;
    }
    if (fields.size() - 1 != model.dimension_) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(model.dimension_) + " values, found " +
                        std::to_string(fields.size() - 1));
    }
    values.resize(model.dimension_);
    for (std::size_t k = 0; k < model.dimension_; ++k) {
      if (!parse_double(fields[k + 1], values[k])) {
        throw FormatError("line " + std::to_string(line_no) + ": invalid number '" +
                          fields[k + 1] + "'");
      }
    }
    model.add(fields[0], values);
  }
  if (model.tokens_.empty()) throw FormatError("embedding file is empty");
  (void)declared_count;  // informational only; the records are authoritative
  model.finish();
  return model;
}

void ExpansionConfig::validate() const {
  if (!(theta_lex >= 0.0 && theta_lex <= 1.0)) throw ContractError("theta_lex must be in [0,1]");
  if (!(theta_sem >= -1.0)) throw ContractError("theta_sem must be >= -1");
  if (max_neighbors < 1) throw ContractError("max_neighbors must be >= 1");
}

bool VariantSet::contains(std::string_view token) const {
  return std::any_of(variants.begin(), variants.end(),
                     [&](const Variant& v) { return v.token == token; });
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ContractError("cosine: dimension mismatch");
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) throw DomainError("cosine: zero-norm vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  const std::u32string s = text::decode_utf8(a);
  const std::u32string t = text::decode_utf8(b);
  if (s.empty()) return t.size();
  if (t.empty()) return s.size();
  // Single rolling row over the shorter string.
  const std::u32string& row_str = s.size() < t.size() ? s : t;
  const std::u32string& col_str = s.size() < t.size() ? t : s;
  std::vector<std::size_t> row(row_str.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= col_str.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= row_str.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t cost = col_str[i - 1] == row_str[j - 1] ? 0 : 1;
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + cost});
      diag = up;
    }
  }
  return row.back();
}

double lexical_similarity(std::string_view a, std::string_view b) {
  const std::size_t la = text::decode_utf8(a).size();
  const std::size_t lb = text::decode_utf8(b).size();
  const std::size_t longest = std::max(la, lb);
  if (longest == 0) throw DomainError("lexical_similarity: both strings empty");
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

namespace {

struct Neighbor {
  std::size_t index;
  double cosine;
};

// Top-k vocabulary entries by cosine to `term`, excluding the term itself and
// zero vectors. Ties resolve by token order.
std::vector<Neighbor> top_neighbors(const EmbeddingModel& model, std::size_t term,
                                    std::size_t k) {
  std::vector<Neighbor> all;
  if (model.norm(term) == 0.0) return all;
  all.reserve(model.size());
  const auto u = model.vector(term);
  for (std::size_t j = 0; j < model.size(); ++j) {
    if (j == term || model.norm(j) == 0.0) continue;
    const double c =
        std::clamp(dot(u, model.vector(j)) / (model.norm(term) * model.norm(j)), -1.0, 1.0);
    all.push_back({j, c});
  }
  const auto better = [&](const Neighbor& x, const Neighbor& y) {
    if (x.cosine != y.cosine) return x.cosine > y.cosine;
    return model.token(x.index) < model.token(y.index);
  };
  const std::size_t n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), better);
  all.resize(n);
  return all;
}

}  // namespace

VariantSet expand_term(std::string_view seed, const EmbeddingModel& model,
                       const ExpansionConfig& config) {
  config.validate();
  VariantSet result;
  result.seed = std::string(seed);
  const auto seed_index = model.find(seed);
  if (!seed_index) {
    result.not_in_vocabulary = true;
    return result;
  }
  const std::string seed_folded = text::fold_case(seed);
  std::unordered_set<std::string> accepted;
  std::vector<std::size_t> frontier{*seed_index};
  for (std::size_t depth = 0; depth < config.max_depth && !frontier.empty(); ++depth) {
    std::vector<std::size_t> next;
    for (std::size_t term : frontier) {
      for (const Neighbor& nb : top_neighbors(model, term, config.max_neighbors)) {
        if (nb.cosine < config.theta_sem) break;  // sorted descending
        std::string folded = text::fold_case(model.token(nb.index));
        if (folded == seed_folded || accepted.contains(folded)) continue;
        const double lex = lexical_similarity(folded, seed_folded);
        if (lex < config.theta_lex) continue;
        accepted.insert(folded);
        result.variants.push_back({std::move(folded), nb.cosine, lex, depth + 1});
        next.push_back(nb.index);
      }
    }
    frontier = std::move(next);
  }
  return result;
}

VariantSet expand_multiword(std::span<const std::string> phrase, const EmbeddingModel& model,
                            const ExpansionConfig& config) {
  if (phrase.size() < 2) {
    throw ContractError("expand_multiword needs at least 2 tokens; use expand_term for one");
  }
  config.validate();
  VariantSet result;
  for (std::size_t i = 0; i < phrase.size(); ++i) {
    if (i != 0) result.seed += ' ';
    result.seed += phrase[i];
  }
  std::vector<VariantSet> per_token;
  per_token.reserve(phrase.size());
  bool any_in_vocab = false;
  for (const auto& word : phrase) {
    per_token.push_back(expand_term(word, model, config));
    any_in_vocab = any_in_vocab || !per_token.back().not_in_vocabulary;
  }
  result.not_in_vocabulary = !any_in_vocab;
  if (config.max_altered_tokens == 0) return result;

  std::unordered_set<std::string> seen;
  std::vector<const Variant*> choice(phrase.size(), nullptr);
  // Depth-first enumeration in position order; nullptr means "keep original".
  const auto emit = [&]() {
    Variant v;
    v.lexical_similarity = 1.0;
    v.cosine_to_parent = 1.0;
    std::string joined;
    for (std::size_t i = 0; i < phrase.size(); ++i) {
      if (i != 0) joined += ' ';
      if (choice[i] == nullptr) {
        joined += text::fold_case(phrase[i]);
      } else {
        joined += choice[i]->token;
        v.lexical_similarity = std::min(v.lexical_similarity, choice[i]->lexical_similarity);
        v.cosine_to_parent = std::min(v.cosine_to_parent, choice[i]->cosine_to_parent);
        v.depth = std::max(v.depth, choice[i]->depth);
      }
    }
    if (seen.insert(joined).second) {
      v.token = std::move(joined);
      result.variants.push_back(std::move(v));
    }
  };
  const auto recurse = [&](auto& self, std::size_t pos, std::size_t altered) -> void {
    if (pos == phrase.size()) {
      if (altered > 0) emit();
      return;
    }
    choice[pos] = nullptr;
    self(self, pos + 1, altered);
    if (altered < config.max_altered_tokens) {
      for (const Variant& v : per_token[pos].variants) {
        choice[pos] = &v;
        self(self, pos + 1, altered + 1);
      }
      choice[pos] = nullptr;
    }
  };
  recurse(recurse, 0, 0);
  return result;
}

double retrieval_gain(std::size_t baseline_hits, std::size_t expanded_hits) {
  if (baseline_hits == 0) throw DomainError("retrieval_gain: baseline_hits must be >= 1");
  if (expanded_hits < baseline_hits) {
    throw ContractError("retrieval_gain: expanded_hits must be >= baseline_hits");
  }
  return 100.0 * static_cast<double>(expanded_hits - baseline_hits) /
         static_cast<double>(baseline_hits);
}

std::size_t Lexicon::variant_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.variants.size();
  return n;
}

Lexicon expand_lexicon(std::span<const std::string> seeds, const EmbeddingModel& model,
                       const ExpansionConfig& config) {
  Lexicon lexicon;
  lexicon.entries.reserve(seeds.size());
  for (const auto& seed : seeds) {
    const auto words = text::split_whitespace(seed);
    if (words.size() >= 2) {
      lexicon.entries.push_back(expand_multiword(words, model, config));
    } else if (words.size() == 1) {
      lexicon.entries.push_back(expand_term(words[0], model, config));
    }
  }
  return lexicon;
}

std::vector<std::string> read_seeds(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open seeds file " + path.string());
  std::vector<std::string> seeds;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    seeds.emplace_back(t);
  }
  return seeds;
}

void write_lexicon_csv(std::ostream& out, const Lexicon& lexicon) {
  csv::write_row(out, {"seed", "variant", "cosine", "lexsim", "depth"});
  for (const auto& entry : lexicon.entries) {
    csv::write_row(out, {entry.seed, entry.seed, "1", "1", "0"});
    for (const auto& v : entry.variants) {
      csv::write_row(out, {entry.seed, v.token, format_double(v.cosine_to_parent),
                           format_double(v.lexical_similarity), std::to_string(v.depth)});
    }
  }
}

void write_lexicon_csv(const std::filesystem::path& path, const Lexicon& lexicon) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_lexicon_csv(out, lexicon);
}

Lexicon read_lexicon_csv(std::istream& in) {
  const auto header = csv::read_row(in);
  if (!header) throw FormatError("lexicon CSV is empty");
  const std::size_t c_seed = csv::column(*header, "seed");
  const std::size_t c_variant = csv::column(*header, "variant");
  const std::size_t c_cos = csv::column(*header, "cosine");
  const std::size_t c_lex = csv::column(*header, "lexsim");
  const std::size_t c_depth = csv::column(*header, "depth");
  const std::size_t width = std::max({c_seed, c_variant, c_cos, c_lex, c_depth}) + 1;

  Lexicon lexicon;
  std::unordered_map<std::string, std::size_t> by_seed;
  std::size_t row_no = 1;
  while (auto row = csv::read_row(in)) {
    ++row_no;
    if (row->size() == 1 && row->front().empty()) continue;
    if (row->size() < width) {
      throw FormatError("lexicon CSV row " + std::to_string(row_no) + ": too few columns");
    }
    const std::string& seed = (*row)[c_seed];
    auto [it, inserted] = by_seed.emplace(seed, lexicon.entries.size());
    if (inserted) lexicon.entries.push_back(VariantSet{seed, {}, false});
    VariantSet& entry = lexicon.entries[it->second];
    Variant v;
    v.token = (*row)[c_variant];
    if (!parse_double((*row)[c_cos], v.cosine_to_parent) ||
        !parse_double((*row)[c_lex], v.lexical_similarity) ||
        !parse_size((*row)[c_depth], v.depth)) {
      throw FormatError("lexicon CSV row " + std::to_string(row_no) + ": invalid number");
    }
    if (v.token == seed && v.depth == 0) continue;  // self row
    if (v.token.empty()) {
      throw FormatError("lexicon CSV row " + std::to_string(row_no) + ": empty variant");
    }
    if (!entry.contains(v.token)) entry.variants.push_back(std::move(v));
  }
  return lexicon;
}

Lexicon read_lexicon_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon " + path.string());
  return read_lexicon_csv(in);
}

}  // namespace toxipipe::lexvar
