#include "toxipipe/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <tuple>
#include <unordered_set>

#include "toxipipe/corpus.hpp"
#include "toxipipe/error.hpp"
#include "toxipipe/random.hpp"
#include "toxipipe/signals.hpp"
#include "toxipipe/time.hpp"

namespace toxipipe::synth {

using nlohmann::json;

Recipe default_recipe() {
  Recipe r;
  r.keywords[index_of(LabelClass::NonmedicalUse)] = {
      "snorted", "crushed", "recreational", "binge",   "railed",    "stacking",
      "zonked",  "geeked",  "parachuted",   "lean",    "plugged",   "boofed"};
  r.keywords[index_of(LabelClass::Consumption)] = {
      "prescribed", "dosage",  "refill",  "pharmacy",   "doctor", "tablet",
      "morning",    "regimen", "milligrams", "taking",  "swallowed", "bedtime"};
  r.keywords[index_of(LabelClass::Mention)] = {
      "news",    "article", "study",   "report",  "heard",   "documentary",
      "podcast", "lawsuit", "recall",  "warning", "ad",      "commercial"};
  r.keywords[index_of(LabelClass::Unrelated)] = {
      "song",     "lyrics",  "album", "rapper", "meme", "costume",
      "halloween", "nickname", "cat",  "puppy",  "videogame", "band"};
  r.shared = {"lol", "tonight", "today", "honestly", "literally", "again", "really", "maybe"};
  r.filler = {"the", "a",   "and",  "i",  "my",  "just", "so",   "it",  "was", "this",
              "with", "for", "on",  "at", "is",  "that", "got",  "like", "some", "out",
              "up",  "all", "me",   "of", "to",  "in",   "be",   "have", "but", "not"};
  r.drugs = {"xanax", "oxycodone", "adderall", "percocet", "valium"};
  r.prevalence = {0.10, 0.25, 0.30, 0.35};
  return r;
}

json recipe_to_json(const Recipe& r) {
  json keywords = json::object();
  json prevalence = json::object();
  for (LabelClass c : kAllClasses) {
    keywords[std::string(to_string(c))] = r.keywords[index_of(c)];
    prevalence[std::string(to_string(c))] = r.prevalence[index_of(c)];
  }
  return {{"keywords", std::move(keywords)},
          {"shared", r.shared},
          {"filler", r.filler},
          {"drugs", r.drugs},
          {"prevalence", std::move(prevalence)},
          {"keywords_per_text", r.keywords_per_text},
          {"shared_per_text", r.shared_per_text},
          {"filler_per_text", r.filler_per_text},
          {"leak", r.leak}};
}

Recipe recipe_from_json(const json& j) {
  try {
    Recipe r;
    for (LabelClass c : kAllClasses) {
      const std::string name(to_string(c));
      r.keywords[index_of(c)] = j.at("keywords").at(name).get<std::vector<std::string>>();
      r.prevalence[index_of(c)] = j.at("prevalence").at(name).get<double>();
    }
    r.shared = j.at("shared").get<std::vector<std::string>>();
    r.filler = j.at("filler").get<std::vector<std::string>>();
    r.drugs = j.at("drugs").get<std::vector<std::string>>();
    r.keywords_per_text = j.at("keywords_per_text").get<std::size_t>();
    r.shared_per_text = j.at("shared_per_text").get<std::size_t>();
    r.filler_per_text = j.at("filler_per_text").get<std::size_t>();
    r.leak = j.at("leak").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed recipe: ") + e.what());
  }
}

namespace {

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[uniform_below(rng, v.size())];
}

// `k` distinct entries of `v`.
std::vector<std::string> pick_distinct(const std::vector<std::string>& v, std::size_t k, Rng& rng) {
  std::vector<std::string> pool = v;
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(pool[i], pool[i + uniform_below(rng, pool.size() - i)]);
  }
  pool.resize(k);
  return pool;
}

// Recipe words for one text of class `c`, without the drug term.
std::vector<std::string> recipe_words(const Recipe& r, LabelClass c, Rng& rng) {
  std::vector<std::string> words = pick_distinct(r.keywords[index_of(c)], r.keywords_per_text, rng);
  if (!words.empty() && uniform01(rng) < r.leak) {
    std::size_t other = uniform_below(rng, kNumClasses - 1);
    if (other >= index_of(c)) ++other;
    words.back() = pick(r.keywords[other], rng);
  }
  for (auto& w : pick_distinct(r.shared, r.shared_per_text, rng)) words.push_back(std::move(w));
  for (std::size_t i = 0; i < r.filler_per_text; ++i) words.push_back(pick(r.filler, rng));
  return words;
}

std::string capitalized(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::array<std::size_t, kNumClasses> class_counts(const std::array<double, kNumClasses>& prev,
                                                  std::size_t n) {
  std::array<std::size_t, kNumClasses> counts{};
  std::size_t used = 0;
  for (std::size_t c = 0; c + 1 < kNumClasses; ++c) {
    counts[c] = static_cast<std::size_t>(std::llround(prev[c] * static_cast<double>(n)));
    counts[c] = std::min(counts[c], n - used);
    used += counts[c];
  }
  counts[kNumClasses - 1] = n - used;
  return counts;
}

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string hex_id(Rng& rng, std::size_t digits) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  for (std::size_t i = 0; i < digits; ++i) s.push_back(kHex[uniform_below(rng, 16)]);
  return s;
}

}  // namespace

std::vector<classify::LabeledText> generate_labeled(const Recipe& recipe, std::size_t n,
                                                    std::uint64_t seed, std::string_view id_prefix) {
  Rng rng(seed);
  const auto counts = class_counts(recipe.prevalence, n);
  std::vector<LabelClass> labels;
  for (LabelClass c : kAllClasses) labels.insert(labels.end(), counts[index_of(c)], c);
  shuffle(std::span<LabelClass>(labels), rng);

  std::vector<classify::LabeledText> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto words = recipe_words(recipe, labels[i], rng);
    std::string drug = pick(recipe.drugs, rng);
    if (uniform01(rng) < 0.2) drug = capitalized(drug);
    words.push_back(std::move(drug));
    shuffle(std::span<std::string>(words), rng);
    out.push_back({std::string(id_prefix) + std::to_string(i), join(words), labels[i]});
  }
  return out;
}

void write_labeled_jsonl(const std::filesystem::path& path,
                         const std::vector<classify::LabeledText>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : rows) {
    out << json{{"post_id", r.id}, {"text", r.text}, {"label", to_string(r.label)}}.dump() << '\n';
  }
}

json GroundTruth::to_json() const {
  json regions_j = json::object();
  for (const auto& [k, v] : regions) regions_j[k] = {{"nm_posts", v.nm_posts}, {"total", v.total}};
  return {{"seed", seed},
          {"variants", variants},
          {"near_misses", near_misses},
          {"corpus_lines", corpus_lines},
          {"malformed_lines", malformed_lines},
          {"duplicates", duplicates},
          {"unmatched", unmatched},
          {"seed_posts", seed_posts},
          {"variant_posts", variant_posts},
          {"expected_gain", expected_gain},
          {"regions", std::move(regions_j)},
          {"regionless", regionless},
          {"gold", gold},
          {"emotion_counts", emotion_counts},
          {"metric_r", metric_r},
          {"bots_planted", bots_planted},
          {"bots_excluded", bots_excluded}};
}

GroundTruth GroundTruth::from_json(const json& j) {
  GroundTruth g;
  g.seed = j.at("seed").get<std::uint64_t>();
  g.variants = j.at("variants").get<std::map<std::string, std::vector<std::string>>>();
  g.near_misses = j.at("near_misses").get<std::vector<std::string>>();
  g.corpus_lines = j.at("corpus_lines").get<std::size_t>();
  g.malformed_lines = j.at("malformed_lines").get<std::size_t>();
  g.duplicates = j.at("duplicates").get<std::size_t>();
  g.unmatched = j.at("unmatched").get<std::size_t>();
  g.seed_posts = j.at("seed_posts").get<std::size_t>();
  g.variant_posts = j.at("variant_posts").get<std::size_t>();
  g.expected_gain = j.at("expected_gain").get<double>();
  for (const auto& [k, v] : j.at("regions").items()) {
    g.regions[k] = {v.at("nm_posts").get<std::size_t>(), v.at("total").get<std::size_t>()};
  }
  g.regionless = j.at("regionless").get<std::size_t>();
  g.gold = j.at("gold").get<std::map<std::string, std::string>>();
  g.emotion_counts = j.at("emotion_counts").get<std::map<std::string, std::uint64_t>>();
  g.metric_r = j.at("metric_r").get<double>();
  g.bots_planted = j.at("bots_planted").get<std::size_t>();
  g.bots_excluded = j.at("bots_excluded").get<std::size_t>();
  return g;
}

namespace {

constexpr std::size_t kDim = 32;
using Vec = std::array<double, kDim>;

double gaussian(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < kDim; ++i) s += a[i] * b[i];
  return s;
}

void normalize_vec(Vec& v) {
  const double n = std::sqrt(dot(v, v));
  for (double& x : v) x /= n;
}

Vec random_unit(Rng& rng) {
  Vec v;
  for (double& x : v) x = gaussian(rng);
  normalize_vec(v);
  return v;
}

// Unit vector at cosine `c` to `parent`, orthogonal in its remainder to every
// vector in `avoid` (so its cosine to them is c * cos(parent, them)).
Vec at_cosine(const Vec& parent, double c, std::span<const Vec> avoid, Rng& rng) {
  Vec w = random_unit(rng);
  std::vector<Vec> basis;
  for (const Vec& a : avoid) basis.push_back(a);
  basis.push_back(parent);
  // Gram-Schmidt the constraint set, then project it out of w.
  for (std::size_t i = 0; i < basis.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double d = dot(basis[i], basis[j]);
      for (std::size_t k = 0; k < kDim; ++k) basis[i][k] -= d * basis[j][k];
    }
    normalize_vec(basis[i]);
    const double d = dot(w, basis[i]);
    for (std::size_t k = 0; k < kDim; ++k) w[k] -= d * basis[i][k];
  }
  normalize_vec(w);
  const double s = std::sqrt(1.0 - c * c);
  Vec v;
  for (std::size_t k = 0; k < kDim; ++k) v[k] = c * parent[k] + s * w[k];
  return v;
}

struct PlantSpec {
  std::string token;
  std::string parent;
  double cosine;
};

// Variants per seed: (token, parent, cosine to parent). Parents precede
// children; zanaxx is reachable only through zanax.
const std::vector<std::pair<std::string, std::vector<PlantSpec>>>& planted_variants() {
  static const std::vector<std::pair<std::string, std::vector<PlantSpec>>> kPlants = {
      {"xanax",
       {{"xanaxx", "xanax", 0.92},
        {"xanex", "xanax", 0.88},
        {"xannax", "xanax", 0.85},
        {"zanax", "xanax", 0.75},
        {"zanaxx", "zanax", 0.90}}},
      {"oxycodone",
       {{"oxycodon", "oxycodone", 0.90}, {"oxycodne", "oxycodone", 0.87}, {"oxycodn", "oxycodon", 0.85}}},
      {"adderall",
       {{"aderall", "adderall", 0.90}, {"adderal", "adderall", 0.89}, {"adderol", "adderall", 0.84}}},
      {"percocet",
       {{"percocets", "percocet", 0.90}, {"perkocet", "percocet", 0.86}, {"percoset", "percocet", 0.85}}},
      {"valium", {{"vallium", "valium", 0.88}, {"valuim", "valium", 0.83}}},
  };
  return kPlants;
}

// Semantically close but lexically distant neighbours.
const std::vector<PlantSpec>& near_miss_specs() {
  static const std::vector<PlantSpec> kNear = {{"alprazolam", "xanax", 0.80},
                                               {"oxycontin", "oxycodone", 0.85},
                                               {"ritalin", "adderall", 0.78},
                                               {"vicodin", "percocet", 0.80},
                                               {"diazepam", "valium", 0.82}};
  return kNear;
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& emotion_words() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> kWords = {
      {"furious", {"anger"}},        {"angry", {"anger"}},
      {"rage", {"anger"}},           {"waiting", {"anticipation"}},
      {"eager", {"anticipation"}},   {"expecting", {"anticipation"}},
      {"gross", {"disgust"}},        {"disgusting", {"disgust"}},
      {"nasty", {"disgust"}},        {"scared", {"fear"}},
      {"afraid", {"fear"}},          {"terrified", {"fear"}},
      {"happy", {"joy"}},            {"glad", {"joy"}},
      {"delighted", {"joy"}},        {"sad", {"sadness"}},
      {"lonely", {"sadness"}},       {"miserable", {"sadness"}},
      {"shocked", {"surprise", "fear"}}, {"suddenly", {"surprise"}},
      {"unexpected", {"surprise"}},  {"trusted", {"trust"}},
      {"reliable", {"trust"}},       {"faithful", {"trust"}},
  };
  return kWords;
}

constexpr std::string_view kGuideline =
    R"(# Annotation guideline

Label each post with exactly one of four classes. Judge the post as written;
do not infer intent from the author's other posts.

1. **nonmedical_use** - the author describes their own use of the medication
   outside a prescriber's direction: taking it to get high, at doses or routes
   not prescribed (snorting, crushing), or without a prescription.
2. **consumption** - the author or someone they know takes the medication, with
   no sign of nonmedical use (refills, dosage questions, side effects).
3. **mention** - the medication is discussed without anyone taking it: news,
   studies, recalls, advertising, general opinion.
4. **unrelated** - the matched term does not refer to the medication (song
   titles, nicknames, jokes, unrelated homonyms).

When unsure between nonmedical_use and consumption, prefer consumption unless
the post states or clearly implies misuse. Skip posts you cannot read.
)";

struct Spec {
  LabelClass label;
  std::optional<std::string> region;
};

struct Original {
  json record;
  std::string author;
  bool twitter_plain = false;  // no handle or URL; safe to re-case
};

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

long double sample_r(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

GroundTruth write_demo(const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  GroundTruth truth;
  truth.seed = seed;
  const Recipe recipe = default_recipe();

  // Embeddings.
  {
    Rng rng(derive_seed(seed, "synth/embeddings"));
    std::vector<std::pair<std::string, Vec>> vocab;
    std::map<std::string, Vec> placed;
    for (const auto& [s, plants] : planted_variants()) {
      placed[s] = random_unit(rng);
      vocab.emplace_back(s, placed[s]);
      for (const auto& p : plants) {
        const Vec& parent = placed.at(p.parent);
        std::vector<Vec> avoid;
        if (p.parent != s) avoid.push_back(placed.at(s));
        placed[p.token] = at_cosine(parent, p.cosine, avoid, rng);
        vocab.emplace_back(p.token, placed[p.token]);
        truth.variants[s].push_back(p.token);
      }
      std::sort(truth.variants[s].begin(), truth.variants[s].end());
    }
    for (const auto& p : near_miss_specs()) {
      vocab.emplace_back(p.token, at_cosine(placed.at(p.parent), p.cosine, {}, rng));
      truth.near_misses.push_back(p.token);
    }
    // Lexically close to xanax but unrelated in meaning.
    vocab.emplace_back("xanadu", random_unit(rng));
    truth.near_misses.push_back("xanadu");
    std::set<std::string> others;
    for (const auto& list : recipe.keywords) others.insert(list.begin(), list.end());
    others.insert(recipe.shared.begin(), recipe.shared.end());
    others.insert(recipe.filler.begin(), recipe.filler.end());
    for (const auto& [w, cats] : emotion_words()) others.insert(w);
    for (const auto& w : others) vocab.emplace_back(w, random_unit(rng));

    std::vector<std::string> lines;
    lines.push_back(std::to_string(vocab.size()) + " " + std::to_string(kDim));
    for (const auto& [tok, v] : vocab) {
      std::string line = tok;
      for (double x : v) line += " " + fmt_double(std::round(x * 1e6) / 1e6);
      lines.push_back(std::move(line));
    }
    write_lines(dir / "embeddings.txt", lines);
  }
  {
    std::vector<std::string> lines = {"# seed medication names, one per line"};
    lines.insert(lines.end(), recipe.drugs.begin(), recipe.drugs.end());
    write_lines(dir / "seeds.txt", lines);
  }

  // Classifier train/test sets.
  write_labeled_jsonl(dir / "train.jsonl",
                      generate_labeled(recipe, 2000, derive_seed(seed, "synth/train"), "train-"));
  write_labeled_jsonl(dir / "test.jsonl",
                      generate_labeled(recipe, 500, derive_seed(seed, "synth/test"), "test-"));
  {
    std::ofstream out(dir / "recipe.json", std::ios::binary);
    out << recipe_to_json(recipe).dump(2) << '\n';
  }

  // Corpus.
  Rng rng(derive_seed(seed, "synth/corpus"));
  std::vector<std::string> region_codes;
  std::vector<double> planted_rates;
  std::vector<Spec> specs;
  for (std::size_t i = 1; i <= 11; ++i) {
    const std::string code = (i < 10 ? "R0" : "R") + std::to_string(i);
    const bool low = i == 11;
    const std::size_t total = low ? 12 : 35 + uniform_below(rng, 36);
    const double target = 0.05 + 0.40 * uniform01(rng);
    const auto nm = static_cast<std::size_t>(std::llround(target * static_cast<double>(total)));
    truth.regions[code] = {nm, total};
    if (!low) {
      region_codes.push_back(code);
      planted_rates.push_back(static_cast<double>(nm) / static_cast<double>(total));
    }
    for (std::size_t k = 0; k < total; ++k) {
      LabelClass c = LabelClass::NonmedicalUse;
      if (k >= nm) {
        const double u = uniform01(rng);
        c = u < 0.35 ? LabelClass::Consumption
                     : (u < 0.70 ? LabelClass::Mention : LabelClass::Unrelated);
      }
      specs.push_back({c, code});
    }
  }
  truth.regionless = 30;
  for (std::size_t k = 0; k < truth.regionless; ++k) {
    specs.push_back({kAllClasses[uniform_below(rng, kNumClasses)], std::nullopt});
  }
  shuffle(std::span<Spec>(specs), rng);

  const UtcSeconds window_start = days_from_civil(2024, 1, 1) * kSecondsPerDay;
  const UtcSeconds window_len = 90 * kSecondsPerDay;
  const UtcSeconds archive_start = days_from_civil(2023, 10, 1) * kSecondsPerDay;

  std::vector<std::string> nm_authors, general_authors;
  for (std::size_t i = 0; i < 60; ++i) nm_authors.push_back("acct_" + hex_id(rng, 12));
  for (std::size_t i = 0; i < 150; ++i) general_authors.push_back("acct_" + hex_id(rng, 12));
  std::vector<std::string> bots;
  for (std::size_t i = 0; i < 4; ++i) bots.push_back("acct_" + hex_id(rng, 12));
  truth.bots_planted = bots.size();
  truth.bots_excluded = 3;

  // Bot timelines; post 0 of each is the bot's matched corpus post.
  std::vector<std::vector<UtcSeconds>> bot_times(bots.size());
  {
    const UtcSeconds b1 = days_from_civil(2024, 2, 10) * kSecondsPerDay;
    for (std::size_t i = 0; i < 150; ++i) bot_times[0].push_back(b1 + 300 * static_cast<UtcSeconds>(i));
    const UtcSeconds b2 = days_from_civil(2024, 1, 15) * kSecondsPerDay;
    for (std::size_t i = 0; i < 60; ++i) {
      bot_times[1].push_back(b2 + static_cast<UtcSeconds>(uniform_below(rng, 30 * kSecondsPerDay)));
    }
    const UtcSeconds b3 = days_from_civil(2024, 1, 5) * kSecondsPerDay + 3600 * 9;
    for (std::size_t i = 0; i < 40; ++i) bot_times[2].push_back(b3 + kSecondsPerDay * static_cast<UtcSeconds>(i));
    const UtcSeconds b4 = days_from_civil(2024, 3, 1) * kSecondsPerDay;
    for (std::size_t i = 0; i < 80; ++i) {
      bot_times[3].push_back(b4 + static_cast<UtcSeconds>(uniform_below(rng, kSecondsPerDay)));
    }
    for (auto& t : bot_times) std::sort(t.begin(), t.end());
  }

  std::vector<std::size_t> nm_specs;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].label == LabelClass::NonmedicalUse) nm_specs.push_back(i);
  }
  std::map<std::size_t, std::size_t> bot_of_spec;
  for (std::size_t b = 0; b < bots.size(); ++b) bot_of_spec[nm_specs[b * 7 % nm_specs.size()]] = b;

  std::vector<std::string> all_variants;
  for (const auto& [s, v] : truth.variants) all_variants.insert(all_variants.end(), v.begin(), v.end());
  std::map<std::string, std::string> seed_of;
  for (const auto& [s, v] : truth.variants) {
    for (const auto& t : v) seed_of[t] = s;
  }

  std::unordered_set<std::string> text_keys;
  std::vector<Original> originals;
  std::map<std::string, std::vector<json>> archive_by_author;
  std::size_t next_id = 1;
  const auto post_id = [&](bool reddit) {
    return (reddit ? "r" : "t") + std::to_string(1000000 + next_id++);
  };
  const auto add_emotions = [&](std::vector<std::string>& words) {
    const std::size_t k = uniform_below(rng, 3);
    for (std::size_t i = 0; i < k; ++i) words.push_back(pick(emotion_words(), rng).first);
  };
  for (auto e : signals::kDefaultEmotions) truth.emotion_counts[std::string(e)] = 0;

  for (std::size_t i = 0; i < specs.size(); ++i) {
    const Spec& spec = specs[i];
    const auto bot = bot_of_spec.find(i);
    std::string author;
    UtcSeconds created = 0;
    if (bot != bot_of_spec.end()) {
      author = bots[bot->second];
      created = bot_times[bot->second].front();
    } else {
      author = spec.label == LabelClass::NonmedicalUse ? pick(nm_authors, rng) : pick(general_authors, rng);
      created = window_start + static_cast<UtcSeconds>(uniform_below(rng, window_len));
    }
    const bool use_variant = uniform01(rng) < 0.4;
    std::string drug = use_variant ? pick(all_variants, rng) : pick(recipe.drugs, rng);
    if (use_variant) {
      ++truth.variant_posts;
    } else {
      ++truth.seed_posts;
    }
    std::vector<std::string> words;
    std::string key;
    do {
      words = recipe_words(recipe, spec.label, rng);
      words.push_back(uniform01(rng) < 0.2 ? capitalized(drug) : drug);
      add_emotions(words);
      shuffle(std::span<std::string>(words), rng);
      std::string lower;
      for (const auto& w : words) lower += corpus::normalize(w) + " ";
      key = author + '\x1f' + lower;
    } while (!text_keys.insert(key).second);
    // Count emotions only once the text is final.
    for (const auto& w : words) {
      for (const auto& [ew, cats] : emotion_words()) {
        if (ew == w) {
          for (const auto& c : cats) ++truth.emotion_counts[c];
        }
      }
    }
    const bool reddit = uniform01(rng) < 0.3;
    const bool handle = !reddit && uniform01(rng) < 0.25;
    const bool url = uniform01(rng) < 0.15;
    std::string text = join(words);
    if (handle) text = "@friend" + std::to_string(uniform_below(rng, 50)) + " " + text;
    if (url) text += " https://example.org/p/" + std::to_string(uniform_below(rng, 100000));
    json rec = {{"post_id", post_id(reddit)},
                {"author_id", author},
                {"created_at", format_iso8601(created)},
                {"source", reddit ? "reddit-like" : "twitter-like"}};
    if (reddit) {
      const std::size_t cut = std::min<std::size_t>(3, words.size() - 1);
      std::vector<std::string> title(words.begin(), words.begin() + static_cast<long>(cut));
      std::vector<std::string> body(words.begin() + static_cast<long>(cut), words.end());
      rec["title"] = join(title);
      rec["text"] = join(body) + (url ? " https://example.org/p/" + std::to_string(next_id) : "");
    } else {
      rec["text"] = text;
    }
    if (spec.region) rec["region"] = *spec.region;
    truth.gold[rec["post_id"].get<std::string>()] = std::string(to_string(spec.label));
    originals.push_back({rec, author, !reddit && !handle && !url});
    if (bot == bot_of_spec.end() && spec.label == LabelClass::NonmedicalUse) {
      archive_by_author[author].push_back(rec);
    }
  }
  truth.expected_gain = 100.0 * static_cast<double>(truth.variant_posts) /
                        static_cast<double>(truth.seed_posts);

  // Unmatched posts, some carrying near-miss terms.
  std::vector<json> unmatched;
  for (std::size_t i = 0; i < 150; ++i) {
    std::vector<std::string> words = recipe_words(recipe, kAllClasses[uniform_below(rng, kNumClasses)], rng);
    if (i % 3 == 0) words.push_back(truth.near_misses[uniform_below(rng, truth.near_misses.size())]);
    add_emotions(words);
    shuffle(std::span<std::string>(words), rng);
    json rec = {{"post_id", post_id(false)},
                {"author_id", pick(general_authors, rng)},
                {"created_at", format_iso8601(window_start + static_cast<UtcSeconds>(uniform_below(rng, window_len)))},
                {"source", "twitter-like"},
                {"text", join(words)}};
    if (uniform01(rng) < 0.8) rec["region"] = region_codes[uniform_below(rng, region_codes.size())];
    unmatched.push_back(std::move(rec));
  }
  truth.unmatched = unmatched.size();

  // Interleave originals and unmatched posts in time order, then append the
  // records the deduplicator must drop.
  std::vector<json> records;
  for (const auto& o : originals) records.push_back(o.record);
  records.insert(records.end(), unmatched.begin(), unmatched.end());
  std::stable_sort(records.begin(), records.end(), [](const json& a, const json& b) {
    return a["created_at"].get<std::string>() < b["created_at"].get<std::string>();
  });
  std::vector<std::string> lines;
  for (const auto& r : records) lines.push_back(r.dump());
  lines.insert(lines.begin() + static_cast<long>(lines.size() / 3), "{\"post_id\": \"broken\", \"text\": ");
  lines.insert(lines.begin() + static_cast<long>(lines.size() / 2), "{\"post_id\": \"t-missing-author\", \"created_at\": \"2024-01-02T00:00:00Z\", \"source\": \"twitter-like\", \"text\": \"xanax\"}");
  lines.insert(lines.begin() + static_cast<long>(2 * lines.size() / 3), "not json at all");
  truth.malformed_lines = 3;

  for (std::size_t i = 0; i < 20; ++i) lines.push_back(originals[(i * 13) % originals.size()].record.dump());
  for (std::size_t i = 0; i < 15; ++i) {
    json rec = originals[(i * 17 + 5) % originals.size()].record;
    rec["post_id"] = post_id(false);
    rec["author_id"] = pick(general_authors, rng);
    rec["is_repost"] = true;
    lines.push_back(rec.dump());
  }
  std::size_t recased = 0;
  for (std::size_t i = 0; recased < 10 && i < originals.size(); ++i) {
    const Original& o = originals[(i * 29 + 3) % originals.size()];
    if (!o.twitter_plain) continue;
    json rec = o.record;
    rec["post_id"] = post_id(false);
    std::string t = rec["text"].get<std::string>();
    std::string shouted;
    for (char ch : t) {
      shouted.push_back(ch >= 'a' && ch <= 'z' ? static_cast<char>(ch - 'a' + 'A') : ch);
      if (ch == ' ') shouted.push_back(' ');
    }
    rec["text"] = "  " + shouted + " ";
    lines.push_back(rec.dump());
    ++recased;
  }
  truth.duplicates = 20 + 15 + recased;
  truth.corpus_lines = lines.size();
  write_lines(dir / "corpus.jsonl", lines);

  // Archive timelines: every cohort-candidate's history up to collection.
  {
    std::vector<json> archive;
    for (const auto& a : nm_authors) {
      auto& own = archive_by_author[a];
      const std::size_t extra = 12 + uniform_below(rng, 19);
      for (std::size_t k = 0; k < extra; ++k) {
        std::vector<std::string> words = recipe_words(recipe, LabelClass::Unrelated, rng);
        words.push_back(hex_id(rng, 6));
        shuffle(std::span<std::string>(words), rng);
        std::string text = join(words);
        if (uniform01(rng) < 0.1) text += " https://example.org/a/" + std::to_string(k);
        own.push_back({{"post_id", post_id(false)},
                       {"author_id", a},
                       {"created_at", format_iso8601(archive_start + static_cast<UtcSeconds>(uniform_below(rng, 182 * kSecondsPerDay)))},
                       {"source", "twitter-like"},
                       {"text", text}});
      }
    }
    for (std::size_t b = 0; b < bots.size(); ++b) {
      // The matched corpus post is the bot's first timeline entry.
      for (const auto& o : originals) {
        if (o.author == bots[b]) archive_by_author[bots[b]].push_back(o.record);
      }
      const std::vector<std::string> templates = {"huge discount pills online", "cheap meds no prescription",
                                                  "best deals click now", "fast shipping order today",
                                                  "limited offer buy now"};
      for (std::size_t k = 1; k < bot_times[b].size(); ++k) {
        std::string text;
        switch (b) {
          case 0: text = templates[k % templates.size()] + " https://spam.example/x"; break;
          case 1: text = templates[k % 3] + " https://spam.example/y"; break;
          case 2: text = "daily update " + hex_id(rng, 8) + " https://spam.example/z"; break;
          default: text = "thoughts " + hex_id(rng, 8); break;
        }
        archive_by_author[bots[b]].push_back({{"post_id", post_id(false)},
                                              {"author_id", bots[b]},
                                              {"created_at", format_iso8601(bot_times[b][k])},
                                              {"source", "twitter-like"},
                                              {"text", text}});
      }
    }
    for (std::size_t i = 0; i < 20; ++i) {
      const std::string& a = general_authors[i];
      for (std::size_t k = 0; k < 5; ++k) {
        archive_by_author[a].push_back({{"post_id", post_id(false)},
                                        {"author_id", a},
                                        {"created_at", format_iso8601(archive_start + static_cast<UtcSeconds>(uniform_below(rng, 182 * kSecondsPerDay)))},
                                        {"source", "twitter-like"},
                                        {"text", "just " + hex_id(rng, 8)}});
      }
    }
    for (auto& [a, posts] : archive_by_author) archive.insert(archive.end(), posts.begin(), posts.end());
    std::stable_sort(archive.begin(), archive.end(), [](const json& x, const json& y) {
      return std::tie(x["created_at"].get_ref<const std::string&>(), x["post_id"].get_ref<const std::string&>()) <
             std::tie(y["created_at"].get_ref<const std::string&>(), y["post_id"].get_ref<const std::string&>());
    });
    std::vector<std::string> archive_lines;
    for (const auto& r : archive) archive_lines.push_back(r.dump());
    write_lines(dir / "archive.jsonl", archive_lines);
  }

  // Reference metric with a planted linear relation plus noise.
  {
    std::vector<double> metric;
    std::vector<std::string> csv_lines = {"region,overdose_deaths_per_100k"};
    for (std::size_t i = 0; i < region_codes.size(); ++i) {
      double noise = 0.0;
      for (int k = 0; k < 12; ++k) noise += uniform01(rng);
      noise = (noise - 6.0) * 1.5;
      const double v = std::round((4.0 + 30.0 * planted_rates[i] + noise) * 1000.0) / 1000.0;
      metric.push_back(v);
      csv_lines.push_back(region_codes[i] + "," + fmt_double(v));
    }
    csv_lines.push_back("R11,7.5");
    csv_lines.push_back("R12,9.25");
    truth.metric_r = static_cast<double>(sample_r(planted_rates, metric));
    write_lines(dir / "regions.csv", csv_lines);
  }

  {
    std::vector<std::string> lines = {"# token\tcategories"};
    for (const auto& [w, cats] : emotion_words()) {
      std::string line = w + "\t";
      for (std::size_t i = 0; i < cats.size(); ++i) line += (i ? "," : "") + cats[i];
      lines.push_back(std::move(line));
    }
    write_lines(dir / "emotions.tsv", lines);
  }
  {
    std::ofstream out(dir / "guideline.md", std::ios::binary);
    out << kGuideline;
  }
  {
    std::ofstream out(dir / "ground_truth.json", std::ios::binary);
    out << truth.to_json().dump(1) << '\n';
  }
  return truth;
}

}  // namespace toxipipe::synth
