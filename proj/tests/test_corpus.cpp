#include <gtest/gtest.h>

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fstream>

#include "json.hpp"
#include "support/gen.hpp"
#include "support/tempdir.hpp"
#include "toxipipe/corpus.hpp"
#include "toxipipe/error.hpp"

using namespace toxipipe;
using namespace toxipipe::corpus;
using nlohmann::json;

namespace {

json post(const std::string& id, const std::string& author, const std::string& text) {
  return {{"post_id", id}, {"author_id", author}, {"created_at", "2024-01-01T00:00:00Z"},
          {"text", text}, {"source", "twitter-like"}};
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

lexvar::Lexicon xanax_lexicon() {
  lexvar::Lexicon lex;
  lexvar::VariantSet v;
  v.seed = "xanax";
  v.variants.push_back({"xanaxx", 0.95, 0.83, 1});
  lex.entries.push_back(v);
  lexvar::VariantSet phrase;
  phrase.seed = "opioid withdrawal";
  phrase.variants.push_back({"opiod withdrawal", 0.9, 0.8, 1});
  lex.entries.push_back(phrase);
  return lex;
}

}  // namespace

TEST(ReadJsonl, WellFormedAndSkips) {
  TempDir dir;
  write_lines(dir / "a.jsonl", {post("1", "a", "x").dump(), post("2", "a", "y").dump(), post("3", "b", "z").dump()});
  ReadStats s;
  EXPECT_EQ(read_jsonl(dir / "a.jsonl", &s).size(), 3u);
  EXPECT_EQ(s.skipped, 0u);

  write_lines(dir / "b.jsonl", {post("1", "a", "x").dump(), "{\"post_id\": \"2\", \"auth", post("3", "b", "z").dump()});
  EXPECT_EQ(read_jsonl(dir / "b.jsonl", &s).size(), 2u);
  EXPECT_EQ(s.skipped, 1u);
}

TEST(ReadJsonl, MostlyMalformedIsFatal) {
  TempDir dir;
  std::vector<std::string> lines;
  for (int i = 0; i < 4; ++i) lines.push_back(post(std::to_string(i), "a", "ok").dump());
  for (int i = 0; i < 6; ++i) lines.push_back("not json " + std::to_string(i));
  write_lines(dir / "c.jsonl", lines);
  EXPECT_THROW(read_jsonl(dir / "c.jsonl"), FormatError);
  EXPECT_THROW(read_jsonl(dir / "missing.jsonl"), IoError);
}

TEST(ReadJsonl, FieldRules) {
  EXPECT_THROW(post_from_json(json{{"post_id", "1"}}), FormatError);
  auto bad = post("1", "a", "t");
  bad["source"] = "myspace";
  EXPECT_THROW(post_from_json(bad), FormatError);
  auto reddit = post("r1", "a", "body text");
  reddit["source"] = "reddit-like";
  reddit["title"] = "Title";
  EXPECT_EQ(post_from_json(reddit).text, "Title\nbody text");
  auto repost = post("2", "a", "t");
  repost["is_repost"] = true;
  repost["region"] = "R01";
  const auto p = post_from_json(repost);
  EXPECT_TRUE(p.is_repost);
  EXPECT_EQ(p.region, "R01");
  EXPECT_EQ(post_from_json(post_to_json(p)).post_id, "2");
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize("Check https://t.co/abc NOW"), "check <url> now");
  EXPECT_EQ(normalize("@doc Adderall\xC2\xAE helps"), "<user> adderall helps");
  EXPECT_EQ(normalize("plain text"), "plain text");
  EXPECT_EQ(normalize("  many\t\n  spaces  "), "many spaces");
  EXPECT_EQ(normalize("Brand\xE2\x84\xA2 name"), "brand name");
}

TEST(Normalize, Idempotent) {
  gen::Source g(31);
  const char* pieces[] = {"Xanax", "@user_1", "https://x.org/a", " ", "\t", "\xC2\xAE", "caf\xC3\x89", "!", "www.site.com"};
  for (int i = 0; i < 500; ++i) {
    std::string s;
    for (std::size_t k = 0, n = g.below(10); k < n; ++k) s += pieces[g.below(9)];
    EXPECT_EQ(normalize(normalize(s)), normalize(s)) << s;
  }
}

TEST(Match, TokenBoundariesAndPhrases) {
  const LexiconMatcher m(xanax_lexicon());
  const auto hit = m.find(normalize("took xanaxx today"));
  ASSERT_EQ(hit.size(), 1u);
  EXPECT_EQ(hit[0].seed, "xanax");
  EXPECT_EQ(hit[0].surface, "xanaxx");
  EXPECT_TRUE(hit[0].variant);
  EXPECT_TRUE(m.find(normalize("xanaxxy")).empty());
  const auto phrase = m.find(normalize("bad Opiod   withdrawal again"));
  ASSERT_EQ(phrase.size(), 1u);
  EXPECT_EQ(phrase[0].seed, "opioid withdrawal");
  EXPECT_EQ(phrase[0].surface, "opiod withdrawal");
  EXPECT_THROW(LexiconMatcher(lexvar::Lexicon{}), ContractError);
}

TEST(Match, SurfacesReverify) {
  const LexiconMatcher m(xanax_lexicon());
  gen::Source g(32);
  const char* words[] = {"xanax", "xanaxx", "opioid", "withdrawal", "opiod", "the", "xanaxxy", ",", "!"};
  for (int i = 0; i < 500; ++i) {
    std::string s;
    for (std::size_t k = 0, n = 1 + g.below(12); k < n; ++k) s += std::string(words[g.below(9)]) + (g.coin() ? " " : "");
    const std::string norm = normalize(s);
    for (const auto& t : m.find(norm)) EXPECT_TRUE(verify_match(norm, t)) << norm;
  }
}

TEST(Dedup, Rules) {
  Deduplicator d;
  PostRecord a{"1", "alice", 0, "same", Source::TwitterLike, std::nullopt, false};
  PostRecord b = a;
  b.post_id = "2";
  EXPECT_TRUE(d.admit(a, "same"));
  EXPECT_FALSE(d.admit(b, "same"));
  PostRecord c = b;
  c.post_id = "3";
  c.author_id = "bob";
  EXPECT_TRUE(d.admit(c, "same"));
  PostRecord r = a;
  r.post_id = "4";
  r.is_repost = true;
  EXPECT_FALSE(d.admit(r, "other"));
  Deduplicator keep(false);
  EXPECT_TRUE(keep.admit(r, "other"));
}

TEST(Ingest, PlantedVariantCountIsExact) {
  TempDir dir;
  gen::Source g(33);
  std::vector<std::string> lines;
  std::size_t planted = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string text = "post number " + std::to_string(i);
    if (i % 25 < 3) {
      text += " took xanaxx";
      ++planted;
    } else if (g.coin(0.3)) {
      text += " took xanax";
    } else if (g.coin(0.1)) {
      text += " xanaxxy lookalike";
    }
    lines.push_back(post("p" + std::to_string(i), "u" + std::to_string(g.below(50)), text).dump());
  }
  write_lines(dir / "c.jsonl", lines);
  ASSERT_EQ(planted, 120u);
  std::vector<MatchedPost> out;
  const auto stats = ingest(dir / "c.jsonl", xanax_lexicon(), {}, [&](const MatchedPost& m) { out.push_back(m); });
  EXPECT_EQ(stats.variant_matches, 120u);
  EXPECT_EQ(stats.matched, out.size());
  EXPECT_EQ(stats.matched - stats.seed_only_matched, 120u);
  for (const auto& m : out) {
    for (const auto& t : m.matched_terms) EXPECT_TRUE(verify_match(m.normalized_text, t));
  }
}

TEST(Ingest, MatchedJsonlRoundTrip) {
  TempDir dir;
  write_lines(dir / "c.jsonl", {post("1", "a", "Took XANAXX").dump(), post("2", "b", "nothing").dump()});
  {
    MatchedWriter w(dir / "m.jsonl");
    ingest(dir / "c.jsonl", xanax_lexicon(), {}, [&](const MatchedPost& m) { w.write(m); });
  }
  const auto back = read_matched_jsonl(dir / "m.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].normalized_text, "took xanaxx");
  ASSERT_EQ(back[0].matched_terms.size(), 1u);
  EXPECT_EQ(back[0].matched_terms[0].offset, 5u);
}

TEST(Ingest, MemoryStaysBoundedOnLargeInput) {
  // ~64 MB of matched reposts: the dedup state stays empty, so peak memory
  // of a child doing the ingest must stay far below the file size.
  TempDir dir;
  const std::string filler(900, 'z');
  {
    std::ofstream out(dir / "big.jsonl");
    for (int i = 0; i < 70000; ++i) {
      json p = post("p" + std::to_string(i), "author", "xanax " + filler + " " + std::to_string(i));
      p["is_repost"] = i % 1000 != 0;
      out << p.dump() << '\n';
    }
  }
  ASSERT_GT(std::filesystem::file_size(dir / "big.jsonl"), 60'000'000u);
  const pid_t pid = fork();
  if (pid == 0) {
    std::size_t n = 0;
    const auto stats = ingest(dir / "big.jsonl", xanax_lexicon(), {}, [&](const MatchedPost&) { ++n; });
    _exit(stats.matched == 70 && n == 70 ? 0 : 1);
  }
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  rusage usage{};
  getrusage(RUSAGE_CHILDREN, &usage);
  EXPECT_LT(usage.ru_maxrss, 40 * 1024) << "peak RSS in KiB";
}
