#include <gtest/gtest.h>

#include <sstream>

#include "support/cases.hpp"
#include "support/gen.hpp"
#include "support/oracles.hpp"
#include "toxipipe/error.hpp"
#include "toxipipe/lexvar.hpp"
#include "toxipipe/text.hpp"

using namespace toxipipe;
using namespace toxipipe::lexvar;

namespace {

const std::string kToy = std::string(TOXIPIPE_FIXTURES) + "/toy_embeddings.txt";

ExpansionConfig config_of(const oracle::ExpandParams& p) {
  ExpansionConfig c;
  c.theta_sem = p.theta_sem;
  c.theta_lex = p.theta_lex;
  c.max_depth = p.max_depth;
  c.max_neighbors = p.max_neighbors;
  return c;
}

std::set<std::string> tokens_of(const VariantSet& v) {
  std::set<std::string> out;
  for (const auto& x : v.variants) out.insert(x.token);
  return out;
}

}  // namespace

TEST(Cosine, Examples) {
  const std::vector<double> u{1, 2, 3};
  EXPECT_NEAR(cosine(u, u), 1.0, 1e-15);
  EXPECT_EQ(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
  EXPECT_NEAR(cosine(std::vector<double>{1, 0}, std::vector<double>{-1, 0}), -1.0, 1e-15);
  EXPECT_THROW(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}), DomainError);
  EXPECT_THROW(cosine(std::vector<double>{1}, std::vector<double>{1, 0}), ContractError);
}

TEST(Cosine, SymmetryAndScaleInvariance) {
  gen::Source g(11);
  for (int i = 0; i < 500; ++i) {
    const std::size_t d = 1 + g.below(16);
    auto u = g.reals(d, -1, 1), v = g.reals(d, -1, 1);
    u[0] += 0.01;  // keep the norm away from zero
    v[0] -= 0.01;
    EXPECT_NEAR(cosine(u, v), cosine(v, u), 1e-12);
    const double c = g.real(0.001, 1000);
    auto cu = u;
    for (auto& x : cu) x *= c;
    EXPECT_NEAR(cosine(cu, v), cosine(u, v), 1e-9);
  }
}

TEST(Levenshtein, Examples) {
  EXPECT_EQ(levenshtein("xanax", "xanax"), 0u);
  EXPECT_EQ(levenshtein("", "abc"), 3u);
  EXPECT_EQ(levenshtein("kitten", "sitting"),
            oracle::levenshtein(oracle::utf32("kitten"), oracle::utf32("sitting")));
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
  // Code points, not bytes.
  EXPECT_EQ(levenshtein("caf\xC3\xA9", "cafe"), 1u);
}

TEST(Levenshtein, MetricAxiomsAgainstOracle) {
  gen::Source g(12);
  for (int i = 0; i < 2000; ++i) {
    const auto a = g.word(7), b = g.word(7), c = g.word(7);
    const auto ab = levenshtein(a, b);
    ASSERT_EQ(ab, oracle::levenshtein(oracle::utf32(a), oracle::utf32(b))) << a << " / " << b;
    EXPECT_EQ(ab, levenshtein(b, a));
    EXPECT_EQ(ab == 0, a == b);
    EXPECT_LE(levenshtein(a, c), ab + levenshtein(b, c));
  }
}

TEST(LexicalSimilarity, Examples) {
  EXPECT_EQ(lexical_similarity("xanax", "xanax"), 1.0);
  EXPECT_NEAR(lexical_similarity("xanax", "xanaxx"), 1.0 - 1.0 / 6.0, 1e-15);
  EXPECT_EQ(lexical_similarity("ab", "cd"), 0.0);
  EXPECT_THROW(lexical_similarity("", ""), DomainError);
}

TEST(Embeddings, LoadsToyFixture) {
  const auto m = load_embeddings(kToy);
  EXPECT_EQ(m.size(), 12u);
  EXPECT_EQ(m.dimension(), 8u);
  ASSERT_TRUE(m.find("XANAX"));
  EXPECT_EQ(m.token(*m.find("XANAX")), "xanax");
  EXPECT_EQ(m.token(*m.find("Xanaxx")), "Xanaxx");
}

TEST(Embeddings, RejectsMalformed) {
  std::istringstream ragged("a 1 2\nb 1\n");
  EXPECT_THROW(load_embeddings(ragged), FormatError);
  std::istringstream bad("a 1 x\n");
  EXPECT_THROW(load_embeddings(bad), FormatError);
  std::istringstream empty("\n\n");
  EXPECT_THROW(load_embeddings(empty), FormatError);
}

TEST(ExpandTerm, SpecFixtureExample) {
  const auto m = load_embeddings(kToy);
  ExpansionConfig c;
  c.theta_sem = 0.75;
  c.theta_lex = 0.70;
  const auto v = expand_term("xanax", m, c);
  EXPECT_EQ(tokens_of(v), (std::set<std::string>{"xanaxx"}));
  ASSERT_EQ(v.variants.size(), 1u);
  EXPECT_NEAR(v.variants[0].cosine_to_parent, 0.95, 1e-6);
  EXPECT_NEAR(v.variants[0].lexical_similarity, 1.0 - 1.0 / 6.0, 1e-12);
  // zoloft passes the semantic gate but not the lexical one.
  EXPECT_LT(lexical_similarity("xanax", "zoloft"), 0.70);
}

TEST(ExpandTerm, DegenerateConfigs) {
  const auto m = load_embeddings(kToy);
  ExpansionConfig c;
  c.theta_sem = 1.01;
  EXPECT_TRUE(expand_term("xanax", m, c).variants.empty());
  c = {};
  c.max_depth = 0;
  EXPECT_TRUE(expand_term("xanax", m, c).variants.empty());
  const auto missing = expand_term("nosuchdrug", m, {});
  EXPECT_TRUE(missing.not_in_vocabulary);
  EXPECT_TRUE(missing.variants.empty());
}

TEST(ExpandTerm, MatchesBruteForceOracle) {
  const auto m = load_embeddings(kToy);
  const auto e = oracle::read_embeddings(kToy);
  for (const auto& tc : kLexvarCases) {
    const auto v = expand_term(tc.seed, m, config_of(tc.params));
    const auto expected = oracle::expand(e, tc.seed, tc.params);
    std::map<std::string, std::size_t> got;
    for (const auto& x : v.variants) got[x.token] = x.depth;
    EXPECT_EQ(got, expected) << tc.seed << " sem=" << tc.params.theta_sem << " lex=" << tc.params.theta_lex;
  }
}

TEST(ExpandTerm, VariantsReverifyTheirPredicates) {
  const auto m = load_embeddings(kToy);
  for (const auto& tc : kLexvarCases) {
    const auto c = config_of(tc.params);
    for (const auto& x : expand_term(tc.seed, m, c).variants) {
      EXPECT_GE(x.cosine_to_parent, c.theta_sem);
      EXPECT_NEAR(x.lexical_similarity, lexical_similarity(x.token, text::fold_case(tc.seed)), 1e-15);
      EXPECT_GE(x.lexical_similarity, c.theta_lex);
      EXPECT_NE(x.token, text::fold_case(tc.seed));
      EXPECT_GE(x.depth, 1u);
      EXPECT_LE(x.depth, c.max_depth);
    }
  }
}

TEST(ExpandTerm, MonotoneInThresholds) {
  const auto m = load_embeddings(kToy);
  gen::Source g(13);
  const char* seeds[] = {"xanax", "xanex", "zanax", "opioid", "percocet"};
  for (int i = 0; i < 200; ++i) {
    ExpansionConfig hi;
    hi.theta_sem = g.real(0.3, 1.0);
    hi.theta_lex = g.real(0.0, 1.0);
    hi.max_depth = g.below(4);
    hi.max_neighbors = 50;
    ExpansionConfig lo = hi;
    lo.theta_sem -= g.real(0.0, 0.3);
    lo.theta_lex = std::max(0.0, lo.theta_lex - g.real(0.0, 0.3));
    const char* seed = seeds[g.below(5)];
    const auto big = tokens_of(expand_term(seed, m, lo));
    for (const auto& t : tokens_of(expand_term(seed, m, hi))) EXPECT_TRUE(big.contains(t)) << seed << " " << t;
  }
}

TEST(ExpandTerm, Deterministic) {
  const auto m = load_embeddings(kToy);
  ExpansionConfig c;
  c.theta_sem = 0.5;
  c.theta_lex = 0.0;
  const auto a = expand_term("xanax", m, c), b = expand_term("xanax", m, c);
  ASSERT_EQ(a.variants.size(), b.variants.size());
  for (std::size_t i = 0; i < a.variants.size(); ++i) EXPECT_EQ(a.variants[i].token, b.variants[i].token);
}

TEST(ExpandTerm, NeighborTiesBreakLexicographically) {
  // "Xanaxx" and "xanaxx" tie exactly; with one neighbor slot "Xanaxx" wins
  // the tie and is reported case-folded.
  const auto m = load_embeddings(kToy);
  ExpansionConfig c;
  c.theta_sem = 0.9;
  c.theta_lex = 0.8;
  c.max_depth = 1;
  c.max_neighbors = 1;
  const auto v = expand_term("xanax", m, c);
  ASSERT_EQ(v.variants.size(), 1u);
  EXPECT_EQ(v.variants[0].token, "xanaxx");
}

TEST(ExpandMultiword, Examples) {
  const auto m = load_embeddings(kToy);
  ExpansionConfig c;
  c.theta_sem = 0.80;
  c.theta_lex = 0.70;
  const std::vector<std::string> phrase{"opioid", "withdrawal"};
  const auto v = expand_multiword(phrase, m, c);
  EXPECT_EQ(tokens_of(v), (std::set<std::string>{"opiod withdrawal"}));
  EXPECT_EQ(v.seed, "opioid withdrawal");

  const std::vector<std::string> none{"withdrawal", "percoset"};
  c.theta_sem = 0.99;
  EXPECT_TRUE(expand_multiword(none, m, c).variants.empty());

  c.theta_sem = 0.80;
  c.max_altered_tokens = 0;
  EXPECT_TRUE(expand_multiword(phrase, m, c).variants.empty());

  const std::vector<std::string> one{"opioid"};
  EXPECT_THROW(expand_multiword(one, m, c), ContractError);
}

TEST(ExpandMultiword, RecombinationsMatchBruteForce) {
  const auto m = load_embeddings(kToy);
  ExpansionConfig c;
  c.theta_sem = 0.70;
  c.theta_lex = 0.55;
  const std::vector<std::string> phrase{"xanax", "opioid", "percocet"};
  std::vector<std::vector<std::string>> options;
  for (const auto& w : phrase) {
    std::vector<std::string> o{w};
    for (const auto& x : expand_term(w, m, c).variants) o.push_back(x.token);
    options.push_back(o);
  }
  for (std::size_t cap = 1; cap <= 3; ++cap) {
    c.max_altered_tokens = cap;
    std::set<std::string> expected;
    for (std::size_t i = 0; i < options[0].size(); ++i) {
      for (std::size_t j = 0; j < options[1].size(); ++j) {
        for (std::size_t k = 0; k < options[2].size(); ++k) {
          const std::size_t altered = (i > 0) + (j > 0) + (k > 0);
          if (altered == 0 || altered > cap) continue;
          expected.insert(options[0][i] + " " + options[1][j] + " " + options[2][k]);
        }
      }
    }
    EXPECT_EQ(tokens_of(expand_multiword(phrase, m, c)), expected) << "cap " << cap;
  }
}

TEST(RetrievalGain, Examples) {
  EXPECT_DOUBLE_EQ(retrieval_gain(100, 135), 35.0);
  EXPECT_DOUBLE_EQ(retrieval_gain(100, 100), 0.0);
  EXPECT_DOUBLE_EQ(retrieval_gain(200, 270), 35.0);
  EXPECT_THROW(retrieval_gain(0, 5), DomainError);
}

TEST(Lexicon, CsvRoundTrip) {
  const auto m = load_embeddings(kToy);
  ExpansionConfig c;
  c.theta_sem = 0.70;
  c.theta_lex = 0.60;
  const std::vector<std::string> seeds{"xanax", "opioid withdrawal", "missing"};
  const auto lex = expand_lexicon(seeds, m, c);
  std::stringstream buf;
  write_lexicon_csv(buf, lex);
  const auto back = read_lexicon_csv(buf);
  ASSERT_EQ(back.entries.size(), lex.entries.size());
  for (std::size_t i = 0; i < lex.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].seed, lex.entries[i].seed);
    EXPECT_EQ(tokens_of(back.entries[i]), tokens_of(lex.entries[i]));
  }
  EXPECT_EQ(back.variant_count(), lex.variant_count());
}
