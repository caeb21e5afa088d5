#include <gtest/gtest.h>

#include <atomic>
#include <sstream>
#include <thread>

#include "support/gen.hpp"
#include "support/oracles.hpp"
#include "toxipipe/annotation.hpp"
#include "toxipipe/error.hpp"

using namespace toxipipe;
using namespace toxipipe::annotation;

namespace {

LabelClass cls(std::size_t i) { return kAllClasses[i % kNumClasses]; }

// Aligned sequences realizing a confusion matrix.
void from_confusion(const std::vector<std::vector<long long>>& m, std::vector<LabelClass>& a,
                    std::vector<LabelClass>& b) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      for (long long k = 0; k < m[i][j]; ++k) {
        a.push_back(cls(i));
        b.push_back(cls(j));
      }
    }
  }
}

corpus::MatchedPost task(const std::string& id, UtcSeconds t) {
  corpus::MatchedPost m;
  m.post.post_id = id;
  m.post.author_id = "author-" + id;
  m.post.created_at = t;
  m.post.text = "took xanax " + id;
  m.normalized_text = m.post.text;
  m.matched_terms.push_back({"xanax", "xanax", 5, false});
  return m;
}

std::vector<AnnotationRecord> records(const std::vector<std::tuple<std::string, std::string, LabelClass>>& rows) {
  std::vector<AnnotationRecord> out;
  for (const auto& [p, a, l] : rows) out.push_back({p, a, l, 0});
  return out;
}

}  // namespace

TEST(Kappa, Examples) {
  std::vector<LabelClass> a, b;
  from_confusion({{20, 5}, {10, 15}}, a, b);
  EXPECT_NEAR(cohens_kappa(a, b), 0.4, 1e-9);
  EXPECT_NEAR(cohens_kappa(a, b), oracle::kappa_from_confusion({{20, 5}, {10, 15}}), 1e-12);
  const std::vector<LabelClass> same{LabelClass::Mention, LabelClass::Unrelated, LabelClass::Mention};
  EXPECT_EQ(cohens_kappa(same, same), 1.0);
  const std::vector<LabelClass> constant(5, LabelClass::Mention);
  EXPECT_EQ(cohens_kappa(constant, constant), 1.0);
  EXPECT_THROW(cohens_kappa(same, constant), ContractError);
  EXPECT_THROW(cohens_kappa(std::vector<LabelClass>{LabelClass::Mention}, std::vector<LabelClass>{LabelClass::Mention}),
               ContractError);
}

TEST(Kappa, ShuffledNullIsNearZero) {
  gen::Source g(41);
  std::vector<LabelClass> a(10000);
  for (auto& x : a) x = cls(g.below(4));
  auto b = a;
  g.shuffle(b);
  EXPECT_LT(std::abs(cohens_kappa(a, b)), 0.1);
}

TEST(Kappa, MatchesOracleAndProperties) {
  gen::Source g(42);
  for (int it = 0; it < 500; ++it) {
    std::vector<std::vector<long long>> m(4, std::vector<long long>(4));
    for (auto& row : m) {
      for (auto& c : row) c = static_cast<long long>(g.below(g.coin(0.3) ? 2 : 20));
    }
    m[0][0] += 1;
    m[1][1] += 1;
    std::vector<LabelClass> a, b;
    from_confusion(m, a, b);
    const double k = cohens_kappa(a, b);
    EXPECT_NEAR(k, oracle::kappa_from_confusion(m), 1e-12);
    EXPECT_GE(k, -1.0);
    EXPECT_LE(k, 1.0);
    EXPECT_NEAR(k, cohens_kappa(b, a), 1e-12);
    // One bijection applied to both sequences.
    std::vector<std::size_t> perm{0, 1, 2, 3};
    g.shuffle(perm);
    auto pa = a, pb = b;
    for (auto& x : pa) x = cls(perm[index_of(x)]);
    for (auto& x : pb) x = cls(perm[index_of(x)]);
    EXPECT_NEAR(cohens_kappa(pa, pb), k, 1e-12);
  }
}

TEST(PairwiseKappa, Examples) {
  using L = LabelClass;
  EXPECT_EQ(pairwise_average_kappa(records({{"1", "a", L::Mention}, {"1", "b", L::Mention},
                                            {"2", "a", L::Unrelated}, {"2", "b", L::Unrelated}})),
            1.0);
  EXPECT_THROW(pairwise_average_kappa(records({{"1", "a", L::Mention}, {"2", "b", L::Mention}})), DomainError);

  // a/b agree perfectly; c realizes kappa 0.4 against both.
  std::vector<LabelClass> x, y;
  from_confusion({{20, 5}, {10, 15}}, x, y);
  std::vector<AnnotationRecord> rs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::string id = "p" + std::to_string(i);
    rs.push_back({id, "a", x[i], 0});
    rs.push_back({id, "b", x[i], 0});
    rs.push_back({id, "c", y[i], 0});
  }
  EXPECT_NEAR(pairwise_average_kappa(rs), 0.6, 1e-12);
  const auto report = agreement(rs);
  EXPECT_EQ(report.annotators, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(report.pairs.size(), 3u);
  EXPECT_EQ(report.eligible_pairs, 3u);
}

TEST(PairwiseKappa, IneligiblePairsReported) {
  using L = LabelClass;
  const auto report = agreement(records({{"1", "a", L::Mention}, {"1", "b", L::Mention},
                                         {"2", "a", L::Unrelated}, {"2", "b", L::Mention},
                                         {"1", "c", L::Mention}}));
  ASSERT_EQ(report.pairs.size(), 3u);
  EXPECT_EQ(report.eligible_pairs, 1u);
  for (const auto& p : report.pairs) {
    if (p.annotator_b == "c") {
      EXPECT_FALSE(p.kappa);
      EXPECT_EQ(p.shared_posts, 1u);
    }
  }
}

TEST(Adjudicate, Examples) {
  using L = LabelClass;
  auto g = adjudicate(records({{"1", "a", L::NonmedicalUse}, {"1", "b", L::NonmedicalUse}, {"1", "c", L::Mention}}));
  EXPECT_EQ(g.status, GoldStatus::Resolved);
  EXPECT_EQ(g.label, L::NonmedicalUse);
  g = adjudicate(records({{"1", "a", L::Mention}, {"1", "b", L::Unrelated}}));
  EXPECT_EQ(g.status, GoldStatus::NeedsAdjudication);
  EXPECT_FALSE(g.label);
  EXPECT_EQ(adjudicate(records({{"1", "a", L::Mention}}), 1).status, GoldStatus::Resolved);
  EXPECT_EQ(adjudicate(records({{"1", "a", L::Mention}}), 2).status, GoldStatus::NeedsAdjudication);
}

TEST(Adjudicate, OrderIndependentAndMajority) {
  gen::Source g(43);
  for (int it = 0; it < 500; ++it) {
    std::vector<AnnotationRecord> rs;
    const std::size_t k = 1 + g.below(6);
    for (std::size_t i = 0; i < k; ++i) rs.push_back({"p", "a" + std::to_string(i), cls(g.below(3)), 0});
    const auto base = adjudicate(rs, 1);
    for (int s = 0; s < 5; ++s) {
      g.shuffle(rs);
      const auto again = adjudicate(rs, 1);
      EXPECT_EQ(again.status, base.status);
      EXPECT_EQ(again.label, base.label);
    }
    if (base.status == GoldStatus::Resolved) {
      const auto votes = std::count_if(rs.begin(), rs.end(), [&](const auto& r) { return r.label == base.label; });
      EXPECT_GE(static_cast<std::size_t>(votes), (k + 2) / 2);
    }
  }
}

TEST(Store, ServesOldestFirstAndStopsWhenDone) {
  UtcSeconds clock = 1000;
  AnnotationStore store({}, [&] { return clock; });
  std::vector<corpus::MatchedPost> tasks;
  for (int i = 5; i >= 1; --i) tasks.push_back(task("p" + std::to_string(i), i * 10));
  store.load_tasks(tasks);
  auto t = store.next_task("ann");
  ASSERT_TRUE(t);
  EXPECT_EQ(t->post.post_id, "p1");
  for (int i = 1; i <= 5; ++i) store.submit("p" + std::to_string(i), "ann", LabelClass::Mention);
  EXPECT_FALSE(store.next_task("ann"));
  EXPECT_EQ(store.remaining_for("ann"), 0u);
  EXPECT_EQ(store.remaining_for("other"), 5u);
}

TEST(Store, ResubmissionOverwrites) {
  AnnotationStore store;
  store.load_tasks({task("p1", 1)});
  store.submit("p1", "ann", LabelClass::Mention);
  store.submit("p1", "ann", LabelClass::Consumption);
  const auto rs = store.records();
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_EQ(rs[0].label, LabelClass::Consumption);
  EXPECT_THROW(store.submit("nope", "ann", LabelClass::Mention), NotFoundError);
}

TEST(Store, ClosedEnrollment) {
  StoreConfig c;
  c.open_enrollment = false;
  AnnotationStore store(c);
  store.load_tasks({task("p1", 1)});
  EXPECT_THROW(store.next_task("stranger"), ContractError);
  EXPECT_THROW(store.submit("p1", "stranger", LabelClass::Mention), ContractError);
  store.register_annotator("known");
  EXPECT_TRUE(store.next_task("known"));
}

TEST(Store, LeaseKeepsPostFromSameAnnotator) {
  UtcSeconds clock = 0;
  StoreConfig c;
  c.lease_seconds = 600;
  AnnotationStore store(c, [&] { return clock; });
  store.load_tasks({task("p1", 1), task("p2", 2)});
  EXPECT_EQ(store.next_task("a")->post.post_id, "p1");
  EXPECT_EQ(store.next_task("a")->post.post_id, "p2");  // p1 is leased to a
  clock = 601;
  EXPECT_EQ(store.next_task("a")->post.post_id, "p1");  // lease expired
}

TEST(Store, TargetAnnotationsCapsLabels) {
  StoreConfig c;
  c.target_annotations = 2;
  AnnotationStore store(c);
  store.load_tasks({task("p1", 1)});
  store.submit("p1", "a", LabelClass::Mention);
  store.submit("p1", "b", LabelClass::Mention);
  EXPECT_FALSE(store.next_task("c"));
}

TEST(Store, ConcurrentPollersGetDisjointPosts) {
  StoreConfig c;
  c.target_annotations = 3;
  AnnotationStore store(c, [] { return UtcSeconds{0}; });
  std::vector<corpus::MatchedPost> tasks;
  for (int i = 0; i < 64; ++i) tasks.push_back(task("p" + std::to_string(100 + i), i));
  store.load_tasks(tasks);
  constexpr int kThreads = 8, kPolls = 8;
  std::vector<std::vector<std::string>> got(kThreads);
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      for (int k = 0; k < kPolls; ++k) got[t].push_back(store.next_task("ann" + std::to_string(t))->post.post_id);
    });
  }
  for (auto& th : threads) th.join();
  std::set<std::string> all;
  for (const auto& v : got) all.insert(v.begin(), v.end());
  EXPECT_EQ(all.size(), static_cast<std::size_t>(kThreads * kPolls));
}

TEST(Store, ConcurrentSubmissionsAllLand) {
  AnnotationStore store;
  std::vector<corpus::MatchedPost> tasks;
  for (int i = 0; i < 50; ++i) tasks.push_back(task("p" + std::to_string(i), i));
  store.load_tasks(tasks);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) store.submit("p" + std::to_string(i), "a" + std::to_string(t), cls(i));
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(store.records().size(), 200u);
  EXPECT_EQ(store.agreement().average, 1.0);
}

TEST(LabelsCsv, RoundTrip) {
  using L = LabelClass;
  auto rs = records({{"1", "a", L::Mention}, {"1", "b", L::NonmedicalUse}, {"2,x", "a", L::Unrelated}});
  rs[1].labeled_at = 1700000000;
  std::stringstream buf;
  write_labels_csv(buf, rs);
  const auto back = read_labels_csv(buf);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].labeled_at, 1700000000);
  EXPECT_EQ(back[2].post_id, "2,x");

  std::vector<GoldLabel> gold{{"1", L::Mention, GoldStatus::Resolved}, {"2", std::nullopt, GoldStatus::NeedsAdjudication}};
  std::stringstream gbuf;
  write_gold_csv(gbuf, gold);
  const auto gback = read_gold_csv(gbuf);
  ASSERT_EQ(gback.size(), 2u);
  EXPECT_EQ(gback[0].label, L::Mention);
  EXPECT_EQ(gback[1].status, GoldStatus::NeedsAdjudication);
}
