#include <gtest/gtest.h>

#include <set>

#include "support/gen.hpp"
#include "support/tempdir.hpp"
#include "toxipipe/cohort.hpp"
#include "toxipipe/error.hpp"

using namespace toxipipe;
using namespace toxipipe::cohort;

namespace {

const std::string kSalt = "demo-salt";
const UtcSeconds kJan1 = parse_iso8601("2024-01-01T00:00:00Z");

corpus::PostRecord post(std::string id, std::string author, UtcSeconds t, std::string text = "") {
  corpus::PostRecord p;
  p.post_id = std::move(id);
  p.author_id = std::move(author);
  p.created_at = t;
  p.text = text.empty() ? "post " + p.post_id : std::move(text);
  return p;
}

classify::Prediction nm(const std::string& id, double score) {
  const double rest = (1.0 - score) / 3.0;
  return classify::Prediction::from_scores(id, {score, rest, rest, rest});
}

std::vector<std::pair<std::string, UtcSeconds>> content(const Timeline& t) {
  std::vector<std::pair<std::string, UtcSeconds>> out;
  for (const auto& p : t.posts) out.emplace_back(p.post_id, p.created_at);
  return out;
}

Timeline timeline_of(std::vector<corpus::PostRecord> posts) {
  Timeline t;
  t.member_id = member_id_for(kSalt, "u");
  std::sort(posts.begin(), posts.end(), [](const auto& a, const auto& b) {
    return std::tie(a.created_at, a.post_id) < std::tie(b.created_at, b.post_id);
  });
  t.posts = std::move(posts);
  return t;
}

}  // namespace

TEST(MemberId, SaltedSha256) {
  EXPECT_EQ(member_id_for("demo-salt", "user42"), "a14d88939c1c2906993557b0749de52e8cf109cf0753ae51472234b4a945ac9b");
  EXPECT_NE(member_id_for("other", "user42"), member_id_for("demo-salt", "user42"));
}

TEST(Admit, Examples) {
  Cohort c(kSalt);
  AdmissionPolicy argmax;
  EXPECT_TRUE(c.admit(classify::Prediction::from_scores("p1", {0.7, 0.1, 0.1, 0.1}), post("p1", "alice", kJan1), argmax));
  AdmissionPolicy thr{AdmissionPolicy::Mode::Threshold, 0.5};
  EXPECT_FALSE(c.admit(classify::Prediction::from_scores("p2", {0.4, 0.6, 0, 0}), post("p2", "bob", kJan1), thr));

  AdmitOutcome out{};
  c.admit(nm("p3", 0.6), post("p3", "alice", kJan1 + 10), argmax, &out);
  EXPECT_EQ(out, AdmitOutcome::Unchanged);
  const auto* m = c.find(member_id_for(kSalt, "alice"));
  ASSERT_TRUE(m);
  EXPECT_EQ(m->admitting_post_id, "p1");
  EXPECT_DOUBLE_EQ(m->admitting_score, 0.7);
  EXPECT_EQ(m->admitted_at, kJan1);

  c.admit(nm("p4", 0.9), post("p4", "alice", kJan1 + 20), argmax, &out);
  EXPECT_EQ(out, AdmitOutcome::EvidenceUpdated);
  EXPECT_EQ(c.find(m->member_id)->admitting_post_id, "p4");
  EXPECT_EQ(c.members().size(), 1u);
  EXPECT_THROW(c.admit(nm("zz", 0.9), post("p5", "carol", kJan1), argmax), ContractError);
  // The raw author id is not stored anywhere in the snapshot.
  EXPECT_EQ(c.snapshot().dump().find("alice"), std::string::npos);
}

TEST(Admit, ThresholdMonotone) {
  gen::Source g(21);
  for (int it = 0; it < 1000; ++it) {
    const double t = g.real(0, 1), s = g.real(0, 1), s2 = g.real(s, 1);
    AdmissionPolicy p{AdmissionPolicy::Mode::Threshold, t};
    if (p.qualifies(nm("x", s))) {
      EXPECT_TRUE(p.qualifies(nm("x", s2)));
    }
    EXPECT_EQ(p.qualifies(nm("x", s)), s >= t);
  }
}

TEST(Due, FourteenDayBoundary) {
  Cohort c(kSalt);
  AdmissionPolicy argmax;
  c.admit(nm("a1", 0.9), post("a1", "a", kJan1), argmax);
  c.admit(nm("b1", 0.9), post("b1", "b", kJan1), argmax);
  c.admit(nm("n1", 0.9), post("n1", "n", kJan1), argmax);
  const auto a = member_id_for(kSalt, "a"), b = member_id_for(kSalt, "b"), n = member_id_for(kSalt, "n");
  c.merge(a, std::vector{post("a1", "a", kJan1)}, parse_iso8601("2024-01-01T00:00:00Z"));
  c.merge(b, std::vector{post("b1", "b", kJan1)}, parse_iso8601("2024-01-02T00:00:00Z"));
  const auto due = c.due_for_recollection(parse_iso8601("2024-01-15T00:00:00Z"));
  EXPECT_EQ(due, (std::vector<std::string>{n, a}));
  EXPECT_EQ(c.due_for_recollection(parse_iso8601("2024-01-14T23:59:59Z")), std::vector<std::string>{n});
  const auto later = c.due_for_recollection(parse_iso8601("2024-02-01T00:00:00Z"));
  EXPECT_EQ(later, (std::vector<std::string>{n, a, b}));
  c.set_status(n, MemberStatus::ExcludedManual);
  EXPECT_EQ(c.due_for_recollection(parse_iso8601("2024-02-01T00:00:00Z")), (std::vector<std::string>{a, b}));
  EXPECT_THROW(c.merge("unknown", {}, kJan1), NotFoundError);
}

TEST(Merge, Examples) {
  const std::string id = member_id_for(kSalt, "u");
  Timeline t{id, {}, std::nullopt};
  const auto t1 = merge_timeline(t, std::vector{post("c", "u", 30), post("a", "u", 10), post("e", "u", 50)}, 100, kSalt);
  const auto t2 = merge_timeline(t1, std::vector{post("d", "u", 40), post("b", "u", 20)}, 200, kSalt);
  ASSERT_EQ(t2.posts.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(t2.posts[i].post_id, std::string(1, static_cast<char>('a' + i)));
  EXPECT_EQ(t2.last_collected_at, 200);

  const auto again = merge_timeline(t2, t2.posts, 300, kSalt);
  EXPECT_EQ(content(again), content(t2));

  // Existing record wins.
  const auto edited = merge_timeline(t2, std::vector{post("a", "u", 10, "edited")}, 300, kSalt);
  EXPECT_EQ(edited.posts[0].text, "post a");
  // Watermark never behind the newest post.
  EXPECT_EQ(merge_timeline(t, std::vector{post("z", "u", 999)}, 500, kSalt).last_collected_at, 999);
  EXPECT_THROW(merge_timeline(t, std::vector{post("x", "intruder", 1)}, 1, kSalt), ContractError);
}

TEST(Merge, CommutativeAndIdempotentOverRandomOrders) {
  gen::Source g(22);
  const std::string id = member_id_for(kSalt, "u");
  for (int it = 0; it < 1000; ++it) {
    // A pool of posts split into overlapping batches.
    const std::size_t pool = 1 + g.below(40);
    std::vector<corpus::PostRecord> posts;
    for (std::size_t i = 0; i < pool; ++i) {
      posts.push_back(post("p" + std::to_string(i), "u", static_cast<UtcSeconds>(g.below(20))));
    }
    std::vector<std::vector<corpus::PostRecord>> batches(1 + g.below(5));
    for (const auto& p : posts) {
      batches[g.below(batches.size())].push_back(p);
      if (g.coin(0.3)) batches[g.below(batches.size())].push_back(p);
    }
    std::set<std::pair<UtcSeconds, std::string>> want;
    for (const auto& p : posts) want.emplace(p.created_at, p.post_id);

    Timeline t{id, {}, std::nullopt};
    g.shuffle(batches);
    UtcSeconds clock = 100;
    for (const auto& b : batches) t = merge_timeline(t, b, clock++, kSalt);
    std::set<std::pair<UtcSeconds, std::string>> got;
    for (std::size_t i = 0; i < t.posts.size(); ++i) {
      got.emplace(t.posts[i].created_at, t.posts[i].post_id);
      if (i > 0) {
        ASSERT_LT(std::tie(t.posts[i - 1].created_at, t.posts[i - 1].post_id),
                  std::tie(t.posts[i].created_at, t.posts[i].post_id));
      }
    }
    ASSERT_EQ(got, want);
    ASSERT_EQ(t.posts.size(), want.size());
    const auto& any = batches[g.below(batches.size())];
    ASSERT_EQ(content(merge_timeline(t, any, clock, kSalt)), content(t));
  }
}

TEST(BotScore, FlagArithmetic) {
  // Irregular, sparse, distinct, no links.
  std::vector<corpus::PostRecord> clean;
  UtcSeconds t = kJan1;
  for (int i = 0; i < 12; ++i) {
    t += kSecondsPerDay * (1 + i % 3) + 3600 * (i * 7 % 5);
    clean.push_back(post("c" + std::to_string(i), "u", t, "thought number " + std::to_string(i)));
  }
  const auto a0 = bot_score(timeline_of(clean));
  ASSERT_TRUE(a0.score);
  EXPECT_EQ(*a0.score, 0.0);

  // A post every minute with the same link.
  std::vector<corpus::PostRecord> spam;
  for (int i = 0; i < 30; ++i) spam.push_back(post("s" + std::to_string(i), "u", kJan1 + 60 * i, "buy now https://x.example/deal"));
  const auto a1 = bot_score(timeline_of(spam));
  EXPECT_EQ(*a1.score, 1.0);
  EXPECT_EQ(a1.flags, (std::array<bool, kNumBotFlags>{true, true, true, true}));

  // Hourly with a repeated message: regular and duplicate only.
  std::vector<corpus::PostRecord> two;
  for (int i = 0; i < 30; ++i) two.push_back(post("h" + std::to_string(i), "u", kJan1 + 3600 * i, "hourly reminder"));
  const auto a2 = bot_score(timeline_of(two));
  EXPECT_EQ(*a2.score, 0.5);
  EXPECT_EQ(a2.flags, (std::array<bool, kNumBotFlags>{false, true, false, true}));
  EXPECT_NEAR(a2.posts_per_day, 30.0 / (29.0 / 24.0), 1e-9);
  EXPECT_DOUBLE_EQ(a2.duplicate_ratio, 29.0 / 30.0);

  // Below min_posts: unscored.
  EXPECT_FALSE(bot_score(timeline_of({spam.begin(), spam.begin() + 9})).score);
}

TEST(FilterBots, ThresholdAndIdempotence) {
  Cohort c(kSalt);
  AdmissionPolicy argmax;
  std::vector<std::string> ids;
  const std::vector<std::pair<std::string, std::string>> shapes{{"clean", "thought"}, {"two", "hourly"}, {"spam", "buy"}};
  for (const auto& [author, kind] : shapes) {
    c.admit(nm(author + "-0", 0.9), post(author + "-0", author, kJan1), argmax);
    ids.push_back(member_id_for(kSalt, author));
    std::vector<corpus::PostRecord> posts;
    for (int i = 0; i < 30; ++i) {
      if (kind == "thought") {
        posts.push_back(post(author + std::to_string(i), author, kJan1 + kSecondsPerDay * i + 977 * (i * i % 13),
                             "thought " + std::to_string(i)));
      } else if (kind == "hourly") {
        posts.push_back(post(author + std::to_string(i), author, kJan1 + 3600 * i, "hourly reminder"));
      } else {
        posts.push_back(post(author + std::to_string(i), author, kJan1 + 60 * i, "buy https://x.example"));
      }
    }
    c.merge(ids.back(), posts, kJan1 + 40 * kSecondsPerDay);
  }
  Cohort high = c;
  EXPECT_TRUE(high.filter_bots(1.01).excluded.empty());

  const auto r = c.filter_bots(0.5);
  ASSERT_EQ(r.excluded.size(), 2u);
  EXPECT_EQ(c.find(ids[0])->status, MemberStatus::Active);
  EXPECT_EQ(c.find(ids[1])->status, MemberStatus::ExcludedBot);
  EXPECT_EQ(c.find(ids[2])->status, MemberStatus::ExcludedBot);
  EXPECT_EQ(c.find(ids[1])->bot_score, 0.5);

  const auto before = c.snapshot();
  EXPECT_TRUE(c.filter_bots(0.5).excluded.empty());
  EXPECT_EQ(c.snapshot(), before);

  // Manual reinstatement survives later filtering.
  c.set_status(ids[2], MemberStatus::Active);
  c.filter_bots(0.5);
  EXPECT_EQ(c.find(ids[2])->status, MemberStatus::Active);
  const auto s = c.summary();
  EXPECT_EQ(s.total, 3u);
  EXPECT_EQ(s.active, 2u);
  EXPECT_EQ(s.excluded_bot, 1u);
}

TEST(Store, ReplayMatchesLiveCohort) {
  TempDir dir;
  CohortStore store(dir / "cohort");
  EXPECT_FALSE(store.exists());
  Cohort c = store.load(kSalt);
  gen::Source g(23);
  AdmissionPolicy argmax;
  for (int i = 0; i < 40; ++i) {
    const std::string author = "author" + std::to_string(g.below(15));
    const std::string pid = "post" + std::to_string(i);
    c.admit(nm(pid, g.real(0.3, 1)), post(pid, author, kJan1 + i), argmax);
    if (i % 10 == 9) store.append_events(c);
  }
  std::vector<std::string> ids;
  for (const auto& [id, m] : c.members()) ids.push_back(id);
  for (const auto& id : ids) {
    // Posts already carrying the member id are accepted as the member's own.
    c.merge(id, std::vector{post(id.substr(0, 8) + "-a", id, kJan1 + 50), post(id.substr(0, 8) + "-b", id, kJan1 + 60)},
            kJan1 + 100);
  }
  c.filter_bots(0.5);
  store.append_events(c);
  EXPECT_TRUE(store.exists());

  const Cohort replayed = store.load(kSalt);
  EXPECT_EQ(replayed.snapshot(), c.snapshot());
  store.compact(replayed);
  EXPECT_EQ(store.load(kSalt).snapshot(), c.snapshot());
  EXPECT_THROW(store.load("another-salt"), ContractError);
}
