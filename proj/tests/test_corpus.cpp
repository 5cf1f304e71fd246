#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "ddsr/corpus.hpp"

namespace ddsr {
namespace {

std::vector<Interaction> rows_from(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::vector<Interaction> rows;
  std::int64_t ts = 0;
  for (const auto& [u, i] : pairs) rows.push_back({u, i, ts++});
  return rows;
}

// Removes every row whose user or item is below the threshold, once.
std::vector<Interaction> filter_once(const std::vector<Interaction>& rows, int k) {
  std::map<std::string, int> uc, ic;
  for (const auto& r : rows) {
    ++uc[r.user_id];
    ++ic[r.item_id];
  }
  std::vector<Interaction> out;
  for (const auto& r : rows)
    if (uc[r.user_id] >= k && ic[r.item_id] >= k) out.push_back(r);
  return out;
}

TEST(KCore, KeepsEverythingAboveThreshold) {
  std::vector<std::pair<std::string, std::string>> p;
  for (const char* u : {"u1", "u2", "u3", "u4", "u5"})
    for (const char* i : {"a", "b", "c", "d", "e"}) p.emplace_back(u, i);
  const auto rows = rows_from(p);
  EXPECT_EQ(k_core(rows, 5).size(), rows.size());
}

TEST(KCore, RemovesRareItem) {
  std::vector<std::pair<std::string, std::string>> p;
  for (const char* u : {"u1", "u2", "u3", "u4", "u5"})
    for (const char* i : {"a", "b", "c", "d", "e", "f"}) p.emplace_back(u, i);
  p.emplace_back("u1", "rare");
  p.emplace_back("u2", "rare");
  p.emplace_back("u3", "rare");
  p.emplace_back("u4", "rare");
  const auto out = k_core(rows_from(p), 5);
  EXPECT_EQ(out.size(), 30u);
  for (const auto& r : out) EXPECT_NE(r.item_id, "rare");
}

TEST(KCore, IteratesToFixpoint) {
  // Ten rows: dropping item z leaves u2 with one interaction, which then drops item y.
  const auto rows = rows_from({{"u1", "x"}, {"u1", "y"}, {"u3", "x"}, {"u3", "y"}, {"u2", "y"},
                               {"u2", "z"}, {"u4", "x"}, {"u4", "w"}, {"u5", "w"}, {"u5", "x"}});
  auto expected = rows;
  for (auto next = filter_once(expected, 2); next.size() != expected.size(); next = filter_once(expected, 2))
    expected = next;
  const auto got = k_core(rows, 2);
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].user_id, expected[i].user_id);
    EXPECT_EQ(got[i].item_id, expected[i].item_id);
  }
  for (const auto& r : got) EXPECT_NE(r.user_id, "u2");
}

TEST(Interactions, ParsesCsvAndSortsStably) {
  std::istringstream in("user_id,item_id,timestamp\nu,b,5\nu,a,1\nu,c,5\nv,a,2\nv,b,3\nv,c,4\n");
  const Corpus c = load_interactions(in, 1);
  ASSERT_EQ(c.sequences.size(), 2u);
  std::vector<std::string> u;
  for (ItemIndex i : c.sequences[0].items) u.push_back(c.catalog.id(i));
  EXPECT_EQ(u, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Interactions, BadRowReportsLine) {
  std::istringstream in("user_id,item_id,timestamp\nu,a,1\nu,b\n");
  try {
    load_interactions(in, 1);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Split, LeaveOneOut) {
  const auto s = make_split({{"u", {0, 1, 2, 3}}});
  EXPECT_EQ(s.users[0].train, (std::vector<ItemIndex>{0, 1}));
  EXPECT_EQ(s.users[0].valid_target, 2);
  EXPECT_EQ(s.users[0].valid_input(), (std::vector<ItemIndex>{0, 1}));
  EXPECT_EQ(s.users[0].test_target, 3);
  EXPECT_EQ(s.users[0].test_input(), (std::vector<ItemIndex>{0, 1, 2}));
}

TEST(Split, MinimalSequence) {
  const auto s = make_split({{"u", {7, 8, 9}}});
  EXPECT_EQ(s.users[0].train, (std::vector<ItemIndex>{7}));
  EXPECT_EQ(s.users[0].valid_target, 8);
  EXPECT_EQ(s.users[0].test_target, 9);
  EXPECT_THROW(make_split({{"short", {1, 2}}}), DataError);
}

TEST(Split, ReassemblesRandomSequences) {
  Rng rng(11);
  std::vector<UserSequence> seqs;
  for (int u = 0; u < 100; ++u) {
    UserSequence s{"u" + std::to_string(u), {}};
    const int n = 3 + static_cast<int>(uniform_index(rng, 20));
    for (int j = 0; j < n; ++j) s.items.push_back(static_cast<ItemIndex>(uniform_index(rng, 50)));
    seqs.push_back(s);
  }
  const auto split = make_split(seqs);
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    std::vector<ItemIndex> joined = split.users[u].train;
    joined.push_back(split.users[u].valid_target);
    joined.push_back(split.users[u].test_target);
    EXPECT_EQ(joined, seqs[u].items);
    EXPECT_EQ(split.users[u].full(), seqs[u].items);
  }
}

Catalog catalog_with_popularity(const std::vector<std::int64_t>& pop) {
  Catalog c;
  for (std::size_t i = 0; i < pop.size(); ++i) c.add("i" + std::to_string(i));
  c.set_popularity(pop);
  return c;
}

TEST(Buckets, HalfOpenThresholds) {
  const auto c = catalog_with_popularity({4, 5, 20, 19});
  const auto b5 = popularity_buckets(c, 5);
  EXPECT_TRUE(b5.is_long_tail[0]);
  EXPECT_FALSE(b5.is_long_tail[1]);
  const auto b20 = popularity_buckets(c, 20);
  EXPECT_FALSE(b20.is_long_tail[2]);
  EXPECT_TRUE(b20.is_long_tail[3]);
  EXPECT_TRUE(popularity_buckets(c, 1).long_tail.empty());
}

TEST(Buckets, PopularityCountsTrainingPrefixOnly) {
  std::istringstream in("user_id,item_id,timestamp\nu,a,1\nu,b,2\nu,c,3\nu,d,4\n");
  const Corpus c = load_interactions(in, 1);
  EXPECT_EQ(c.catalog.popularity(c.catalog.index("a")), 1);
  EXPECT_EQ(c.catalog.popularity(c.catalog.index("b")), 1);
  EXPECT_EQ(c.catalog.popularity(c.catalog.index("c")), 0);
  EXPECT_EQ(c.catalog.popularity(c.catalog.index("d")), 0);
}

TEST(Synthetic, SharpnessOneAlwaysFollowsSuccessor) {
  SyntheticConfig cfg;
  cfg.num_items = 200;
  cfg.num_users = 100;
  cfg.clusters = 10;
  cfg.markov_sharpness = 1.0;
  const auto s = generate_synthetic(cfg);
  for (const auto& seq : s.corpus.sequences)
    for (std::size_t j = 1; j < seq.items.size(); ++j) {
      const int prev = s.item_cluster[static_cast<std::size_t>(seq.items[j - 1])];
      EXPECT_EQ(s.item_cluster[static_cast<std::size_t>(seq.items[j])], s.successor[static_cast<std::size_t>(prev)]);
    }
}

TEST(Synthetic, SameSeedIsIdentical) {
  SyntheticConfig cfg;
  cfg.num_items = 100;
  cfg.num_users = 50;
  cfg.clusters = 5;
  cfg.seed = 9;
  const auto a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  EXPECT_EQ(corpus_to_json(a.corpus).dump(), corpus_to_json(b.corpus).dump());
  EXPECT_TRUE(a.embeddings.vectors == b.embeddings.vectors);
}

TEST(Synthetic, SuccessorRateMatchesSharpness) {
  SyntheticConfig cfg;
  cfg.num_users = 1200;
  cfg.min_length = 10;
  cfg.max_length = 10;
  cfg.seed = 3;
  const auto s = generate_synthetic(cfg);
  std::size_t hits = 0, total = 0;
  for (const auto& seq : s.corpus.sequences)
    for (std::size_t j = 1; j < seq.items.size(); ++j) {
      const int prev = s.item_cluster[static_cast<std::size_t>(seq.items[j - 1])];
      hits += s.item_cluster[static_cast<std::size_t>(seq.items[j])] == s.successor[static_cast<std::size_t>(prev)];
      ++total;
    }
  ASSERT_GE(total, 10000u);
  EXPECT_NEAR(static_cast<double>(hits) / static_cast<double>(total), 0.9, 0.01);
}

TEST(Corpus, JsonRoundTrip) {
  SyntheticConfig cfg;
  cfg.num_items = 60;
  cfg.num_users = 30;
  cfg.clusters = 3;
  const auto s = generate_synthetic(cfg);
  const Corpus back = corpus_from_json(corpus_to_json(s.corpus));
  EXPECT_EQ(back.catalog.ids(), s.corpus.catalog.ids());
  EXPECT_EQ(back.catalog.popularity(), s.corpus.catalog.popularity());
  ASSERT_EQ(back.sequences.size(), s.corpus.sequences.size());
  for (std::size_t u = 0; u < back.sequences.size(); ++u) EXPECT_EQ(back.sequences[u].items, s.corpus.sequences[u].items);
}

}  // namespace
}  // namespace ddsr
