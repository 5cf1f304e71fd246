#include <gtest/gtest.h>

#include "ddsr/evaluator.hpp"
#include "ddsr/inferencer.hpp"

namespace ddsr {
namespace {

// Point mass on whatever code each token currently holds.
Denoiser echo_denoiser(int K) {
  return [K](const DenoiseRequest& req) {
    std::vector<Eigen::MatrixXd> out;
    for (const auto& s : req.sequences) {
      Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.codes.size()), K);
      for (std::size_t i = 0; i < s.codes.size(); ++i) p(static_cast<Eigen::Index>(i), s.codes[i]) = 1.0;
      out.push_back(p);
    }
    return out;
  };
}

Denoiser flat_denoiser(int K) {
  return [K](const DenoiseRequest& req) {
    std::vector<Eigen::MatrixXd> out;
    for (const auto& s : req.sequences)
      out.push_back(Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(s.codes.size()), K, 1.0 / K));
    return out;
  };
}

TEST(ReversePlan, StrideAndCount) {
  EXPECT_EQ(reverse_plan(100, 20), std::make_pair(20, 5));
  EXPECT_EQ(reverse_plan(1, 1), std::make_pair(1, 1));
  EXPECT_EQ(reverse_plan(10, 20), std::make_pair(10, 1));
  EXPECT_EQ(reverse_plan(0, 20), std::make_pair(0, 0));
}

TEST(Denoise, EchoIsFixedPointAtOneStep) {
  const TransitionModel tm = TransitionModel::uniform(Schedule::from_betas(6, {0.7}));
  const CodeSequence history{2, {0, 5, 3, 3, 1, 2}};
  for (auto alignment : {Alignment::shift, Alignment::anchored}) {
    InferenceConfig cfg;
    cfg.skip_divisor = 1;
    cfg.alignment = alignment;
    const auto res = denoise_sequence(history, echo_denoiser(6), tm, cfg, 4);
    EXPECT_EQ(res.sequences[0], history);
    EXPECT_EQ(res.steps_executed, 1);
  }
}

TEST(Denoise, SameSeedSameOutput) {
  DiffusionConfig dc;
  dc.T = 40;
  dc.K = 8;
  const TransitionModel tm = make_uniform_transition(dc);
  const std::vector<CodeSequence> h{{2, {1, 2, 3, 4}}, {2, {5, 6}}};
  const std::vector<std::size_t> keys{10, 11};
  InferenceConfig cfg;
  cfg.skip_divisor = 8;
  cfg.alignment = Alignment::shift;
  cfg.seed = 5;
  const auto a = denoise_batch(h, keys, flat_denoiser(8), tm, cfg);
  const auto b = denoise_batch(h, keys, flat_denoiser(8), tm, cfg);
  EXPECT_EQ(a.sequences, b.sequences);
  // Each sequence's stream depends on its key only, not on its batch neighbours.
  const auto solo = denoise_sequence(h[1], flat_denoiser(8), tm, cfg, 11);
  EXPECT_EQ(solo.sequences[0], a.sequences[1]);
}

TEST(Denoise, NoDiffusionRunsOneCleanForward) {
  const TransitionModel tm = no_diffusion(4);
  int calls = 0;
  Denoiser d = [&](const DenoiseRequest& req) {
    ++calls;
    EXPECT_EQ(req.steps[0], 0);
    return echo_denoiser(4)(req);
  };
  InferenceConfig cfg;
  const auto res = denoise_sequence(CodeSequence{1, {3, 1}}, d, tm, cfg);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(res.last_block[0](0, 1), 1.0);
}

TEST(Denoise, AnchoredCallsModelOnce) {
  DiffusionConfig dc;
  dc.T = 100;
  dc.K = 4;
  const TransitionModel tm = make_uniform_transition(dc);
  int calls = 0;
  Denoiser d = [&](const DenoiseRequest& req) {
    ++calls;
    return flat_denoiser(4)(req);
  };
  InferenceConfig cfg;
  const auto res = denoise_sequence(CodeSequence{1, {3, 1}}, d, tm, cfg);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(res.steps_executed, 20);
  cfg.alignment = Alignment::shift;
  calls = 0;
  denoise_sequence(CodeSequence{1, {3, 1}}, d, tm, cfg);
  EXPECT_EQ(calls, 20);
}

struct Toy {
  CodeMap cm;
  Codebook cb;
  std::vector<std::int64_t> pop;
};

Toy toy_catalog() {
  Toy t{CodeMap(2, 3, {{0, 0}, {0, 1}, {1, 2}, {2, 2}, {2, 0}}), {}, {5, 1, 9, 3, 7}};
  t.cb.method = TokenizerMethod::random;
  t.cb.m = 2;
  t.cb.K = 3;
  return t;
}

TEST(Ranking, PointMassPutsItemFirst) {
  const Toy t = toy_catalog();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 3);
  d(0, 2) = 1.0;
  d(1, 2) = 1.0;
  const auto r = rank_items(d, t.cm, t.cb, t.pop, RankingMode::logprob, 3);
  EXPECT_EQ(r.items[0], 3);
  EXPECT_EQ(r.target_rank, 1);
}

TEST(Ranking, UniformFallsBackToPopularity) {
  const Toy t = toy_catalog();
  const auto r = rank_items(Eigen::MatrixXd::Constant(2, 3, 1.0 / 3), t.cm, t.cb, t.pop, RankingMode::logprob);
  EXPECT_EQ(r.items, (std::vector<ItemIndex>{2, 4, 0, 3, 1}));
}

TEST(Ranking, MatchesExhaustiveScoring) {
  const Toy t = toy_catalog();
  Eigen::MatrixXd d(2, 3);
  d << 0.2, 0.5, 0.3, 0.6, 0.1, 0.3;
  std::vector<std::pair<double, ItemIndex>> brute;
  for (ItemIndex v = 0; v < 5; ++v)
    brute.emplace_back(std::log(d(0, t.cm.code(v)[0]) + 1e-12) + std::log(d(1, t.cm.code(v)[1]) + 1e-12), v);
  const auto r = rank_items(d, t.cm, t.cb, t.pop, RankingMode::logprob);
  for (std::size_t i = 0; i < 5; ++i) {
    int ahead = 0;
    for (const auto& [s, v] : brute) {
      const double sv = brute[static_cast<std::size_t>(r.items[i])].first;
      ahead += s > sv || (s == sv && (t.pop[v] > t.pop[r.items[i]] || (t.pop[v] == t.pop[r.items[i]] && v < r.items[i])));
    }
    EXPECT_EQ(ahead, static_cast<int>(i));
    EXPECT_EQ(rank_of(r.items[i], score_items(d, t.cm, t.cb, RankingMode::logprob), t.pop), static_cast<int>(i) + 1);
  }
}

TEST(Ranking, NearestModeUsesCodeDistance) {
  const Toy t = toy_catalog();
  Eigen::MatrixXd d(2, 3);
  d << 0.1, 0.1, 0.8, 0.1, 0.2, 0.7;
  const auto r = rank_items(d, t.cm, t.cb, t.pop, RankingMode::nearest);
  EXPECT_EQ(r.items[0], 3);
  EXPECT_EQ(resolve_last_block(d, t.cm, t.cb, t.pop), 3);
}

TEST(Metrics, Definitions) {
  EXPECT_EQ(recall_at_k(3, 10), 1.0);
  EXPECT_EQ(recall_at_k(11, 10), 0.0);
  EXPECT_EQ(recall_at_k(50, 50), 1.0);
  EXPECT_EQ(ndcg_at_k(1, 10), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k(3, 10), 0.5);
  EXPECT_EQ(ndcg_at_k(11, 10), 0.0);
}

TEST(Metrics, HandBuiltFixture) {
  const auto m = aggregate({1, 4, 60});
  EXPECT_NEAR(m.recall_at(10), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.ndcg_at(10), (1.0 + 1.0 / std::log2(5.0)) / 3.0, 1e-15);
  EXPECT_NEAR(m.recall_at(50), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, UniformRandomRankRecall) {
  Rng rng(31);
  std::vector<int> ranks;
  const int n = 20000;
  for (int i = 0; i < n; ++i) ranks.push_back(1 + static_cast<int>(uniform_index(rng, 100)));
  // E[R@10] = 10/100; four standard errors of a Bernoulli(0.1) mean.
  EXPECT_NEAR(aggregate(ranks).recall_at(10), 0.1, 4.0 * std::sqrt(0.09 / n));
}

TEST(Metrics, MarkdownTable) {
  const auto s = markdown_table({{"x", aggregate({1})}});
  EXPECT_NE(s.find("| x | 1 | 1.0000 | 1.0000 | 1.0000 | 1.0000 |"), std::string::npos);
}

TEST(Evaluate, OracleDenoiserIsPerfect) {
  // Collision-free codes; the oracle puts a point mass on each user's target codes.
  const int n_items = 30, m = 2, K = 6;
  std::vector<SemanticId> codes;
  for (int i = 0; i < n_items; ++i) codes.push_back({i % K, i / K});
  const CodeMap cm(m, K, codes);
  Codebook cb;
  cb.method = TokenizerMethod::random;
  cb.m = m;
  cb.K = K;
  Rng rng(2);
  SplitDataset ds;
  for (int u = 0; u < 40; ++u) {
    UserSplit s;
    s.user_id = "u" + std::to_string(u);
    for (int j = 0; j < 4; ++j) s.train.push_back(static_cast<ItemIndex>(uniform_index(rng, n_items)));
    s.valid_target = static_cast<ItemIndex>(uniform_index(rng, n_items));
    s.test_target = static_cast<ItemIndex>(uniform_index(rng, n_items));
    ds.users.push_back(s);
  }
  const std::vector<std::int64_t> pop(n_items, 1);
  PopularityBuckets b;
  b.is_long_tail.assign(n_items, false);
  DiffusionConfig dc;
  dc.T = 50;
  dc.K = K;
  const TransitionModel tm = make_uniform_transition(dc);
  Denoiser oracle = [&](const DenoiseRequest& req) {
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t s = 0; s < req.sequences.size(); ++s) {
      const auto& seq = req.sequences[s];
      Eigen::MatrixXd p = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(seq.codes.size()), K, 1.0 / K);
      const auto& target = cm.code(ds.users[req.keys[s]].test_target);
      for (int slot = 0; slot < m; ++slot) {
        p.row(p.rows() - m + slot).setZero();
        p(p.rows() - m + slot, target[static_cast<std::size_t>(slot)]) = 1.0;
      }
      out.push_back(p);
    }
    return out;
  };
  EvalContext ctx{&ds, &cm, &cb, &pop, &b, &tm};
  for (auto alignment : {Alignment::anchored, Alignment::shift}) {
    InferenceConfig cfg;
    cfg.alignment = alignment;
    cfg.batch_size = 7;
    const auto rep = evaluate(oracle, ctx, cfg, SplitKind::test);
    EXPECT_EQ(rep.overall.users, 40u);
    EXPECT_EQ(rep.overall.recall_at(10), 1.0);
    EXPECT_EQ(rep.overall.ndcg_at(10), 1.0);
  }
}

}  // namespace
}  // namespace ddsr
