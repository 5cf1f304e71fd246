#include <gtest/gtest.h>

#include <sstream>

#include "ddsr/trainer.hpp"

namespace ddsr {
namespace {

struct Fixture {
  SplitDataset split;
  TokenizerResult tok;
  std::vector<std::int64_t> pop;
  PopularityBuckets buckets;
  TrainInputs inputs() const { return {&split, &tok.code_map, &tok.codebook, &pop, &buckets}; }
};

Fixture synthetic_fixture() {
  SyntheticConfig sc;
  sc.num_items = 60;
  sc.num_users = 80;
  sc.clusters = 4;
  sc.embedding_dim = 8;
  sc.seed = 4;
  const auto syn = generate_synthetic(sc);
  Fixture f;
  f.split = make_split(syn.corpus.sequences);
  TokenizerConfig tc;
  tc.m = 2;
  tc.K = 8;
  f.tok = fit_pq(syn.embeddings, tc);
  f.pop = syn.corpus.catalog.popularity();
  f.buckets = popularity_buckets(syn.corpus.catalog, 5);
  return f;
}

ApproximatorConfig small_model(int m, int K) {
  ApproximatorConfig c;
  c.d = 16;
  c.layers = 1;
  c.heads = 2;
  c.ff = 32;
  c.dropout = 0.0;
  c.max_items = 10;
  c.m = m;
  c.K = K;
  c.seed = 8;
  return c;
}

TEST(TrainingExamples, ShiftByOneItem) {
  SplitDataset ds;
  ds.users.push_back({"u", {0, 1, 2}, 3, 4});
  ds.users.push_back({"v", {2}, 0, 1});
  const CodeMap cm(2, 4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 0}});
  const auto ex = training_examples(ds, cm, 10);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].input.codes, (std::vector<Code>{0, 1, 1, 2}));
  EXPECT_EQ(ex[0].targets, (std::vector<Code>{1, 2, 2, 3}));
  const auto cut = training_examples(ds, cm, 1);
  EXPECT_EQ(cut[0].input.codes, (std::vector<Code>{1, 2}));
  EXPECT_EQ(cut[0].targets, (std::vector<Code>{2, 3}));
}

TEST(Fit, MemorizesOneSequenceWithoutDiffusion) {
  Fixture f;
  f.split.users.push_back({"u", {0, 1, 2, 3, 4, 5}, 6, 7});
  std::vector<SemanticId> codes;
  for (int i = 0; i < 8; ++i) codes.push_back({i % 4, (i * 3) % 4});
  f.tok.code_map = CodeMap(2, 4, codes);
  f.tok.codebook.method = TokenizerMethod::random;
  f.tok.codebook.m = 2;
  f.tok.codebook.K = 4;
  f.pop.assign(8, 1);
  f.buckets.is_long_tail.assign(8, false);
  Approximator<float> model(small_model(2, 4));
  TransitionModel tm = no_diffusion(4);
  TrainConfig tc;
  tc.max_epochs = 200;
  tc.patience = 1000;
  tc.lr = 1e-2;
  const auto res = fit<float>(f.inputs(), tm, model, tc, InferenceConfig{});
  ASSERT_EQ(res.history.size(), 200u);
  EXPECT_LT(res.history.back().loss, 0.01);
}

TEST(Fit, StopsAfterPatienceNonImprovingEpochs) {
  const Fixture f = synthetic_fixture();
  Approximator<float> model(small_model(2, 8));
  TransitionModel tm = no_diffusion(8);
  TrainConfig tc;
  tc.max_epochs = 50;
  tc.patience = 10;
  tc.lr = 1e-12;  // parameters do not move, so validation never improves after epoch 1
  const auto res = fit<float>(f.inputs(), tm, model, tc, InferenceConfig{});
  EXPECT_TRUE(res.early_stopped);
  EXPECT_EQ(res.best_epoch, 1);
  EXPECT_EQ(res.history.size(), 11u);
}

TEST(Fit, SameSeedSameLossCurve) {
  const Fixture f = synthetic_fixture();
  DiffusionConfig dc;
  dc.T = 20;
  dc.K = 8;
  auto run = [&] {
    Approximator<float> model(small_model(2, 8));
    TransitionModel tm = make_uniform_transition(dc);
    TrainConfig tc;
    tc.max_epochs = 3;
    tc.batch_size = 16;
    tc.seed = 3;
    std::ostringstream log;
    const auto res = fit<float>(f.inputs(), tm, model, tc, InferenceConfig{}, true, &log);
    return std::make_pair(res, log.str());
  };
  const auto [a, la] = run();
  const auto [b, lb] = run();
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].loss, b.history[i].loss);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(std::count(la.begin(), la.end(), '\n'), 3);
  const auto first = nlohmann::json::parse(la.substr(0, la.find('\n')));
  for (const char* key : {"epoch", "loss", "valid_ndcg10", "lr"}) EXPECT_TRUE(first.contains(key)) << key;
}

TEST(Fit, ImportanceCachesFollowLearnedEmbeddings) {
  const Fixture f = synthetic_fixture();
  DiffusionConfig dc;
  dc.T = 10;
  dc.K = 8;
  dc.transition = TransitionKind::importance;
  Approximator<float> model(small_model(2, 8));
  TransitionModel tm = TransitionModel::importance(build_sigma_schedule(dc), {Eigen::MatrixXd::Zero(8, 8)});
  TrainConfig tc;
  tc.max_epochs = 2;
  InferenceConfig ic;
  ic.skip_divisor = 5;
  fit<float>(f.inputs(), tm, model, tc, ic);
  const auto expected = importance_distances(model, f.tok.codebook, DistanceSource::learned, true);
  ASSERT_EQ(tm.distances().size(), 1u);
  EXPECT_TRUE(tm.distances()[0] == expected[0]);
  for (int t = 1; t <= 10; ++t) EXPECT_LT((tm.cumulative(t) - tm.cumulative(t - 1) * tm.step(t)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fit, RejectsMismatchedShapes) {
  const Fixture f = synthetic_fixture();
  Approximator<float> model(small_model(2, 6));
  TransitionModel tm = no_diffusion(6);
  EXPECT_THROW(fit<float>(f.inputs(), tm, model, TrainConfig{}, InferenceConfig{}), ConfigError);
}

TEST(SampleUsers, DeterministicSortedSubset) {
  const auto a = sample_users(100, 10, 4);
  EXPECT_EQ(a, sample_users(100, 10, 4));
  EXPECT_EQ(a.size(), 10u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(sample_users(5, 0, 1).size(), 5u);
}

}  // namespace
}  // namespace ddsr
