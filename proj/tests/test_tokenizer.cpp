#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "ddsr/corpus.hpp"
#include "ddsr/rqvae.hpp"
#include "ddsr/tokenizer.hpp"

namespace ddsr {
namespace {

EmbeddingTable random_table(int n, int dim, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingTable t;
  t.vectors.resize(n, dim);
  for (Eigen::Index i = 0; i < t.vectors.size(); ++i) t.vectors.data()[i] = standard_normal(rng);
  return t;
}

TEST(Pq, NearestCentroidByInspection) {
  Codebook cb;
  cb.m = 2;
  cb.K = 2;
  RowMatrix c(2, 1);
  c << 0.0, 1.0;
  cb.centroids = {c, c};
  EmbeddingTable e;
  e.vectors.resize(1, 2);
  e.vectors << 0.9, 0.1;
  EXPECT_EQ(pq_encode(cb, e)[0], (SemanticId{1, 0}));
}

TEST(Pq, CodesMatchExhaustiveSearch) {
  const auto table = random_table(200, 8, 5);
  TokenizerConfig cfg;
  cfg.m = 4;
  cfg.K = 4;
  cfg.seed = 2;
  const auto tok = fit_pq(table, cfg);
  const int sub = 2;
  for (int i = 0; i < 200; ++i)
    for (int p = 0; p < 4; ++p) {
      const auto& cents = tok.codebook.centroids[static_cast<std::size_t>(p)];
      int best = -1;
      double best_d = 1e300;
      for (int k = 0; k < 4; ++k) {
        double d = 0.0;
        for (int j = 0; j < sub; ++j) {
          const double diff = table.vectors(i, p * sub + j) - cents(k, j);
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      EXPECT_EQ(tok.code_map.code(i)[static_cast<std::size_t>(p)], best);
    }
}

TEST(Pq, DistortionNonIncreasing) {
  const auto table = random_table(300, 12, 8);
  TokenizerConfig cfg;
  cfg.m = 3;
  cfg.K = 16;
  const auto tok = fit_pq(table, cfg);
  for (const auto& curve : tok.codebook.distortion)
    for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i], curve[i - 1] + 1e-12);
}

TEST(Pq, IdenticalEmbeddingsCollide) {
  auto table = random_table(20, 4, 1);
  table.vectors.row(7) = table.vectors.row(3);
  TokenizerConfig cfg;
  cfg.m = 2;
  cfg.K = 4;
  const auto tok = fit_pq(table, cfg);
  EXPECT_EQ(tok.code_map.code(3), tok.code_map.code(7));
  bool found = false;
  for (const auto& g : tok.code_map.collisions())
    if (std::find(g.begin(), g.end(), 3) != g.end()) found = std::find(g.begin(), g.end(), 7) != g.end();
  EXPECT_TRUE(found);
}

TEST(Pq, RejectsIndivisibleDimension) {
  TokenizerConfig cfg;
  cfg.m = 3;
  cfg.K = 2;
  EXPECT_THROW(fit_pq(random_table(10, 8, 1), cfg), ConfigError);
}

TEST(RandomIds, SingleCodeSharesOneId) {
  TokenizerConfig cfg;
  cfg.method = TokenizerMethod::random;
  cfg.m = 3;
  cfg.K = 1;
  const auto tok = random_codes(50, cfg);
  EXPECT_EQ(tok.code_map.distinct_ids(), 1u);
}

TEST(RandomIds, Deterministic) {
  TokenizerConfig cfg;
  cfg.method = TokenizerMethod::random;
  cfg.seed = 77;
  EXPECT_EQ(random_codes(100, cfg).code_map.codes(), random_codes(100, cfg).code_map.codes());
}

TEST(RandomIds, FrequenciesUniformChiSquared) {
  TokenizerConfig cfg;
  cfg.method = TokenizerMethod::random;
  cfg.m = 32;
  cfg.K = 256;
  cfg.seed = 4;
  const std::size_t n = 10000;
  const auto tok = random_codes(n, cfg);
  const boost::math::chi_squared dist(cfg.K - 1);
  for (int p = 0; p < cfg.m; ++p) {
    std::vector<double> count(static_cast<std::size_t>(cfg.K), 0.0);
    for (std::size_t i = 0; i < n; ++i) count[static_cast<std::size_t>(tok.code_map.code(static_cast<ItemIndex>(i))[p])] += 1.0;
    const double expected = static_cast<double>(n) / cfg.K;
    double stat = 0.0;
    for (double c : count) stat += (c - expected) * (c - expected) / expected;
    // Bonferroni over the 32 positions keeps the family-wise level at 0.01.
    EXPECT_GT(boost::math::cdf(boost::math::complement(dist, stat)), 0.01 / cfg.m) << "position " << p;
  }
}

TEST(Resolver, ExactUniqueMatch) {
  CodeMap cm(2, 3, {{0, 1}, {2, 2}, {1, 0}});
  Codebook cb;
  cb.method = TokenizerMethod::random;
  cb.m = 2;
  cb.K = 3;
  EXPECT_EQ(resolve_item({2, 2}, cm, cb, {1, 1, 1}), 1);
}

TEST(Resolver, CollisionGoesToMostPopular) {
  CodeMap cm(2, 3, {{0, 1}, {2, 2}, {0, 1}, {0, 1}});
  Codebook cb;
  cb.method = TokenizerMethod::random;
  cb.m = 2;
  cb.K = 3;
  EXPECT_EQ(resolve_item({0, 1}, cm, cb, {3, 9, 7, 3}), 2);
  EXPECT_EQ(resolve_item({0, 1}, cm, cb, {5, 0, 1, 5}), 0);
}

TEST(Resolver, NearestMatchesExhaustiveDistance) {
  Codebook cb;
  cb.m = 2;
  cb.K = 3;
  RowMatrix c0(3, 1), c1(3, 2);
  c0 << 0.0, 1.0, 5.0;
  c1 << 0.0, 0.0, 3.0, 0.0, 0.0, 1.5;
  cb.centroids = {c0, c1};
  CodeMap cm(2, 3, {{0, 0}, {2, 1}, {1, 2}});
  const SemanticId query{1, 1};  // one centroid step away from items 0 and 2
  ItemIndex best = kNoItem;
  double best_d = 1e300;
  for (int i = 0; i < 3; ++i) {
    double d = 0.0;
    for (int p = 0; p < 2; ++p)
      d += (cb.centroids[p].row(query[p]) - cb.centroids[p].row(cm.code(i)[p])).norm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  EXPECT_EQ(resolve_item(query, cm, cb, {1, 1, 1}), best);
}

TEST(Codebook, JsonRoundTrip) {
  SyntheticConfig sc;
  sc.num_items = 50;
  sc.num_users = 10;
  sc.clusters = 5;
  sc.embedding_dim = 8;
  const auto syn = generate_synthetic(sc);
  TokenizerConfig cfg;
  cfg.m = 2;
  cfg.K = 8;
  const auto tok = fit_pq(syn.embeddings, cfg);
  const auto back = codebook_from_json(codebook_to_json(tok.codebook, tok.code_map, syn.corpus.catalog.ids()),
                                       syn.corpus.catalog);
  EXPECT_EQ(back.code_map.codes(), tok.code_map.codes());
  ASSERT_EQ(back.codebook.centroids.size(), 2u);
  EXPECT_TRUE(back.codebook.centroids[1].isApprox(tok.codebook.centroids[1]));
}

TEST(Rqvae, SingleLevelIdentityIsVectorQuantization) {
  const auto table = random_table(40, 3, 6);
  RQVAE q = RQVAE::identity(3, 1, 5, 0.25);
  Rng rng(1);
  for (int k = 0; k < 5; ++k)
    for (int j = 0; j < 3; ++j) q.mutable_centroids(0)(k, j) = standard_normal(rng);
  const auto pass = q.forward(table.vectors);
  for (int i = 0; i < 40; ++i) {
    int best = 0;
    for (int k = 1; k < 5; ++k)
      if ((table.vectors.row(i) - q.centroids(0).row(k)).squaredNorm() <
          (table.vectors.row(i) - q.centroids(0).row(best)).squaredNorm())
        best = k;
    EXPECT_EQ(pass.codes[static_cast<std::size_t>(i)][0], best);
  }
}

TEST(Rqvae, ResidualIdentity) {
  const auto table = random_table(30, 6, 2);
  TokenizerConfig cfg;
  cfg.method = TokenizerMethod::rqvae;
  cfg.m = 3;
  cfg.K = 4;
  cfg.rqvae_hidden = {8};
  cfg.rqvae_latent = 4;
  const auto res = fit_rqvae(table, cfg, 2, 1e-3);
  const auto pass = res.model.forward(table.vectors);
  for (int d = 0; d < cfg.m; ++d)
    for (int i = 0; i < 30; ++i) {
      const Code c = pass.codes[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
      const RowMatrix expected = pass.residuals[static_cast<std::size_t>(d)].row(i) - res.model.centroids(d).row(c);
      EXPECT_LT((pass.residuals[static_cast<std::size_t>(d) + 1].row(i) - expected).norm(), 1e-12);
    }
  RowMatrix sum = RowMatrix::Zero(30, cfg.rqvae_latent);
  for (int i = 0; i < 30; ++i)
    for (int d = 0; d < cfg.m; ++d) sum.row(i) += res.model.centroids(d).row(pass.codes[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)]);
  EXPECT_LT((sum - pass.quantized).norm(), 1e-12);
  EXPECT_LT((pass.latent - pass.quantized - pass.residuals.back()).norm(), 1e-10);
}

}  // namespace
}  // namespace ddsr
