#pragma once

// Semantic-ID tokenizers: product quantization, random IDs, and item resolution.
// Residual quantization lives in rqvae.hpp.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ddsr/common.hpp"
#include "ddsr/corpus.hpp"
#include "ddsr/embedding.hpp"
#include "ddsr/log.hpp"
#include "ddsr/random.hpp"

namespace ddsr {

enum class TokenizerMethod { pq, rqvae, random };

inline std::string to_string(TokenizerMethod m) {
  switch (m) {
    case TokenizerMethod::pq: return "pq";
    case TokenizerMethod::rqvae: return "rqvae";
    case TokenizerMethod::random: return "random";
  }
  return "?";
}

inline TokenizerMethod parse_tokenizer_method(const std::string& s) {
  if (s == "pq") return TokenizerMethod::pq;
  if (s == "rqvae") return TokenizerMethod::rqvae;
  if (s == "random") return TokenizerMethod::random;
  throw ConfigError("unknown tokenizer method '" + s + "' (expected pq, rqvae or random)");
}

struct TokenizerConfig {
  TokenizerMethod method = TokenizerMethod::pq;
  int m = 4;
  int K = 64;
  int kmeans_iters = 25;
  double rqvae_beta = 0.25;
  std::vector<int> rqvae_hidden = {512, 256, 128};
  int rqvae_latent = 32;
  int rqvae_epochs = 50;
  double rqvae_lr = 1e-3;
  int rqvae_batch = 64;
  std::uint64_t seed = 0;

  void validate() const {
    DDSR_REQUIRE(m >= 1, ConfigError, "tokenizer.m must be >= 1");
    DDSR_REQUIRE(K >= 2 || (method == TokenizerMethod::random && K >= 1), ConfigError, "tokenizer.K must be >= 2");
    DDSR_REQUIRE(kmeans_iters >= 0, ConfigError, "tokenizer.kmeans_iters must be >= 0");
  }
};

/// Per-position centroid tables. `centroids` is empty for random IDs.
struct Codebook {
  TokenizerMethod method = TokenizerMethod::pq;
  int m = 0;
  int K = 0;
  std::vector<RowMatrix> centroids;             // [position] K x sub_dim
  std::vector<int> effective_k;                  // distinct centroids actually fitted
  std::vector<std::vector<double>> distortion;   // [position] per Lloyd iteration (PQ only)
  int iterations = 0;
  double final_distortion = 0.0;

  bool has_centroids() const { return !centroids.empty(); }
};

/// Item -> semantic ID, plus the groups of items sharing an ID.
class CodeMap {
 public:
  CodeMap() = default;
  CodeMap(int m, int K, std::vector<SemanticId> codes) : m_(m), K_(K), codes_(std::move(codes)) {
    for (std::size_t i = 0; i < codes_.size(); ++i) {
      DDSR_REQUIRE(static_cast<int>(codes_[i].size()) == m_, DataError, "semantic ID has wrong length");
      for (Code c : codes_[i]) DDSR_REQUIRE(c >= 0 && c < K_, DataError, "code out of range");
      groups_[codes_[i]].push_back(static_cast<ItemIndex>(i));
    }
  }

  int m() const { return m_; }
  int K() const { return K_; }
  std::size_t size() const { return codes_.size(); }
  const SemanticId& code(ItemIndex i) const { return codes_.at(static_cast<std::size_t>(i)); }
  const std::vector<SemanticId>& codes() const { return codes_; }

  /// Items carrying exactly `id` (empty if none).
  const std::vector<ItemIndex>& items_with(const SemanticId& id) const {
    static const std::vector<ItemIndex> none;
    auto it = groups_.find(id);
    return it == groups_.end() ? none : it->second;
  }

  /// Semantic IDs shared by more than one item, each as its sorted member list.
  std::vector<std::vector<ItemIndex>> collisions() const {
    std::vector<std::vector<ItemIndex>> out;
    for (const auto& [id, items] : groups_)
      if (items.size() > 1) out.push_back(items);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t distinct_ids() const { return groups_.size(); }

 private:
  int m_ = 0;
  int K_ = 0;
  std::vector<SemanticId> codes_;
  std::map<SemanticId, std::vector<ItemIndex>> groups_;
};

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
  RowMatrix centroids;
  std::vector<Code> assignment;
  std::vector<double> distortion;  // mean squared distance, one entry per assignment pass
  int effective_k = 0;
};

/// Index of the nearest row of `centroids` to `x` (lowest index on ties).
template <class Vec>
Code nearest_centroid(const RowMatrix& centroids, const Vec& x, double* best_dist = nullptr) {
  Code best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
    const double d = (centroids.row(j) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<Code>(j);
    }
  }
  if (best_dist) *best_dist = best_d;
  return best;
}

/// Lloyd's algorithm with k-means++ seeding. Rows of `points` are samples.
/// With fewer distinct points than K, the distinct points become the centroids
/// and the spare rows repeat the first one (never selected: ties go to the lower index).
inline KMeansResult kmeans(const RowMatrix& points, int K, int iters, Rng& rng) {
  const Eigen::Index n = points.rows(), dim = points.cols();
  DDSR_REQUIRE(n >= 1 && K >= 1, ConfigError, "kmeans needs points and K >= 1");
  KMeansResult r;
  r.centroids.resize(K, dim);

  std::vector<Eigen::Index> distinct;
  for (Eigen::Index i = 0; i < n && static_cast<int>(distinct.size()) <= K; ++i) {
    bool dup = false;
    for (Eigen::Index j : distinct)
      if (points.row(i) == points.row(j)) {
        dup = true;
        break;
      }
    if (!dup) distinct.push_back(i);
  }
  if (static_cast<int>(distinct.size()) <= K) {
    r.effective_k = static_cast<int>(distinct.size());
    for (int j = 0; j < K; ++j)
      r.centroids.row(j) = points.row(distinct[static_cast<std::size_t>(j < r.effective_k ? j : 0)]);
  } else {
    r.effective_k = K;
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    r.centroids.row(0) = points.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n))));
    for (int c = 1; c < K; ++c) {
      for (Eigen::Index i = 0; i < n; ++i)
        d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (points.row(i) - r.centroids.row(c - 1)).squaredNorm());
      r.centroids.row(c) = points.row(static_cast<Eigen::Index>(sample_categorical(d2, rng)));
    }
  }

  r.assignment.assign(static_cast<std::size_t>(n), 0);
  auto assign = [&] {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double d = 0.0;
      r.assignment[static_cast<std::size_t>(i)] = nearest_centroid(r.centroids, points.row(i), &d);
      total += d;
    }
    r.distortion.push_back(total / static_cast<double>(n));
  };

  for (int it = 0; it < iters; ++it) {
    assign();
    RowMatrix sums = RowMatrix::Zero(K, dim);
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Code c = r.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < K; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0) r.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
  }
  assign();
  return r;
}

// ---------------------------------------------------------------------------
// Product quantization

struct TokenizerResult {
  Codebook codebook;
  CodeMap code_map;
};

/// Splits each embedding into m contiguous sub-vectors and fits one k-means codebook per position.
inline TokenizerResult fit_pq(const EmbeddingTable& embeddings, const TokenizerConfig& cfg) {
  cfg.validate();
  DDSR_REQUIRE(cfg.method == TokenizerMethod::pq, ConfigError, "fit_pq needs method = pq");
  DDSR_REQUIRE(embeddings.size() >= 1, DataError, "no embeddings to quantize");
  DDSR_REQUIRE(embeddings.dim() % cfg.m == 0, ConfigError,
               "embedding dimension " + std::to_string(embeddings.dim()) + " is not divisible by m=" + std::to_string(cfg.m));
  const int sub = embeddings.dim() / cfg.m;
  const auto n = static_cast<Eigen::Index>(embeddings.size());

  TokenizerResult out;
  Codebook& cb = out.codebook;
  cb.method = TokenizerMethod::pq;
  cb.m = cfg.m;
  cb.K = cfg.K;
  cb.iterations = cfg.kmeans_iters;
  std::vector<SemanticId> codes(embeddings.size(), SemanticId(static_cast<std::size_t>(cfg.m)));
  double total = 0.0;
  for (int p = 0; p < cfg.m; ++p) {
    const RowMatrix block = embeddings.vectors.middleCols(p * sub, sub);
    Rng rng(derive_seed(cfg.seed, 0x9f, p));
    KMeansResult km = kmeans(block, cfg.K, cfg.kmeans_iters, rng);
    if (km.effective_k < cfg.K)
      logger().warn("pq position {}: only {} distinct sub-vectors, effective K shrinks from {}", p, km.effective_k, cfg.K);
    for (Eigen::Index i = 0; i < n; ++i) codes[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)] = km.assignment[static_cast<std::size_t>(i)];
    total += km.distortion.back();
    cb.effective_k.push_back(km.effective_k);
    cb.distortion.push_back(std::move(km.distortion));
    cb.centroids.push_back(std::move(km.centroids));
  }
  cb.final_distortion = total / cfg.m;
  out.code_map = CodeMap(cfg.m, cfg.K, std::move(codes));
  return out;
}

/// Encodes embeddings against an existing PQ codebook (per-position argmin).
inline std::vector<SemanticId> pq_encode(const Codebook& cb, const EmbeddingTable& embeddings) {
  const int sub = static_cast<int>(cb.centroids.at(0).cols());
  std::vector<SemanticId> codes(embeddings.size(), SemanticId(static_cast<std::size_t>(cb.m)));
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    for (int p = 0; p < cb.m; ++p)
      codes[i][static_cast<std::size_t>(p)] =
          nearest_centroid(cb.centroids[static_cast<std::size_t>(p)],
                           embeddings.vectors.row(static_cast<Eigen::Index>(i)).segment(p * sub, sub));
  return codes;
}

/// Each code position drawn independently and uniformly from [0, K).
inline TokenizerResult random_codes(std::size_t num_items, const TokenizerConfig& cfg) {
  cfg.validate();
  DDSR_REQUIRE(cfg.method == TokenizerMethod::random, ConfigError, "random_codes needs method = random");
  Rng rng(derive_seed(cfg.seed, 0x7a));
  std::vector<SemanticId> codes(num_items, SemanticId(static_cast<std::size_t>(cfg.m)));
  for (auto& id : codes)
    for (Code& c : id) c = static_cast<Code>(uniform_index(rng, static_cast<std::uint64_t>(cfg.K)));
  TokenizerResult out;
  out.codebook.method = TokenizerMethod::random;
  out.codebook.m = cfg.m;
  out.codebook.K = cfg.K;
  out.code_map = CodeMap(cfg.m, cfg.K, std::move(codes));
  return out;
}

// ---------------------------------------------------------------------------
// Resolution of semantic IDs to items

/// Distance between two semantic IDs: summed per-position centroid Euclidean distance,
/// or the number of differing positions when the codebook has no centroids.
inline double code_distance(const Codebook& cb, const SemanticId& a, const SemanticId& b) {
  double d = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    if (a[p] == b[p]) continue;
    if (!cb.has_centroids()) {
      d += 1.0;
    } else {
      const auto& c = cb.centroids[p];
      d += (c.row(a[p]) - c.row(b[p])).norm();
    }
  }
  return d;
}

/// Exact match goes to the most popular carrier of the ID (lower index on ties);
/// otherwise the item whose ID is closest under code_distance (lower index on ties).
class ItemResolver {
 public:
  ItemResolver(const CodeMap& code_map, const Codebook& codebook, std::vector<std::int64_t> popularity)
      : code_map_(&code_map), codebook_(&codebook), popularity_(std::move(popularity)) {
    DDSR_REQUIRE(code_map.size() > 0, DataError, "cannot resolve items against an empty catalog");
    DDSR_REQUIRE(popularity_.size() == code_map.size(), ConfigError, "popularity size does not match the code map");
  }

  ItemIndex resolve(const SemanticId& query) const {
    DDSR_REQUIRE(static_cast<int>(query.size()) == code_map_->m(), ConfigError, "query has wrong length");
    for (Code c : query) DDSR_REQUIRE(c >= 0 && c < code_map_->K(), ConfigError, "query code out of range");
    const auto& exact = code_map_->items_with(query);
    if (!exact.empty()) {
      ItemIndex best = exact.front();
      for (ItemIndex i : exact)
        if (popularity(i) > popularity(best) || (popularity(i) == popularity(best) && i < best)) best = i;
      return best;
    }
    ItemIndex best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < code_map_->size(); ++i) {
      const double d = code_distance(*codebook_, query, code_map_->code(static_cast<ItemIndex>(i)));
      if (d < best_d) {
        best_d = d;
        best = static_cast<ItemIndex>(i);
      }
    }
    return best;
  }

  std::int64_t popularity(ItemIndex i) const { return popularity_[static_cast<std::size_t>(i)]; }

 private:
  const CodeMap* code_map_;
  const Codebook* codebook_;
  std::vector<std::int64_t> popularity_;
};

inline ItemIndex resolve_item(const SemanticId& query, const CodeMap& code_map, const Codebook& codebook,
                              const std::vector<std::int64_t>& popularity) {
  return ItemResolver(code_map, codebook, popularity).resolve(query);
}

// ---------------------------------------------------------------------------
// Codebook artifact (codebook.json)

inline nlohmann::json codebook_to_json(const Codebook& cb, const CodeMap& cm, const std::vector<std::string>& item_ids) {
  nlohmann::json j;
  j["method"] = to_string(cb.method);
  j["m"] = cb.m;
  j["K"] = cb.K;
  nlohmann::json cents = nlohmann::json::array();
  for (const auto& c : cb.centroids) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < c.rows(); ++r) rows.push_back(std::vector<double>(c.row(r).begin(), c.row(r).end()));
    cents.push_back(rows);
  }
  j["centroids"] = cents;
  nlohmann::json codes = nlohmann::json::object();
  for (std::size_t i = 0; i < cm.size(); ++i) codes[item_ids.at(i)] = cm.code(static_cast<ItemIndex>(i));
  j["codes"] = codes;
  nlohmann::json coll = nlohmann::json::array();
  for (const auto& group : cm.collisions()) {
    nlohmann::json g = nlohmann::json::array();
    for (ItemIndex i : group) g.push_back(item_ids.at(static_cast<std::size_t>(i)));
    coll.push_back(g);
  }
  j["collisions"] = coll;
  j["metadata"] = {{"effective_k", cb.effective_k},
                   {"iterations", cb.iterations},
                   {"final_distortion", cb.final_distortion},
                   {"distinct_ids", cm.distinct_ids()}};
  return j;
}

inline TokenizerResult codebook_from_json(const nlohmann::json& j, const Catalog& catalog) {
  TokenizerResult out;
  Codebook& cb = out.codebook;
  cb.method = parse_tokenizer_method(j.at("method").get<std::string>());
  cb.m = j.at("m").get<int>();
  cb.K = j.at("K").get<int>();
  for (const auto& pos : j.at("centroids")) {
    const auto rows = pos.get<std::vector<std::vector<double>>>();
    RowMatrix c(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t k = 0; k < rows[r].size(); ++k) c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
    cb.centroids.push_back(std::move(c));
  }
  if (j.contains("metadata")) {
    const auto& meta = j["metadata"];
    if (meta.contains("effective_k")) cb.effective_k = meta["effective_k"].get<std::vector<int>>();
    if (meta.contains("iterations")) cb.iterations = meta["iterations"].get<int>();
    if (meta.contains("final_distortion")) cb.final_distortion = meta["final_distortion"].get<double>();
  }
  std::vector<SemanticId> codes(catalog.size());
  std::vector<bool> seen(catalog.size(), false);
  for (const auto& [id, code] : j.at("codes").items()) {
    const ItemIndex idx = catalog.index(id);
    if (idx == kNoItem) continue;
    codes[static_cast<std::size_t>(idx)] = code.get<SemanticId>();
    seen[static_cast<std::size_t>(idx)] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw DataError("codebook has no semantic ID for item " + catalog.ids()[i]);
  out.code_map = CodeMap(cb.m, cb.K, std::move(codes));
  return out;
}

}  // namespace ddsr
