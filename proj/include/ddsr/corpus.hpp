#pragma once

// Interaction ingestion, k-core filtering, leave-one-out splits, popularity
// buckets, and the synthetic Markov corpus used for desk-scale runs.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ddsr/common.hpp"
#include "ddsr/embedding.hpp"
#include "ddsr/random.hpp"

namespace ddsr {

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

struct UserSequence {
  std::string user_id;
  std::vector<ItemIndex> items;  // chronological

  std::size_t size() const { return items.size(); }
};

/// Dense item index <-> item id bijection with training popularity and optional text.
class Catalog {
 public:
  ItemIndex add(const std::string& item_id) {
    auto [it, inserted] = index_.try_emplace(item_id, static_cast<ItemIndex>(ids_.size()));
    if (inserted) {
      ids_.push_back(item_id);
      popularity_.push_back(0);
      texts_.emplace_back();
    }
    return it->second;
  }

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  const std::string& id(ItemIndex i) const { return ids_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& ids() const { return ids_; }

  ItemIndex index(const std::string& item_id) const {
    auto it = index_.find(item_id);
    return it == index_.end() ? kNoItem : it->second;
  }

  std::int64_t popularity(ItemIndex i) const { return popularity_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::int64_t>& popularity() const { return popularity_; }
  void set_popularity(std::vector<std::int64_t> counts) {
    DDSR_REQUIRE(counts.size() == ids_.size(), Error, "popularity size mismatch");
    popularity_ = std::move(counts);
  }

  const std::optional<std::string>& text(ItemIndex i) const { return texts_.at(static_cast<std::size_t>(i)); }
  void set_text(ItemIndex i, std::string text) { texts_.at(static_cast<std::size_t>(i)) = std::move(text); }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, ItemIndex> index_;
  std::vector<std::int64_t> popularity_;
  std::vector<std::optional<std::string>> texts_;
};

/// Leave-one-out split of one user: train = items[0, n-2), then valid and test targets.
struct UserSplit {
  std::string user_id;
  std::vector<ItemIndex> train;
  ItemIndex valid_target = kNoItem;
  ItemIndex test_target = kNoItem;

  const std::vector<ItemIndex>& valid_input() const { return train; }
  std::vector<ItemIndex> test_input() const {
    std::vector<ItemIndex> v = train;
    v.push_back(valid_target);
    return v;
  }
  std::vector<ItemIndex> full() const {
    std::vector<ItemIndex> v = test_input();
    v.push_back(test_target);
    return v;
  }
};

struct SplitDataset {
  std::vector<UserSplit> users;
};

enum class SplitKind { valid, test };

struct PopularityBuckets {
  std::int64_t threshold = 1;
  std::vector<ItemIndex> long_tail;
  std::vector<ItemIndex> popular;
  std::vector<bool> is_long_tail;  // indexed by item
};

struct Corpus {
  Catalog catalog;
  std::vector<UserSequence> sequences;
};

namespace detail {

inline std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim_cr(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

/// Truncates to at most `max_chars` UTF-8 code points.
inline std::string truncate_utf8(const std::string& s, std::size_t max_chars) {
  std::size_t chars = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if ((c & 0xC0) != 0x80) {
      if (chars == max_chars) return s.substr(0, i);
      ++chars;
    }
  }
  return s;
}

}  // namespace detail

/// Parses `user_id,item_id,timestamp` CSV rows (header required).
inline std::vector<Interaction> read_interactions(std::istream& in, const std::string& name = "<stream>") {
  std::vector<Interaction> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = detail::trim_cr(line);
    if (view.empty()) continue;
    const auto fields = detail::split_commas(view);
    if (!header_seen) {
      if (fields.size() != 3 || fields[0] != "user_id" || fields[1] != "item_id" || fields[2] != "timestamp")
        throw ParseError(name, line_no, "expected header user_id,item_id,timestamp");
      header_seen = true;
      continue;
    }
    if (fields.size() != 3) throw ParseError(name, line_no, "expected 3 fields, got " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty()) throw ParseError(name, line_no, "empty user or item id");
    std::int64_t ts = 0;
    const auto* end = fields[2].data() + fields[2].size();
    auto [ptr, ec] = std::from_chars(fields[2].data(), end, ts);
    if (ec != std::errc() || ptr != end) throw ParseError(name, line_no, "timestamp is not an integer");
    if (ts < 0) throw ParseError(name, line_no, "negative timestamp");
    rows.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  if (!header_seen) throw ParseError(name, line_no, "missing header");
  return rows;
}

/// Iterative k-core: drops users and items with fewer than `min_count` interactions
/// until nothing changes. Returns the surviving rows in input order.
inline std::vector<Interaction> k_core(const std::vector<Interaction>& rows, int min_count) {
  DDSR_REQUIRE(min_count >= 1, ConfigError, "min_count must be >= 1");
  std::vector<bool> alive(rows.size(), true);
  for (bool changed = true; changed;) {
    changed = false;
    std::unordered_map<std::string_view, int> user_count, item_count;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!alive[r]) continue;
      ++user_count[rows[r].user_id];
      ++item_count[rows[r].item_id];
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (alive[r] && (user_count[rows[r].user_id] < min_count || item_count[rows[r].item_id] < min_count)) {
        alive[r] = false;
        changed = true;
      }
    }
  }
  std::vector<Interaction> out;
  for (std::size_t r = 0; r < rows.size(); ++r)
    if (alive[r]) out.push_back(rows[r]);
  return out;
}

/// Occurrences of each item in the training prefixes (all but the last two items).
inline std::vector<std::int64_t> training_popularity(const std::vector<UserSequence>& sequences,
                                                     std::size_t num_items) {
  std::vector<std::int64_t> counts(num_items, 0);
  for (const auto& seq : sequences) {
    const std::size_t n_train = seq.size() >= 2 ? seq.size() - 2 : 0;
    for (std::size_t j = 0; j < n_train; ++j) ++counts[static_cast<std::size_t>(seq.items[j])];
  }
  return counts;
}

/// Groups filtered rows into per-user chronological sequences (stable on ties).
inline Corpus build_corpus(const std::vector<Interaction>& rows) {
  Corpus corpus;
  std::unordered_map<std::string, std::size_t> user_slot;
  std::vector<std::vector<std::pair<std::int64_t, ItemIndex>>> events;
  for (const auto& row : rows) {
    const ItemIndex item = corpus.catalog.add(row.item_id);
    auto [it, inserted] = user_slot.try_emplace(row.user_id, corpus.sequences.size());
    if (inserted) {
      corpus.sequences.push_back({row.user_id, {}});
      events.emplace_back();
    }
    events[it->second].emplace_back(row.timestamp, item);
  }
  for (std::size_t u = 0; u < events.size(); ++u) {
    auto& ev = events[u];
    std::stable_sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& e : ev) corpus.sequences[u].items.push_back(e.second);
  }
  corpus.catalog.set_popularity(training_popularity(corpus.sequences, corpus.catalog.size()));
  return corpus;
}

inline Corpus load_interactions(std::istream& in, int min_count, const std::string& name = "<stream>") {
  DDSR_REQUIRE(min_count >= 1, ConfigError, "min_count must be >= 1");
  const auto rows = k_core(read_interactions(in, name), min_count);
  if (rows.empty()) throw DataError("no interactions left after filtering with min_count=" + std::to_string(min_count));
  return build_corpus(rows);
}

inline Corpus load_interactions(const std::string& path, int min_count) {
  std::ifstream in(path);
  if (!in) throw DependencyError("interactions file not found: " + path);
  return load_interactions(in, min_count, path);
}

/// Attaches `{"item_id", "text"}` JSON lines to the catalog, truncating to 512 characters.
inline std::size_t load_item_texts(const std::string& path, Catalog& catalog, std::size_t max_chars = 512) {
  std::ifstream in(path);
  if (!in) throw DependencyError("item text file not found: " + path);
  std::string line;
  std::size_t line_no = 0, attached = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim_cr(line).empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, line_no, e.what());
    }
    if (!row.contains("item_id") || !row.contains("text") || !row["text"].is_string())
      throw ParseError(path, line_no, "expected keys item_id and text");
    const ItemIndex idx = catalog.index(row["item_id"].get<std::string>());
    if (idx == kNoItem) continue;
    catalog.set_text(idx, detail::truncate_utf8(row["text"].get<std::string>(), max_chars));
    ++attached;
  }
  return attached;
}

inline SplitDataset make_split(const std::vector<UserSequence>& sequences) {
  SplitDataset split;
  split.users.reserve(sequences.size());
  for (const auto& seq : sequences) {
    const std::size_t n = seq.size();
    if (n < 3)
      throw DataError("user " + seq.user_id + " has " + std::to_string(n) + " interactions; leave-one-out needs 3");
    UserSplit u;
    u.user_id = seq.user_id;
    u.train.assign(seq.items.begin(), seq.items.end() - 2);
    u.valid_target = seq.items[n - 2];
    u.test_target = seq.items[n - 1];
    split.users.push_back(std::move(u));
  }
  return split;
}

inline PopularityBuckets popularity_buckets(const Catalog& catalog, std::int64_t threshold) {
  DDSR_REQUIRE(threshold >= 1, ConfigError, "bucket threshold must be >= 1");
  PopularityBuckets b;
  b.threshold = threshold;
  b.is_long_tail.assign(catalog.size(), false);
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto item = static_cast<ItemIndex>(i);
    if (catalog.popularity(item) < threshold) {
      b.long_tail.push_back(item);
      b.is_long_tail[i] = true;
    } else {
      b.popular.push_back(item);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticConfig {
  int num_items = 1000;
  int num_users = 2000;
  int clusters = 20;
  double markov_sharpness = 0.9;
  std::uint64_t seed = 0;
  int embedding_dim = 32;
  double cluster_spread = 1.0;    // std of cluster centers
  double jitter = 0.15;           // std of per-item offsets
  double popularity_skew = 1.5;   // Zipf exponent of the within-cluster item choice
  int min_length = 6;
  int max_length = 12;
};

struct SyntheticCorpus {
  Corpus corpus;
  EmbeddingTable embeddings;
  std::vector<int> item_cluster;
  std::vector<int> successor;  // cluster -> designated successor cluster
  std::vector<Interaction> interactions;
};

/// Cluster-level Markov corpus: the next item lies in the current cluster's successor
/// with probability `markov_sharpness`, otherwise in a uniformly chosen other cluster.
/// Within a cluster items are drawn with Zipf weights over a random popularity order.
inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
  DDSR_REQUIRE(cfg.clusters >= 1 && cfg.num_items >= cfg.clusters, ConfigError,
               "synthetic corpus needs num_items >= clusters >= 1");
  DDSR_REQUIRE(cfg.num_users >= 1, ConfigError, "synthetic corpus needs num_users >= 1");
  DDSR_REQUIRE(cfg.markov_sharpness > 0.0 && cfg.markov_sharpness <= 1.0, ConfigError,
               "markov_sharpness must lie in (0, 1]");
  DDSR_REQUIRE(cfg.min_length >= 3 && cfg.max_length >= cfg.min_length, ConfigError,
               "synthetic sequence lengths must satisfy 3 <= min_length <= max_length");
  DDSR_REQUIRE(cfg.embedding_dim >= 1, ConfigError, "embedding_dim must be >= 1");

  Rng rng(derive_seed(cfg.seed, 0x5e7));
  SyntheticCorpus out;
  const auto n_items = static_cast<std::size_t>(cfg.num_items);
  const auto n_clusters = static_cast<std::size_t>(cfg.clusters);

  for (int i = 0; i < cfg.num_items; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "item_%05d", i);
    out.corpus.catalog.add(buf);
    out.item_cluster.push_back(i % cfg.clusters);
  }

  RowMatrix centers(static_cast<Eigen::Index>(n_clusters), cfg.embedding_dim);
  for (Eigen::Index c = 0; c < centers.rows(); ++c)
    for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(c, j) = cfg.cluster_spread * standard_normal(rng);
  out.embeddings.vectors.resize(static_cast<Eigen::Index>(n_items), cfg.embedding_dim);
  for (std::size_t i = 0; i < n_items; ++i)
    for (int j = 0; j < cfg.embedding_dim; ++j)
      out.embeddings.vectors(static_cast<Eigen::Index>(i), j) =
          centers(out.item_cluster[i], j) + cfg.jitter * standard_normal(rng);

  std::vector<int> perm(n_clusters);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, rng);
  out.successor.assign(n_clusters, 0);
  for (std::size_t c = 0; c < n_clusters; ++c) out.successor[static_cast<std::size_t>(perm[c])] = perm[(c + 1) % n_clusters];

  std::vector<std::vector<ItemIndex>> members(n_clusters);
  for (std::size_t i = 0; i < n_items; ++i) members[static_cast<std::size_t>(out.item_cluster[i])].push_back(static_cast<ItemIndex>(i));
  std::vector<std::vector<double>> weights(n_clusters);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    shuffle(members[c], rng);
    for (std::size_t r = 0; r < members[c].size(); ++r)
      weights[c].push_back(std::pow(static_cast<double>(r + 1), -cfg.popularity_skew));
  }
  auto draw_item = [&](std::size_t c) { return members[c][sample_categorical(weights[c], rng)]; };

  const int span = cfg.max_length - cfg.min_length + 1;
  for (int u = 0; u < cfg.num_users; ++u) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "user_%05d", u);
    UserSequence seq{buf, {}};
    const int len = cfg.min_length + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span)));
    auto cluster = static_cast<std::size_t>(uniform_index(rng, n_clusters));
    for (int j = 0; j < len; ++j) {
      if (j > 0) {
        const std::size_t succ = static_cast<std::size_t>(out.successor[cluster]);
        if (n_clusters == 1 || uniform01(rng) < cfg.markov_sharpness) {
          cluster = succ;
        } else {
          auto other = static_cast<std::size_t>(uniform_index(rng, n_clusters - 1));
          cluster = other >= succ ? other + 1 : other;
        }
      }
      const ItemIndex item = draw_item(cluster);
      seq.items.push_back(item);
      out.interactions.push_back({seq.user_id, out.corpus.catalog.id(item), 1'000'000LL * u + 60LL * j});
    }
    out.corpus.sequences.push_back(std::move(seq));
  }
  for (std::size_t i = 0; i < n_items; ++i)
    out.corpus.catalog.set_text(static_cast<ItemIndex>(i), "synthetic item " + std::to_string(i) + " from cluster " +
                                                               std::to_string(out.item_cluster[i]));
  out.corpus.catalog.set_popularity(training_popularity(out.corpus.sequences, n_items));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization of a prepared corpus (`dataset.json`).

inline nlohmann::json corpus_to_json(const Corpus& corpus) {
  nlohmann::json j;
  j["items"] = corpus.catalog.ids();
  j["popularity"] = corpus.catalog.popularity();
  nlohmann::json texts = nlohmann::json::object();
  for (std::size_t i = 0; i < corpus.catalog.size(); ++i)
    if (const auto& t = corpus.catalog.text(static_cast<ItemIndex>(i))) texts[corpus.catalog.ids()[i]] = *t;
  j["texts"] = texts;
  nlohmann::json users = nlohmann::json::array();
  for (const auto& s : corpus.sequences) users.push_back({{"user_id", s.user_id}, {"items", s.items}});
  j["users"] = users;
  return j;
}

inline Corpus corpus_from_json(const nlohmann::json& j) {
  Corpus corpus;
  for (const auto& id : j.at("items")) corpus.catalog.add(id.get<std::string>());
  for (const auto& u : j.at("users"))
    corpus.sequences.push_back({u.at("user_id").get<std::string>(), u.at("items").get<std::vector<ItemIndex>>()});
  for (const auto& s : corpus.sequences)
    for (ItemIndex i : s.items)
      if (i < 0 || static_cast<std::size_t>(i) >= corpus.catalog.size()) throw DataError("dataset item index out of range");
  if (j.contains("texts"))
    for (const auto& [id, text] : j["texts"].items())
      if (const ItemIndex idx = corpus.catalog.index(id); idx != kNoItem) corpus.catalog.set_text(idx, text.get<std::string>());
  corpus.catalog.set_popularity(training_popularity(corpus.sequences, corpus.catalog.size()));
  return corpus;
}

}  // namespace ddsr
