#pragma once

// Leave-one-out evaluation with full-catalog ranking: Recall@K and NDCG@K overall
// and per popularity bucket.

#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddsr/corpus.hpp"
#include "ddsr/diffusion.hpp"
#include "ddsr/inferencer.hpp"
#include "ddsr/tokenizer.hpp"

namespace ddsr {

inline constexpr std::array<int, 2> kCutoffs{10, 50};

inline double recall_at_k(int rank, int k) {
  DDSR_REQUIRE(rank >= 1, ConfigError, "rank must be >= 1");
  return rank <= k ? 1.0 : 0.0;
}

inline double ndcg_at_k(int rank, int k) {
  DDSR_REQUIRE(rank >= 1, ConfigError, "rank must be >= 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

struct MetricSet {
  std::size_t users = 0;
  std::array<double, kCutoffs.size()> recall{};
  std::array<double, kCutoffs.size()> ndcg{};

  double recall_at(int k) const { return recall[index_of(k)]; }
  double ndcg_at(int k) const { return ndcg[index_of(k)]; }

  static std::size_t index_of(int k) {
    for (std::size_t i = 0; i < kCutoffs.size(); ++i)
      if (kCutoffs[i] == k) return i;
    throw ConfigError("unsupported cutoff " + std::to_string(k));
  }
};

/// Means of the per-user metrics over `ranks`.
inline MetricSet aggregate(const std::vector<int>& ranks) {
  MetricSet out;
  out.users = ranks.size();
  if (ranks.empty()) return out;
  for (std::size_t c = 0; c < kCutoffs.size(); ++c) {
    double r = 0.0, n = 0.0;
    for (int rank : ranks) {
      r += recall_at_k(rank, kCutoffs[c]);
      n += ndcg_at_k(rank, kCutoffs[c]);
    }
    out.recall[c] = r / static_cast<double>(ranks.size());
    out.ndcg[c] = n / static_cast<double>(ranks.size());
  }
  return out;
}

struct MetricsReport {
  std::string split;
  MetricSet overall;
  MetricSet long_tail;
  MetricSet popular;
  std::int64_t bucket_threshold = 1;
  std::size_t skipped = 0;
  std::string fingerprint;
  std::vector<int> ranks;            // per evaluated user, in dataset order
  std::vector<ItemIndex> resolved;   // argmax item of the last block, per evaluated user

  nlohmann::json to_json() const {
    auto set = [](const MetricSet& s) {
      nlohmann::json j;
      j["users"] = s.users;
      for (std::size_t c = 0; c < kCutoffs.size(); ++c) {
        j["recall@" + std::to_string(kCutoffs[c])] = s.recall[c];
        j["ndcg@" + std::to_string(kCutoffs[c])] = s.ndcg[c];
      }
      return j;
    };
    nlohmann::json j;
    j["split"] = split;
    j["overall"] = set(overall);
    j["buckets"] = {{"long_tail", set(long_tail)}, {"popular", set(popular)}, {"threshold", bucket_threshold}};
    j["users"] = overall.users;
    j["skipped_users"] = skipped;
    j["config_fingerprint"] = fingerprint;
    return j;
  }
};

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// Markdown table with R@10, N@10, R@50, N@50 columns; one row per (label, metrics).
inline std::string markdown_table(const std::vector<std::pair<std::string, MetricSet>>& rows) {
  std::ostringstream out;
  out << "| Variant | Users | R@10 | N@10 | R@50 | N@50 |\n";
  out << "|---|---:|---:|---:|---:|---:|\n";
  for (const auto& [label, s] : rows)
    out << "| " << label << " | " << s.users << " | " << format_metric(s.recall_at(10)) << " | "
        << format_metric(s.ndcg_at(10)) << " | " << format_metric(s.recall_at(50)) << " | "
        << format_metric(s.ndcg_at(50)) << " |\n";
  return out.str();
}

inline std::string markdown_report(const MetricsReport& r) {
  std::string s = "Split: " + r.split + " (skipped users: " + std::to_string(r.skipped) + ")\n\n";
  s += markdown_table({{"overall", r.overall},
                       {"long-tail (< " + std::to_string(r.bucket_threshold) + ")", r.long_tail},
                       {"popular", r.popular}});
  return s;
}

/// Everything evaluate() needs besides the model itself.
struct EvalContext {
  const SplitDataset* dataset = nullptr;
  const CodeMap* code_map = nullptr;
  const Codebook* codebook = nullptr;
  const std::vector<std::int64_t>* popularity = nullptr;
  const PopularityBuckets* buckets = nullptr;
  const TransitionModel* transition = nullptr;
};

/// Evaluates users of `split`. Users whose target (or any input item) is absent from
/// the catalog are skipped and counted. `user_subset` restricts to given dataset indices.
inline MetricsReport evaluate(const Denoiser& denoiser, const EvalContext& ctx, const InferenceConfig& cfg,
                              SplitKind split, const std::vector<std::size_t>* user_subset = nullptr) {
  DDSR_REQUIRE(ctx.dataset && ctx.code_map && ctx.codebook && ctx.popularity && ctx.buckets && ctx.transition,
               ConfigError, "incomplete evaluation context");
  const auto& users = ctx.dataset->users;
  const auto n_items = static_cast<ItemIndex>(ctx.code_map->size());
  auto valid_item = [&](ItemIndex i) { return i >= 0 && i < n_items; };

  std::vector<std::size_t> order;
  if (user_subset) {
    order = *user_subset;
  } else {
    order.resize(users.size());
    for (std::size_t i = 0; i < users.size(); ++i) order[i] = i;
  }

  MetricsReport report;
  report.split = split == SplitKind::valid ? "valid" : "test";
  report.bucket_threshold = ctx.buckets->threshold;
  std::vector<int> tail_ranks, pop_ranks;

  std::vector<CodeSequence> histories;
  std::vector<std::size_t> keys;
  std::vector<ItemIndex> targets;
  auto flush = [&]() {
    if (histories.empty()) return;
    const auto res = denoise_batch(histories, keys, denoiser, *ctx.transition, cfg);
    for (std::size_t b = 0; b < histories.size(); ++b) {
      const auto scores = score_items(res.last_block[b], *ctx.code_map, *ctx.codebook, cfg.ranking);
      const int rank = rank_of(targets[b], scores, *ctx.popularity);
      report.ranks.push_back(rank);
      report.resolved.push_back(resolve_last_block(res.last_block[b], *ctx.code_map, *ctx.codebook, *ctx.popularity));
      (ctx.buckets->is_long_tail[static_cast<std::size_t>(targets[b])] ? tail_ranks : pop_ranks).push_back(rank);
    }
    histories.clear();
    keys.clear();
    targets.clear();
  };

  for (std::size_t u : order) {
    const auto& user = users.at(u);
    const ItemIndex target = split == SplitKind::valid ? user.valid_target : user.test_target;
    std::vector<ItemIndex> input = split == SplitKind::valid ? user.valid_input() : user.test_input();
    bool ok = valid_item(target) && !input.empty();
    for (ItemIndex i : input) ok = ok && valid_item(i);
    if (!ok) {
      ++report.skipped;
      continue;
    }
    histories.push_back(history_codes(input, *ctx.code_map));
    keys.push_back(u);
    targets.push_back(target);
    if (static_cast<int>(histories.size()) >= cfg.batch_size) flush();
  }
  flush();

  report.overall = aggregate(report.ranks);
  report.long_tail = aggregate(tail_ranks);
  report.popular = aggregate(pop_ranks);
  return report;
}

}  // namespace ddsr
