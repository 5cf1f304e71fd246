#pragma once

// Reverse refinement that starts from the observed history codes, plus
// full-catalog ranking of items from the last block's code distributions.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ddsr/approximator.hpp"
#include "ddsr/common.hpp"
#include "ddsr/diffusion.hpp"
#include "ddsr/random.hpp"
#include "ddsr/tokenizer.hpp"

namespace ddsr {

enum class RankingMode { logprob, nearest };

inline std::string to_string(RankingMode r) { return r == RankingMode::logprob ? "logprob" : "nearest"; }

inline RankingMode parse_ranking_mode(const std::string& s) {
  if (s == "logprob") return RankingMode::logprob;
  if (s == "nearest") return RankingMode::nearest;
  throw ConfigError("unknown ranking mode '" + s + "' (expected logprob or nearest)");
}

/// How model outputs feed the reverse kernel. shift: block i's output (a prediction of
/// item i+1) is block i's x0 estimate. anchored: every history block's x0 is its observed
/// code, and the model is consulted for the final ranking only.
enum class Alignment { shift, anchored };

inline std::string to_string(Alignment a) { return a == Alignment::shift ? "shift" : "anchored"; }

inline Alignment parse_alignment(const std::string& s) {
  if (s == "shift") return Alignment::shift;
  if (s == "anchored") return Alignment::anchored;
  throw ConfigError("unknown alignment '" + s + "' (expected shift or anchored)");
}

struct InferenceConfig {
  int skip_divisor = 20;  // S: stride k = floor(T / S)
  std::uint64_t seed = 0;
  RankingMode ranking = RankingMode::logprob;
  Alignment alignment = Alignment::anchored;
  int start_step = 0;  // step the chain starts from; 0 means T
  int batch_size = 256;

  /// Start step actually used for a schedule of length T.
  int effective_start(int T) const { return start_step > 0 ? std::min(start_step, T) : T; }

  void validate(int T) const {
    DDSR_REQUIRE(start_step >= 0, ConfigError, "infer.start_step must be >= 0");
    DDSR_REQUIRE(batch_size >= 1, ConfigError, "infer.batch_size must be >= 1");
    const int start = effective_start(T);
    if (start == 0) return;
    DDSR_REQUIRE(skip_divisor >= 1 && skip_divisor <= start, ConfigError,
                 "infer.skip_divisor must satisfy 1 <= S <= " + std::to_string(start));
  }
};

/// Per-token x0 distributions for a batch: one (tokens x K) matrix per sequence,
/// row (block i, slot p) holding the estimate for block i.
struct DenoiseRequest {
  std::span<const CodeSequence> sequences;
  std::span<const int> steps;
  std::span<const std::size_t> keys;  // caller-supplied identity of each sequence
};
using Denoiser = std::function<std::vector<Eigen::MatrixXd>(const DenoiseRequest&)>;

/// Wraps an approximator. Blocks dropped by truncation get a point mass on their current code.
template <class S>
Denoiser model_denoiser(const Approximator<S>& model) {
  return [&model](const DenoiseRequest& req) {
    auto out = model.predict(req.sequences, req.steps);
    const Eigen::MatrixXd probs = softmax_rows(out.logits);
    const int m = model.config().m, K = model.config().K;
    std::vector<Eigen::MatrixXd> result;
    result.reserve(req.sequences.size());
    for (std::size_t s = 0; s < req.sequences.size(); ++s) {
      const auto& seq = req.sequences[s];
      Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(seq.codes.size()), K);
      const int dropped = out.first_block[s] * m;
      for (int r = 0; r < dropped; ++r) p(r, seq.codes[static_cast<std::size_t>(r)]) = 1.0;
      p.bottomRows(p.rows() - dropped) = probs.middleRows(out.offsets[s], out.offsets[s + 1] - out.offsets[s]);
      result.push_back(std::move(p));
    }
    return result;
  };
}

struct DenoiseResult {
  std::vector<CodeSequence> sequences;  // x at the end of the chain
  std::vector<Eigen::MatrixXd> last_block;  // per sequence: m x K from the final forward pass
  int steps_executed = 0;
  int stride = 0;
};

/// Number of reverse moves and the stride for start step `start` and divisor S.
inline std::pair<int, int> reverse_plan(int start, int S) {
  if (start == 0) return {0, 0};
  const int k = std::max(1, start / S);
  return {start / k, k};
}

/// Runs the reverse chain on a batch of histories. Sequence b draws its randomness
/// from a stream seeded by (cfg.seed, keys[b]). The inputs are never modified.
inline DenoiseResult denoise_batch(std::span<const CodeSequence> histories, std::span<const std::size_t> keys,
                                   const Denoiser& denoiser, const TransitionModel& tm, const InferenceConfig& cfg) {
  DDSR_REQUIRE(histories.size() == keys.size(), ConfigError, "one key per history required");
  cfg.validate(tm.T());
  for (const auto& h : histories) DDSR_REQUIRE(h.blocks() >= 1, DataError, "cannot denoise an empty history");

  DenoiseResult res;
  res.sequences.assign(histories.begin(), histories.end());
  const int start = cfg.effective_start(tm.T());
  const auto [steps, k] = reverse_plan(start, cfg.skip_divisor);
  res.steps_executed = steps;
  res.stride = k;

  std::vector<Rng> rngs;
  rngs.reserve(histories.size());
  for (std::size_t key : keys) rngs.emplace_back(derive_seed(cfg.seed, key));

  auto capture_last = [&](const std::vector<Eigen::MatrixXd>& probs) {
    res.last_block.clear();
    for (std::size_t b = 0; b < probs.size(); ++b) {
      const int m = res.sequences[b].m;
      DDSR_REQUIRE(probs[b].cols() == tm.K() || tm.T() == 0, ConfigError, "model and transition disagree on K");
      res.last_block.push_back(probs[b].bottomRows(m));
    }
  };
  auto run_model = [&](int t) {
    std::vector<int> ts(res.sequences.size(), t);
    auto probs = denoiser({res.sequences, ts, keys});
    DDSR_REQUIRE(probs.size() == res.sequences.size(), ConfigError, "denoiser returned the wrong batch size");
    for (std::size_t b = 0; b < probs.size(); ++b)
      DDSR_REQUIRE(static_cast<std::size_t>(probs[b].rows()) == res.sequences[b].codes.size(), ConfigError,
                   "denoiser returned the wrong number of rows");
    return probs;
  };

  if (steps == 0) {
    capture_last(run_model(0));
    return res;
  }
  std::vector<Eigen::MatrixXd> anchors;
  if (cfg.alignment == Alignment::anchored) {
    for (const auto& h : histories) {
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(h.codes.size()), tm.K());
      for (std::size_t i = 0; i < h.codes.size(); ++i) a(static_cast<Eigen::Index>(i), h.codes[i]) = 1.0;
      anchors.push_back(std::move(a));
    }
  }
  int t = start;
  std::vector<double> dist(static_cast<std::size_t>(tm.K()));
  for (int s = 0; s < steps; ++s, t -= k) {
    // Anchored chains only need the model at the last move; its output does not steer the chain.
    const bool last = s + 1 == steps;
    std::vector<Eigen::MatrixXd> model_probs;
    if (cfg.alignment == Alignment::shift || last) {
      model_probs = run_model(t);
      capture_last(model_probs);
    }
    const auto& probs = cfg.alignment == Alignment::shift ? model_probs : anchors;
    std::vector<ReverseKernel> kernels;
    for (int slot = 0; slot < tm.slot_count(); ++slot) kernels.emplace_back(tm, t, k, slot);
    for (std::size_t b = 0; b < res.sequences.size(); ++b) {
      auto& seq = res.sequences[b];
      for (std::size_t i = 0; i < seq.codes.size(); ++i) {
        const auto& kernel = kernels[kernels.size() == 1 ? 0 : (i % static_cast<std::size_t>(seq.m)) % kernels.size()];
        kernel.distribution(seq.codes[i], probs[b].row(static_cast<Eigen::Index>(i)), dist);
        seq.codes[i] = static_cast<Code>(sample_categorical(dist, rngs[b]));
      }
    }
  }
  return res;
}

/// Single-history convenience form.
inline DenoiseResult denoise_sequence(const CodeSequence& history, const Denoiser& denoiser, const TransitionModel& tm,
                                      const InferenceConfig& cfg, std::size_t key = 0) {
  return denoise_batch(std::span<const CodeSequence>(&history, 1), std::span<const std::size_t>(&key, 1), denoiser,
                       tm, cfg);
}

inline CodeSequence history_codes(std::span<const ItemIndex> items, const CodeMap& code_map) {
  CodeSequence seq{code_map.m(), {}};
  seq.codes.reserve(items.size() * static_cast<std::size_t>(code_map.m()));
  for (ItemIndex i : items) {
    const auto& c = code_map.code(i);
    seq.codes.insert(seq.codes.end(), c.begin(), c.end());
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Ranking

struct RankedList {
  std::vector<ItemIndex> items;  // best first
  std::vector<double> scores;    // aligned with items
  int target_rank = 0;           // 1-based; 0 when no target was supplied
};

/// Per-item scores from m per-slot distributions (an m x K matrix).
inline std::vector<double> score_items(const Eigen::MatrixXd& dists, const CodeMap& code_map, const Codebook& codebook,
                                       RankingMode mode) {
  const int m = code_map.m(), K = code_map.K();
  DDSR_REQUIRE(dists.rows() == m && dists.cols() == K, ConfigError, "expected m distributions over K codes");
  std::vector<double> scores(code_map.size());
  if (mode == RankingMode::logprob) {
    const Eigen::MatrixXd logp = (dists.array() + 1e-12).log().matrix();
    for (std::size_t v = 0; v < code_map.size(); ++v) {
      const auto& c = code_map.code(static_cast<ItemIndex>(v));
      double s = 0.0;
      for (int p = 0; p < m; ++p) s += logp(p, c[static_cast<std::size_t>(p)]);
      scores[v] = s;
    }
  } else {
    SemanticId query(static_cast<std::size_t>(m));
    for (int p = 0; p < m; ++p) {
      Eigen::Index j;
      dists.row(p).maxCoeff(&j);
      query[static_cast<std::size_t>(p)] = static_cast<Code>(j);
    }
    for (std::size_t v = 0; v < code_map.size(); ++v)
      scores[v] = -code_distance(codebook, query, code_map.code(static_cast<ItemIndex>(v)));
  }
  return scores;
}

/// True when item a ranks ahead of item b: higher score, then more popular, then lower index.
inline bool ranks_before(ItemIndex a, ItemIndex b, const std::vector<double>& scores,
                         const std::vector<std::int64_t>& popularity) {
  const auto ia = static_cast<std::size_t>(a), ib = static_cast<std::size_t>(b);
  if (scores[ia] != scores[ib]) return scores[ia] > scores[ib];
  if (popularity[ia] != popularity[ib]) return popularity[ia] > popularity[ib];
  return a < b;
}

/// 1-based position of `target` in the full ranking without sorting.
inline int rank_of(ItemIndex target, const std::vector<double>& scores, const std::vector<std::int64_t>& popularity) {
  DDSR_REQUIRE(target >= 0 && static_cast<std::size_t>(target) < scores.size(), ConfigError, "target out of range");
  int ahead = 0;
  for (std::size_t v = 0; v < scores.size(); ++v)
    if (ranks_before(static_cast<ItemIndex>(v), target, scores, popularity)) ++ahead;
  return ahead + 1;
}

inline RankedList rank_items(const Eigen::MatrixXd& dists, const CodeMap& code_map, const Codebook& codebook,
                             const std::vector<std::int64_t>& popularity, RankingMode mode, ItemIndex target = kNoItem) {
  DDSR_REQUIRE(popularity.size() == code_map.size(), ConfigError, "popularity size does not match the code map");
  const auto scores = score_items(dists, code_map, codebook, mode);
  RankedList out;
  out.items.resize(scores.size());
  for (std::size_t v = 0; v < scores.size(); ++v) out.items[v] = static_cast<ItemIndex>(v);
  std::sort(out.items.begin(), out.items.end(),
            [&](ItemIndex a, ItemIndex b) { return ranks_before(a, b, scores, popularity); });
  out.scores.reserve(scores.size());
  for (ItemIndex v : out.items) out.scores.push_back(scores[static_cast<std::size_t>(v)]);
  if (target != kNoItem) out.target_rank = rank_of(target, scores, popularity);
  return out;
}

/// Argmax codes of the last block resolved to a catalog item.
inline ItemIndex resolve_last_block(const Eigen::MatrixXd& dists, const CodeMap& code_map, const Codebook& codebook,
                                    const std::vector<std::int64_t>& popularity) {
  SemanticId query(static_cast<std::size_t>(dists.rows()));
  for (Eigen::Index p = 0; p < dists.rows(); ++p) {
    Eigen::Index j;
    dists.row(p).maxCoeff(&j);
    query[static_cast<std::size_t>(p)] = static_cast<Code>(j);
  }
  return resolve_item(query, code_map, codebook, popularity);
}

}  // namespace ddsr
