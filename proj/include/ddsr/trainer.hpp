#pragma once

// Training loop: per example sample t in [0, T], corrupt the history codes, predict
// the clean next-item codes, Adam update; early stopping on validation NDCG@10.

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddsr/approximator.hpp"
#include "ddsr/corpus.hpp"
#include "ddsr/diffusion.hpp"
#include "ddsr/evaluator.hpp"
#include "ddsr/inferencer.hpp"
#include "ddsr/log.hpp"
#include "ddsr/tokenizer.hpp"

namespace ddsr {

enum class DistanceSource { learned, centroid };

inline std::string to_string(DistanceSource d) { return d == DistanceSource::learned ? "learned" : "centroid"; }

inline DistanceSource parse_distance_source(const std::string& s) {
  if (s == "learned") return DistanceSource::learned;
  if (s == "centroid") return DistanceSource::centroid;
  throw ConfigError("unknown distance source '" + s + "' (expected learned or centroid)");
}

struct TrainConfig {
  int batch_size = 128;
  double lr = 1e-3;
  int max_epochs = 50;
  int patience = 10;
  int refresh_period = 1;
  int valid_users = 0;  // 0 evaluates every validation user
  double clip_norm = 5.0;
  DistanceSource distances = DistanceSource::learned;
  std::uint64_t seed = 0;

  void validate() const {
    DDSR_REQUIRE(batch_size >= 1, ConfigError, "train.batch_size must be >= 1");
    DDSR_REQUIRE(lr > 0.0, ConfigError, "train.lr must be > 0");
    DDSR_REQUIRE(max_epochs >= 0, ConfigError, "train.max_epochs must be >= 0");
    DDSR_REQUIRE(patience >= 1, ConfigError, "train.patience must be >= 1");
    DDSR_REQUIRE(refresh_period >= 1, ConfigError, "train.refresh_period must be >= 1");
    DDSR_REQUIRE(valid_users >= 0, ConfigError, "train.valid_users must be >= 0");
  }
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double valid_ndcg10 = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 when no epoch improved on the initial model
  double best_valid_ndcg10 = -1.0;
  bool halted_non_finite = false;
  bool early_stopped = false;
};

/// One training pair: clean input blocks and the clean codes of each following item.
struct TrainingExample {
  CodeSequence input;
  std::vector<Code> targets;  // aligned with input tokens
};

/// Examples from each user's training prefix: blocks 0..L-2 predict blocks 1..L-1.
/// Prefixes longer than max_items + 1 keep their most recent items.
inline std::vector<TrainingExample> training_examples(const SplitDataset& data, const CodeMap& code_map, int max_items) {
  std::vector<TrainingExample> out;
  for (const auto& user : data.users) {
    const auto& items = user.train;
    if (items.size() < 2) continue;
    const std::size_t keep = std::min(items.size(), static_cast<std::size_t>(max_items) + 1);
    const std::span<const ItemIndex> window(items.data() + (items.size() - keep), keep);
    TrainingExample ex;
    ex.input = history_codes(window.first(keep - 1), code_map);
    const auto tgt = history_codes(window.subspan(1), code_map);
    ex.targets = tgt.codes;
    out.push_back(std::move(ex));
  }
  return out;
}

/// Squared distances between code embeddings for the importance kernel.
template <class S>
std::vector<Eigen::MatrixXd> importance_distances(const Approximator<S>& model, const Codebook& codebook,
                                                  DistanceSource source, bool shared) {
  std::vector<Eigen::MatrixXd> out;
  const int m = model.config().m;
  if (source == DistanceSource::centroid) {
    DDSR_REQUIRE(codebook.has_centroids(), ConfigError, "centroid distances need a codebook with centroids");
    for (int p = 0; p < m; ++p) out.push_back(pairwise_sq_distances(codebook.centroids[static_cast<std::size_t>(p)]));
    if (shared) {
      Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(out[0].rows(), out[0].cols());
      for (const auto& d : out) mean += d;
      out = {mean / m};
    }
  } else if (shared) {
    out.push_back(pairwise_sq_distances(model.pooled_code_embeddings()));
  } else {
    for (int p = 0; p < m; ++p) out.push_back(pairwise_sq_distances(model.code_embeddings(p)));
  }
  for (const auto& d : out) DDSR_REQUIRE(d.allFinite(), NumericError, "non-finite code embedding distances");
  return out;
}

template <class S>
void refresh_importance(const Approximator<S>& model, const Codebook& codebook, TransitionModel& tm,
                        DistanceSource source, bool shared) {
  DDSR_REQUIRE(tm.kind() == TransitionKind::importance, ConfigError, "refresh applies to importance transitions");
  tm.refresh(importance_distances(model, codebook, source, shared));
}

/// Deterministic subset of `count` user indices (all users when count is 0 or too large).
inline std::vector<std::size_t> sample_users(std::size_t total, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  if (count == 0 || count >= total) return idx;
  Rng rng(derive_seed(seed, 0x7a1));
  shuffle(idx, rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct TrainInputs {
  const SplitDataset* dataset = nullptr;
  const CodeMap* code_map = nullptr;
  const Codebook* codebook = nullptr;
  const std::vector<std::int64_t>* popularity = nullptr;
  const PopularityBuckets* buckets = nullptr;
};

/// Trains `model` in place and leaves it holding the best-validation parameters.
/// `tm` is refreshed in place in importance mode. One JSON line per epoch goes to `log`.
template <class S>
TrainResult fit(const TrainInputs& in, TransitionModel& tm, Approximator<S>& model, const TrainConfig& cfg,
                const InferenceConfig& infer_cfg, bool shared_matrix = true, std::ostream* log = nullptr) {
  cfg.validate();
  DDSR_REQUIRE(in.dataset && in.code_map && in.codebook && in.popularity && in.buckets, ConfigError,
               "incomplete training inputs");
  const auto& mc = model.config();
  DDSR_REQUIRE(mc.m == in.code_map->m() && mc.K == in.code_map->K(), ConfigError,
               "model and tokenizer disagree on m or K");
  DDSR_REQUIRE(tm.T() == 0 || tm.K() == mc.K, ConfigError, "model and diffusion disagree on K");

  const auto examples = training_examples(*in.dataset, *in.code_map, mc.max_items);
  if (examples.empty()) throw DataError("empty training set: no user has a training prefix of two or more items");

  const bool importance = tm.T() > 0 && tm.kind() == TransitionKind::importance;
  if (importance) refresh_importance(model, *in.codebook, tm, cfg.distances, shared_matrix);

  auto params = model.parameters();
  nn::Adam<S> adam(nn::AdamConfig{.lr = cfg.lr});
  EvalContext ectx{in.dataset, in.code_map, in.codebook, in.popularity, in.buckets, &tm};
  const auto valid_subset =
      sample_users(in.dataset->users.size(), static_cast<std::size_t>(cfg.valid_users), cfg.seed);
  const Denoiser denoiser = model_denoiser(model);

  TrainResult result;
  std::vector<nn::Matrix<S>> best;
  auto snapshot = [&]() {
    best.clear();
    for (const auto* p : params) best.push_back(p->value);
  };
  auto restore = [&]() {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  };
  snapshot();
  std::vector<nn::Matrix<S>> last_good = best;

  int stale = 0;
  std::vector<std::size_t> order(examples.size());
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng(derive_seed(cfg.seed, 0x0e, static_cast<std::uint64_t>(epoch)));
    shuffle(order, order_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    bool non_finite = false;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<CodeSequence> inputs;
      std::vector<int> steps;
      std::vector<Code> targets;
      for (std::size_t j = start; j < end; ++j) {
        const auto& ex = examples[order[j]];
        Rng ex_rng(derive_seed(cfg.seed, 0x1f, static_cast<std::uint64_t>(epoch), order[j]));
        const int t = tm.T() == 0 ? 0 : static_cast<int>(uniform_index(ex_rng, static_cast<std::uint64_t>(tm.T()) + 1));
        CodeSequence x = ex.input;
        corrupt_sequence(x, tm, t, ex_rng);
        inputs.push_back(std::move(x));
        steps.push_back(t);
        targets.insert(targets.end(), ex.targets.begin(), ex.targets.end());
      }
      Rng dropout_rng(derive_seed(cfg.seed, 0x2d, static_cast<std::uint64_t>(epoch), start));
      model.zero_grad();
      auto out = model.forward(inputs, steps, &dropout_rng);
      nn::Matrix<S> dlogits;
      const double loss = cross_entropy(out.logits, targets, &dlogits);
      if (!std::isfinite(loss)) {
        non_finite = true;
        break;
      }
      model.backward(dlogits);
      nn::clip_grad_norm<S>(params, cfg.clip_norm);
      adam.step(params);
      loss_sum += loss;
      ++batches;
    }
    bool params_finite = true;
    for (const auto* p : params) params_finite = params_finite && p->value.allFinite();
    if (non_finite || !params_finite) {
      logger().error("non-finite loss in epoch {}; halting with the last good parameters", epoch);
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = last_good[i];
      result.halted_non_finite = true;
      break;
    }
    last_good.clear();
    for (const auto* p : params) last_good.push_back(p->value);

    if (importance && epoch % cfg.refresh_period == 0 && cfg.distances == DistanceSource::learned)
      refresh_importance(model, *in.codebook, tm, cfg.distances, shared_matrix);

    const auto report = evaluate(denoiser, ectx, infer_cfg, SplitKind::valid, &valid_subset);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)),
                    report.overall.ndcg_at(10), cfg.lr};
    result.history.push_back(rec);
    if (log) {
      nlohmann::json j{{"epoch", rec.epoch}, {"loss", rec.loss}, {"valid_ndcg10", rec.valid_ndcg10}, {"lr", rec.lr}};
      *log << j.dump() << '\n';
      log->flush();
    }
    logger().info("epoch {} loss {:.4f} valid ndcg@10 {:.4f}", epoch, rec.loss, rec.valid_ndcg10);

    if (rec.valid_ndcg10 > result.best_valid_ndcg10) {
      result.best_valid_ndcg10 = rec.valid_ndcg10;
      result.best_epoch = epoch;
      snapshot();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (result.best_epoch > 0) {
    restore();
    if (importance && cfg.distances == DistanceSource::learned)
      refresh_importance(model, *in.codebook, tm, cfg.distances, shared_matrix);
  }
  return result;
}

}  // namespace ddsr
