#pragma once

// Categorical diffusion over a K-state code space: schedules, one-step and
// cumulative transition matrices (uniform and importance), forward corruption,
// the Bayes posterior, and the k-step parameterized reverse kernel.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ddsr/common.hpp"
#include "ddsr/random.hpp"

namespace ddsr {

enum class TransitionKind { uniform, importance };

inline std::string to_string(TransitionKind k) { return k == TransitionKind::uniform ? "uniform" : "importance"; }

struct DiffusionConfig {
  int T = 1000;
  TransitionKind transition = TransitionKind::uniform;
  double cosine_offset = 0.008;
  double sigma_start = 1e-4;  // multiplied by K
  double sigma_end = 0.02;    // multiplied by K
  bool shared_matrix = true;
  int K = 256;
};

/// Per-step noise parameters, 1-indexed by diffusion step (index 0 is the clean state).
struct Schedule {
  TransitionKind kind = TransitionKind::uniform;
  int K = 2;
  int T = 0;
  std::vector<double> beta;       // uniform: stay probability of Q_t
  std::vector<double> alpha;      // uniform: a_t = (K beta_t - 1) / (K - 1)
  std::vector<double> alpha_bar;  // uniform: prod_{s<=t} a_s, alpha_bar[0] = 1
  std::vector<double> sigma_sq;   // importance: kernel variance of Q_t

  /// Uniform schedule from explicit stay probabilities beta_1..beta_T, each in (1/K, 1].
  static Schedule from_betas(int K, const std::vector<double>& betas) {
    DDSR_REQUIRE(K >= 2, ConfigError, "uniform transitions need K >= 2");
    Schedule s;
    s.kind = TransitionKind::uniform;
    s.K = K;
    s.T = static_cast<int>(betas.size());
    s.beta.assign(1, 1.0);
    s.alpha.assign(1, 1.0);
    s.alpha_bar.assign(1, 1.0);
    for (int t = 1; t <= s.T; ++t) {
      const double b = betas[static_cast<std::size_t>(t - 1)];
      if (!(b > 1.0 / K) || b > 1.0)
        throw ConfigError("beta_" + std::to_string(t) + " = " + std::to_string(b) + " outside (1/K, 1]");
      const double a = (K * b - 1.0) / (K - 1.0);
      s.beta.push_back(b);
      s.alpha.push_back(a);
      s.alpha_bar.push_back(s.alpha_bar.back() * a);
    }
    return s;
  }
};

/// Cosine schedule: f(t) = cos^2(((t/T)+s)/(1+s) * pi/2), alpha_bar_t = f(t)/f(0),
/// per-step a_t = alpha_bar_t / alpha_bar_{t-1} clamped to [1e-6, 1].
inline Schedule build_cosine_schedule(const DiffusionConfig& cfg) {
  DDSR_REQUIRE(cfg.transition == TransitionKind::uniform, ConfigError, "cosine schedule is for uniform transitions");
  DDSR_REQUIRE(cfg.T >= 1, ConfigError, "T must be >= 1");
  DDSR_REQUIRE(cfg.K >= 2, ConfigError, "K must be >= 2");
  const double s = cfg.cosine_offset;
  auto f = [&](int t) {
    const double c = std::cos(((static_cast<double>(t) / cfg.T) + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0);
  std::vector<double> betas;
  double prev = 1.0;
  for (int t = 1; t <= cfg.T; ++t) {
    const double cur = f(t) / f0;
    const double a = std::clamp(prev > 0.0 ? cur / prev : 0.0, 1e-6, 1.0);
    const double b = (a * (cfg.K - 1) + 1.0) / cfg.K;
    if (!(b > 1.0 / cfg.K))
      throw ConfigError("cosine schedule: beta_" + std::to_string(t) + " <= 1/K; K too small for T");
    betas.push_back(b);
    prev = cur;
  }
  return Schedule::from_betas(cfg.K, betas);
}

/// Linear variance schedule: sigma^2_t runs from sigma_start*K to sigma_end*K.
inline Schedule build_sigma_schedule(const DiffusionConfig& cfg) {
  DDSR_REQUIRE(cfg.transition == TransitionKind::importance, ConfigError, "sigma schedule is for importance transitions");
  DDSR_REQUIRE(cfg.T >= 1, ConfigError, "T must be >= 1");
  DDSR_REQUIRE(cfg.sigma_start > 0.0 && cfg.sigma_end > cfg.sigma_start, ConfigError,
               "sigma endpoints must be positive and increasing");
  Schedule s;
  s.kind = TransitionKind::importance;
  s.K = cfg.K;
  s.T = cfg.T;
  s.sigma_sq.assign(1, 0.0);
  for (int t = 1; t <= cfg.T; ++t) {
    const double frac = cfg.T == 1 ? 0.0 : static_cast<double>(t - 1) / (cfg.T - 1);
    s.sigma_sq.push_back((cfg.sigma_start + frac * (cfg.sigma_end - cfg.sigma_start)) * cfg.K);
  }
  return s;
}

inline Schedule build_schedule(const DiffusionConfig& cfg) {
  return cfg.transition == TransitionKind::uniform ? build_cosine_schedule(cfg) : build_sigma_schedule(cfg);
}

/// Q_t with stay probability beta on the diagonal and (1-beta)/(K-1) elsewhere.
inline Eigen::MatrixXd uniform_qt(double beta, int K) {
  DDSR_REQUIRE(K >= 2, ConfigError, "uniform_qt needs K >= 2");
  DDSR_REQUIRE(beta > 0.0 && beta <= 1.0, ConfigError, "beta must lie in (0, 1]");
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(K, K, (1.0 - beta) / (K - 1));
  q.diagonal().setConstant(beta);
  return q;
}

/// Gaussian-kernel transition: off-diagonal exp(-d2_ij / 2 sigma^2) normalized over all k
/// (including k = i), diagonal takes the remaining mass.
inline Eigen::MatrixXd importance_qt(const Eigen::MatrixXd& distances_sq, double sigma_sq) {
  const auto K = distances_sq.rows();
  DDSR_REQUIRE(distances_sq.cols() == K && K >= 1, ConfigError, "distance matrix must be square");
  DDSR_REQUIRE(sigma_sq > 0.0, ConfigError, "sigma^2 must be positive");
  DDSR_REQUIRE(distances_sq.allFinite(), NumericError, "non-finite code distances");
  Eigen::MatrixXd q(K, K);
  for (Eigen::Index i = 0; i < K; ++i) {
    double denom = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double d2 = k == i ? 0.0 : distances_sq(i, k);
      q(i, k) = std::exp(-d2 / (2.0 * sigma_sq));
      denom += q(i, k);
    }
    double off = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      if (k == i) continue;
      q(i, k) /= denom;
      off += q(i, k);
    }
    q(i, i) = 1.0 - off;
    if (q(i, i) < 0.0) throw NumericError("importance transition has a negative diagonal");
  }
  return q;
}

/// Pairwise squared Euclidean distances between the rows of `points`.
inline Eigen::MatrixXd pairwise_sq_distances(const Eigen::MatrixXd& points) {
  const auto n = points.rows();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (points.row(i) - points.row(j)).squaredNorm();
  return d;
}

/// One sequence of item blocks, each holding m code tokens (flattened row-major).
struct CodeSequence {
  int m = 1;
  std::vector<Code> codes;

  int blocks() const { return m == 0 ? 0 : static_cast<int>(codes.size()) / m; }
  Code at(int block, int slot) const { return codes[static_cast<std::size_t>(block * m + slot)]; }
  std::span<const Code> block(int i) const {
    return std::span<const Code>(codes).subspan(static_cast<std::size_t>(i * m), static_cast<std::size_t>(m));
  }
  bool operator==(const CodeSequence&) const = default;
};

/// A batch of code sequences with one diffusion step per sequence.
struct CodeState {
  std::vector<CodeSequence> sequences;
  std::vector<int> steps;
};

/// Q_t and cumulative Q-bar_t for one schedule. Uniform mode is closed form;
/// importance mode caches all prefix products per refresh.
class TransitionModel {
 public:
  TransitionModel() = default;

  static TransitionModel uniform(Schedule schedule) {
    DDSR_REQUIRE(schedule.kind == TransitionKind::uniform, ConfigError, "schedule is not uniform");
    TransitionModel tm;
    tm.schedule_ = std::move(schedule);
    return tm;
  }

  /// `distances_sq` holds one K x K matrix (shared across code slots) or one per slot.
  static TransitionModel importance(Schedule schedule, const std::vector<Eigen::MatrixXd>& distances_sq) {
    DDSR_REQUIRE(schedule.kind == TransitionKind::importance, ConfigError, "schedule is not importance");
    TransitionModel tm;
    tm.schedule_ = std::move(schedule);
    tm.refresh(distances_sq);
    return tm;
  }

  /// Rebuilds every Q_t and prefix product from new code distances.
  void refresh(const std::vector<Eigen::MatrixXd>& distances_sq) {
    DDSR_REQUIRE(kind() == TransitionKind::importance, ConfigError, "refresh applies to importance transitions");
    DDSR_REQUIRE(!distances_sq.empty(), ConfigError, "no distance matrices supplied");
    distances_ = distances_sq;
    steps_.assign(distances_.size(), {});
    prefix_.assign(distances_.size(), {});
    for (std::size_t slot = 0; slot < distances_.size(); ++slot) {
      DDSR_REQUIRE(distances_[slot].rows() == K() && distances_[slot].cols() == K(), ConfigError,
                   "distance matrix must be K x K");
      auto& steps = steps_[slot];
      auto& prefix = prefix_[slot];
      steps.reserve(static_cast<std::size_t>(T()) + 1);
      prefix.reserve(static_cast<std::size_t>(T()) + 1);
      steps.push_back(Eigen::MatrixXd::Identity(K(), K()));
      prefix.push_back(Eigen::MatrixXd::Identity(K(), K()));
      for (int t = 1; t <= T(); ++t) {
        steps.push_back(importance_qt(distances_[slot], schedule_.sigma_sq[static_cast<std::size_t>(t)]));
        prefix.push_back(prefix.back() * steps.back());
      }
    }
  }

  TransitionKind kind() const { return schedule_.kind; }
  int K() const { return schedule_.K; }
  int T() const { return schedule_.T; }
  const Schedule& schedule() const { return schedule_; }
  /// Number of distinct per-slot matrices (1 in shared mode and for uniform transitions).
  int slot_count() const { return kind() == TransitionKind::uniform ? 1 : static_cast<int>(prefix_.size()); }
  const std::vector<Eigen::MatrixXd>& distances() const { return distances_; }

  /// Q_t, for 1 <= t <= T (t = 0 gives the identity).
  Eigen::MatrixXd step(int t, int slot = 0) const {
    check_step(t);
    if (kind() == TransitionKind::uniform) {
      if (t == 0) return Eigen::MatrixXd::Identity(K(), K());
      return uniform_qt(schedule_.beta[static_cast<std::size_t>(t)], K());
    }
    return steps_[slot_index(slot)][static_cast<std::size_t>(t)];
  }

  /// Q-bar_t = Q_1 ... Q_t; identity at t = 0.
  Eigen::MatrixXd cumulative(int t, int slot = 0) const {
    check_step(t);
    if (kind() == TransitionKind::uniform) return uniform_mix(schedule_.alpha_bar[static_cast<std::size_t>(t)]);
    return prefix_[slot_index(slot)][static_cast<std::size_t>(t)];
  }

  /// Q_{t-k+1} ... Q_t, the k-step transition ending at step t.
  Eigen::MatrixXd span(int t, int k, int slot = 0) const {
    check_step(t);
    DDSR_REQUIRE(k >= 0 && k <= t, ConfigError, "span needs 0 <= k <= t");
    if (kind() == TransitionKind::uniform) return uniform_mix(span_alpha(t, k));
    Eigen::MatrixXd out = Eigen::MatrixXd::Identity(K(), K());
    const auto& steps = steps_[slot_index(slot)];
    for (int s = t - k + 1; s <= t; ++s) out = out * steps[static_cast<std::size_t>(s)];
    return out;
  }

  /// Uniform mode: diagonal coefficient of the k-step span ending at t.
  double span_alpha(int t, int k) const {
    double a = 1.0;
    for (int s = t - k + 1; s <= t; ++s) a *= schedule_.alpha[static_cast<std::size_t>(s)];
    return a;
  }

  double alpha_bar(int t) const { return schedule_.alpha_bar.at(static_cast<std::size_t>(t)); }

 private:
  void check_step(int t) const {
    if (t < 0 || t > T()) throw ConfigError("diffusion step " + std::to_string(t) + " outside [0, " + std::to_string(T()) + "]");
  }
  std::size_t slot_index(int slot) const {
    return prefix_.size() == 1 ? 0 : static_cast<std::size_t>(slot) % prefix_.size();
  }
  Eigen::MatrixXd uniform_mix(double a) const {
    Eigen::MatrixXd q = Eigen::MatrixXd::Constant(K(), K(), (1.0 - a) / K());
    q.diagonal().array() += a;
    return q;
  }

  Schedule schedule_;
  std::vector<Eigen::MatrixXd> distances_;
  std::vector<std::vector<Eigen::MatrixXd>> steps_;   // [slot][t]
  std::vector<std::vector<Eigen::MatrixXd>> prefix_;  // [slot][t]
};

inline TransitionModel make_uniform_transition(const DiffusionConfig& cfg) {
  return TransitionModel::uniform(build_cosine_schedule(cfg));
}

/// A zero-length schedule: corruption is the identity and inference is one clean forward pass.
inline TransitionModel no_diffusion(int K) {
  Schedule s;
  s.kind = TransitionKind::uniform;
  s.K = K;
  s.T = 0;
  s.beta.assign(1, 1.0);
  s.alpha.assign(1, 1.0);
  s.alpha_bar.assign(1, 1.0);
  return TransitionModel::uniform(std::move(s));
}

// ---------------------------------------------------------------------------
// Forward corruption

/// Resamples every token of `seq` from its row of Q-bar_t.
inline void corrupt_sequence(CodeSequence& seq, const TransitionModel& tm, int t, Rng& rng) {
  if (t < 0 || t > tm.T()) throw ConfigError("corrupt: step outside [0, T]");
  if (t == 0) return;
  if (tm.kind() == TransitionKind::uniform) {
    const double keep = tm.alpha_bar(t);
    for (Code& c : seq.codes) {
      // alpha_bar * delta + (1 - alpha_bar) * uniform, sampled as a two-stage draw.
      if (uniform01(rng) >= keep) c = static_cast<Code>(uniform_index(rng, static_cast<std::uint64_t>(tm.K())));
    }
    return;
  }
  std::vector<Eigen::MatrixXd> bars;
  for (int s = 0; s < tm.slot_count(); ++s) bars.push_back(tm.cumulative(t, s));
  std::vector<double> row(static_cast<std::size_t>(tm.K()));
  for (std::size_t i = 0; i < seq.codes.size(); ++i) {
    const auto& bar = bars[bars.size() == 1 ? 0 : (i % static_cast<std::size_t>(seq.m)) % bars.size()];
    for (int j = 0; j < tm.K(); ++j) row[static_cast<std::size_t>(j)] = bar(seq.codes[i], j);
    seq.codes[i] = static_cast<Code>(sample_categorical(row, rng));
  }
}

/// Corrupts each sequence of the batch to its own step. Sequence b draws from
/// a stream seeded by (seed, b), so results do not depend on batch order.
inline CodeState corrupt(const CodeState& state, const TransitionModel& tm, std::uint64_t seed) {
  DDSR_REQUIRE(state.steps.size() == state.sequences.size(), ConfigError, "one step per sequence required");
  CodeState out = state;
  for (std::size_t b = 0; b < out.sequences.size(); ++b) {
    Rng rng(derive_seed(seed, b));
    corrupt_sequence(out.sequences[b], tm, out.steps[b], rng);
  }
  return out;
}

inline CodeState corrupt(const CodeState& state, const TransitionModel& tm, int t, std::uint64_t seed) {
  CodeState s = state;
  s.steps.assign(s.sequences.size(), t);
  return corrupt(s, tm, seed);
}

// ---------------------------------------------------------------------------
// Posterior and reverse kernel

/// q(x_{t-k} | x_t, x_0) proportional to span(t,k)[., x_t] * Q-bar_{t-k}[x_0, .],
/// normalized by Q-bar_t[x_0, x_t]. With k = 1 this is the one-step Bayes posterior.
inline Eigen::VectorXd posterior(Code x_t, Code x_0, const TransitionModel& tm, int t, int k = 1, int slot = 0) {
  DDSR_REQUIRE(t >= 1 && k >= 1 && k <= t, ConfigError, "posterior needs 1 <= k <= t");
  const Eigen::MatrixXd span = tm.span(t, k, slot);
  const Eigen::MatrixXd prev = tm.cumulative(t - k, slot);
  const double norm = tm.cumulative(t, slot)(x_0, x_t);
  if (!(norm > 0.0))
    throw NumericError("posterior: q(x_t=" + std::to_string(x_t) + " | x_0=" + std::to_string(x_0) +
                       ") is zero at t=" + std::to_string(t));
  Eigen::VectorXd p(tm.K());
  for (int j = 0; j < tm.K(); ++j) p(j) = span(j, x_t) * prev(x_0, j) / norm;
  return p;
}

/// The reverse transition for one (t, k, slot): mixes posteriors over x_0 under a
/// denoiser distribution. Build once per step and reuse for every token.
class ReverseKernel {
 public:
  ReverseKernel(const TransitionModel& tm, int t, int k, int slot = 0) : t_(t), k_(k), K_(tm.K()) {
    if (k < 1 || k > t) throw ConfigError("reverse step needs 1 <= k <= t (k=" + std::to_string(k) + ", t=" + std::to_string(t) + ")");
    if (t > tm.T()) throw ConfigError("reverse step beyond T");
    uniform_ = tm.kind() == TransitionKind::uniform;
    if (uniform_) {
      a_span_ = tm.span_alpha(t, k);
      a_prev_ = tm.alpha_bar(t - k);
      a_t_ = tm.alpha_bar(t);
    } else {
      span_ = tm.span(t, k, slot);
      prev_ = tm.cumulative(t - k, slot);
      bar_ = tm.cumulative(t, slot);
    }
  }

  /// p(x_{t-k} = . | x_t) = sum_{x0} q(. | x_t, x0) p~(x0). Values of x0 that cannot
  /// reach x_t at step t carry no posterior and are dropped; if nothing remains, x_t is kept.
  template <class Probs>
  void distribution(Code x_t, const Probs& x0_probs, std::span<double> out) const {
    const double inv_k = 1.0 / K_;
    double total = 0.0;
    if (uniform_) {
      // w(x0) = p~(x0) / Q-bar_t[x0, x_t]; then (w Q-bar_{t-k})_j * span[j, x_t].
      const double off = (1.0 - a_t_) * inv_k;
      double wsum = 0.0;
      for (int j = 0; j < K_; ++j) {
        const double c = off + (j == x_t ? a_t_ : 0.0);
        const double p = static_cast<double>(x0_probs[j]);
        out[static_cast<std::size_t>(j)] = c > 0.0 ? p / c : 0.0;
        wsum += out[static_cast<std::size_t>(j)];
      }
      const double spread = (1.0 - a_prev_) * inv_k * wsum;
      const double span_off = (1.0 - a_span_) * inv_k;
      for (int j = 0; j < K_; ++j) {
        double& o = out[static_cast<std::size_t>(j)];
        o = (a_prev_ * o + spread) * (span_off + (j == x_t ? a_span_ : 0.0));
        total += o;
      }
    } else {
      Eigen::RowVectorXd w(K_);
      for (int j = 0; j < K_; ++j) {
        const double c = bar_(j, x_t);
        w(j) = c > 0.0 ? static_cast<double>(x0_probs[j]) / c : 0.0;
      }
      const Eigen::RowVectorXd mixed = w * prev_;
      for (int j = 0; j < K_; ++j) {
        out[static_cast<std::size_t>(j)] = mixed(j) * span_(j, x_t);
        total += out[static_cast<std::size_t>(j)];
      }
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
      std::fill(out.begin(), out.end(), 0.0);
      out[static_cast<std::size_t>(x_t)] = 1.0;
      return;
    }
    for (double& o : out) o /= total;
  }

  int t() const { return t_; }
  int k() const { return k_; }

 private:
  int t_, k_, K_;
  bool uniform_ = true;
  double a_span_ = 1.0, a_prev_ = 1.0, a_t_ = 1.0;
  Eigen::MatrixXd span_, prev_, bar_;
};

/// One k-step reverse move for every token of `x_t`. `x0_probs` has one row of K
/// probabilities per token (same flattened order as the codes).
inline CodeSequence reverse_step(const CodeSequence& x_t, const Eigen::MatrixXd& x0_probs, const TransitionModel& tm,
                                 int t, int k, Rng& rng) {
  DDSR_REQUIRE(static_cast<std::size_t>(x0_probs.rows()) == x_t.codes.size() && x0_probs.cols() == tm.K(),
               ConfigError, "x0 distribution shape does not match the sequence");
  std::vector<ReverseKernel> kernels;
  for (int s = 0; s < tm.slot_count(); ++s) kernels.emplace_back(tm, t, k, s);
  CodeSequence out = x_t;
  std::vector<double> dist(static_cast<std::size_t>(tm.K()));
  for (std::size_t i = 0; i < x_t.codes.size(); ++i) {
    const auto& kernel = kernels[kernels.size() == 1 ? 0 : (i % static_cast<std::size_t>(x_t.m)) % kernels.size()];
    kernel.distribution(x_t.codes[i], x0_probs.row(static_cast<Eigen::Index>(i)), dist);
    out.codes[i] = static_cast<Code>(sample_categorical(dist, rng));
  }
  return out;
}

/// Batch form: sequence b uses a stream seeded by (seed, b).
inline CodeState reverse_step(const CodeState& x_t, const std::vector<Eigen::MatrixXd>& x0_probs,
                              const TransitionModel& tm, int t, int k, std::uint64_t seed) {
  DDSR_REQUIRE(x0_probs.size() == x_t.sequences.size(), ConfigError, "one distribution block per sequence required");
  CodeState out;
  out.sequences.reserve(x_t.sequences.size());
  for (std::size_t b = 0; b < x_t.sequences.size(); ++b) {
    Rng rng(derive_seed(seed, b));
    out.sequences.push_back(reverse_step(x_t.sequences[b], x0_probs[b], tm, t, k, rng));
  }
  out.steps.assign(x_t.sequences.size(), t - k);
  return out;
}

}  // namespace ddsr
