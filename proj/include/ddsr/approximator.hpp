#pragma once

// The learnable denoiser: code embeddings plus item-position, code-slot and
// sinusoidal timestep embeddings feed a pre-norm transformer with block-causal
// attention. The m heads at item block i emit logits for item i+1's codes.

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ddsr/common.hpp"
#include "ddsr/diffusion.hpp"
#include "ddsr/log.hpp"
#include "ddsr/nn.hpp"
#include "ddsr/random.hpp"

namespace ddsr {

struct ApproximatorConfig {
  int d = 128;
  int layers = 2;
  int heads = 4;
  int ff = 256;
  double dropout = 0.2;
  int max_items = 50;
  int m = 4;
  int K = 64;
  std::uint64_t seed = 0;

  void validate() const {
    DDSR_REQUIRE(d >= 1 && layers >= 1 && heads >= 1 && ff >= 1 && max_items >= 1 && m >= 1 && K >= 1, ConfigError,
                 "model sizes must all be >= 1");
    DDSR_REQUIRE(d % heads == 0, ConfigError, "model.d must be divisible by model.heads");
    DDSR_REQUIRE(dropout >= 0.0 && dropout < 1.0, ConfigError, "model.dropout must lie in [0, 1)");
  }
};

/// Standard interleaved sinusoidal embedding: [sin(t w_0), cos(t w_0), sin(t w_1), ...],
/// w_i = 10000^(-2i/d).
template <class S>
nn::RowVector<S> timestep_embedding(int t, int d) {
  nn::RowVector<S> e(d);
  for (int i = 0; 2 * i < d; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / d);
    e(2 * i) = static_cast<S>(std::sin(t * freq));
    if (2 * i + 1 < d) e(2 * i + 1) = static_cast<S>(std::cos(t * freq));
  }
  return e;
}

/// Mean cross-entropy over rows whose target is >= 0 (negative targets are padding).
/// Writes dL/dlogits when `grad` is non-null.
template <class S>
double cross_entropy(const nn::Matrix<S>& logits, std::span<const Code> targets, nn::Matrix<S>* grad = nullptr) {
  DDSR_REQUIRE(static_cast<std::size_t>(logits.rows()) == targets.size(), ConfigError, "logits/targets shape mismatch");
  std::size_t count = 0;
  for (Code c : targets) count += c >= 0;
  if (count == 0) throw DataError("cross-entropy: every position is padding");
  if (grad) *grad = nn::Matrix<S>::Zero(logits.rows(), logits.cols());
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Code target = targets[static_cast<std::size_t>(r)];
    if (target < 0) continue;
    DDSR_REQUIRE(target < logits.cols(), ConfigError, "target code out of range");
    const double mx = static_cast<double>(logits.row(r).maxCoeff());
    double z = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) z += std::exp(static_cast<double>(logits(r, k)) - mx);
    const double log_z = mx + std::log(z);
    total += log_z - static_cast<double>(logits(r, target));
    if (grad) {
      for (Eigen::Index k = 0; k < logits.cols(); ++k)
        (*grad)(r, k) = static_cast<S>(std::exp(static_cast<double>(logits(r, k)) - log_z) * inv);
      (*grad)(r, target) -= static_cast<S>(inv);
    }
  }
  return total * inv;
}

template <class S>
class Approximator {
 public:
  using Mat = nn::Matrix<S>;
  using Row = nn::RowVector<S>;

  struct Output {
    Mat logits;                    // one row per input token: slot p of the next item
    std::vector<int> offsets;      // first token row of each sequence
    std::vector<int> first_block;  // blocks dropped from the front by truncation
    std::vector<int> blocks;       // blocks kept per sequence
  };

  explicit Approximator(const ApproximatorConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, 0xa9));
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    code_emb_ = nn::Param<S>("code_embedding", nn::normal_init<S>(cfg.m * cfg.K, cfg.d, emb_std, rng));
    pos_emb_ = nn::Param<S>("position_embedding", nn::normal_init<S>(cfg.max_items, cfg.d, 0.02, rng));
    slot_emb_ = nn::Param<S>("slot_embedding", nn::normal_init<S>(cfg.m, cfg.d, 0.02, rng));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      Layer layer;
      layer.ln1_g = nn::Param<S>(p + "ln1.gain", Mat::Ones(1, cfg.d));
      layer.ln1_b = nn::Param<S>(p + "ln1.bias", Mat::Zero(1, cfg.d));
      layer.wq = nn::Dense<S>(p + "attn.query", cfg.d, cfg.d, rng);
      layer.wk = nn::Dense<S>(p + "attn.key", cfg.d, cfg.d, rng);
      layer.wv = nn::Dense<S>(p + "attn.value", cfg.d, cfg.d, rng);
      layer.wo = nn::Dense<S>(p + "attn.out", cfg.d, cfg.d, rng);
      layer.ln2_g = nn::Param<S>(p + "ln2.gain", Mat::Ones(1, cfg.d));
      layer.ln2_b = nn::Param<S>(p + "ln2.bias", Mat::Zero(1, cfg.d));
      layer.ff1 = nn::Dense<S>(p + "ff.in", cfg.d, cfg.ff, rng);
      layer.ff2 = nn::Dense<S>(p + "ff.out", cfg.ff, cfg.d, rng);
      layers_.push_back(std::move(layer));
    }
    lnf_g_ = nn::Param<S>("final_ln.gain", Mat::Ones(1, cfg.d));
    lnf_b_ = nn::Param<S>("final_ln.bias", Mat::Zero(1, cfg.d));
    for (int p = 0; p < cfg.m; ++p) heads_.emplace_back("head" + std::to_string(p), cfg.d, cfg.K, rng);
  }

  const ApproximatorConfig& config() const { return cfg_; }

  /// Inference forward pass (no dropout, no cached activations).
  Output predict(std::span<const CodeSequence> seqs, std::span<const int> steps) const {
    return run(seqs, steps, nullptr, nullptr);
  }

  /// Training forward pass; keeps activations for backward(). Dropout is active when `rng` is given.
  Output forward(std::span<const CodeSequence> seqs, std::span<const int> steps, Rng* dropout_rng = nullptr) {
    cache_ = Cache{};
    Output out = run(seqs, steps, &cache_, dropout_rng);
    has_cache_ = true;
    return out;
  }

  /// Backpropagates dL/dlogits through the last forward() call, accumulating into parameter grads.
  void backward(const Mat& dlogits) {
    DDSR_REQUIRE(has_cache_, Error, "backward() without a preceding forward()");
    Cache& c = cache_;
    const int d = cfg_.d, m = cfg_.m;
    const Eigen::Index n = c.final_in.rows();

    Mat dh = Mat::Zero(n, d);
    for (int p = 0; p < m; ++p) {
      const Eigen::Index rows = n / m;
      Mat hp = strided_rows(c.final_norm.out, p, rows);
      Mat gp = strided_rows(dlogits, p, rows);
      Mat dhp = heads_[static_cast<std::size_t>(p)].backward(hp, gp);
      for (Eigen::Index r = 0; r < rows; ++r) dh.row(r * m + p) = dhp.row(r);
    }
    Mat dx = layer_norm_backward(c.final_norm, lnf_g_, lnf_b_, dh);

    for (std::size_t li = layers_.size(); li-- > 0;) {
      Layer& L = layers_[li];
      LayerCache& lc = c.layers[li];
      // x3 = x2 + drop(ff2(gelu(ff1(ln2(x2)))))
      Mat dg = apply_mask(dx, lc.ff_mask);
      Mat dact = L.ff2.backward(lc.act, dg);
      Mat dpre = dact.cwiseProduct(gelu_grad(lc.ff_pre));
      Mat dh2 = L.ff1.backward(lc.norm2.out, dpre);
      Mat dx2 = dx + layer_norm_backward(lc.norm2, L.ln2_g, L.ln2_b, dh2);
      // x2 = x + drop(wo(attn(ln1(x))))
      Mat dao = apply_mask(dx2, lc.attn_mask);
      Mat dattn = L.wo.backward(lc.attn, dao);
      Mat dq = Mat::Zero(n, d), dk = Mat::Zero(n, d), dv = Mat::Zero(n, d);
      attention_backward(lc, dattn, dq, dk, dv, c.offsets, c.token_block);
      Mat dh1 = L.wq.backward(lc.norm1.out, dq);
      dh1 += L.wk.backward(lc.norm1.out, dk);
      dh1 += L.wv.backward(lc.norm1.out, dv);
      dx = dx2 + layer_norm_backward(lc.norm1, L.ln1_g, L.ln1_b, dh1);
    }

    dx = apply_mask(dx, c.embed_mask);
    for (Eigen::Index r = 0; r < n; ++r) {
      const int p = static_cast<int>(r % m);
      code_emb_.grad.row(p * cfg_.K + c.token_code[static_cast<std::size_t>(r)]) += dx.row(r);
      pos_emb_.grad.row(c.token_pos[static_cast<std::size_t>(r)]) += dx.row(r);
      slot_emb_.grad.row(p) += dx.row(r);
    }
    has_cache_ = false;
  }

  std::vector<nn::Param<S>*> parameters() {
    std::vector<nn::Param<S>*> out{&code_emb_, &pos_emb_, &slot_emb_};
    for (auto& L : layers_) {
      out.push_back(&L.ln1_g);
      out.push_back(&L.ln1_b);
      L.wq.collect(out);
      L.wk.collect(out);
      L.wv.collect(out);
      L.wo.collect(out);
      out.push_back(&L.ln2_g);
      out.push_back(&L.ln2_b);
      L.ff1.collect(out);
      L.ff2.collect(out);
    }
    out.push_back(&lnf_g_);
    out.push_back(&lnf_b_);
    for (auto& h : heads_) h.collect(out);
    return out;
  }

  std::vector<const nn::Param<S>*> parameters() const {
    auto ps = const_cast<Approximator*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// K x d embeddings of code slot `slot`.
  Eigen::MatrixXd code_embeddings(int slot) const {
    return code_emb_.value.middleRows(static_cast<Eigen::Index>(slot) * cfg_.K, cfg_.K).template cast<double>();
  }

  /// K x d embeddings averaged over slots.
  Eigen::MatrixXd pooled_code_embeddings() const {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(cfg_.K, cfg_.d);
    for (int p = 0; p < cfg_.m; ++p) acc += code_embeddings(p);
    return acc / cfg_.m;
  }

  /// Copies parameter values (not optimizer state) from another model of the same shape.
  void copy_values_from(const Approximator& other) {
    auto dst = parameters();
    auto src = other.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out.write("DDSRPARM", 8);
    const auto params = parameters();
    write_pod(out, static_cast<std::uint64_t>(params.size()));
    for (const auto* p : params) {
      write_pod(out, static_cast<std::uint64_t>(p->name.size()));
      out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      write_pod(out, static_cast<std::int64_t>(p->value.rows()));
      write_pod(out, static_cast<std::int64_t>(p->value.cols()));
      for (Eigen::Index i = 0; i < p->value.size(); ++i) write_pod(out, static_cast<double>(p->value.data()[i]));
    }
  }

  void load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("checkpoint parameters not found: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "DDSRPARM", 8) != 0) throw DataError(path + ": not a parameter file");
    auto params = parameters();
    if (read_pod<std::uint64_t>(in) != params.size()) throw DataError(path + ": parameter count mismatch");
    for (auto* p : params) {
      std::string name(read_pod<std::uint64_t>(in), '\0');
      in.read(name.data(), static_cast<std::streamsize>(name.size()));
      const auto rows = read_pod<std::int64_t>(in), cols = read_pod<std::int64_t>(in);
      if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
        throw DataError(path + ": parameter '" + name + "' does not match model '" + p->name + "'");
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<S>(read_pod<double>(in));
      p->reset_state();
    }
    if (!in) throw DataError(path + ": truncated parameter file");
  }

 private:
  struct NormCache {
    Mat xhat;
    Mat out;
    std::vector<S> rstd;
  };
  struct LayerCache {
    NormCache norm1, norm2;
    Mat q, k, v, attn;
    std::vector<std::vector<Mat>> probs;  // [sequence][head]
    Mat attn_mask, ff_mask;
    Mat ff_pre, act;
  };
  struct Cache {
    std::vector<int> offsets;
    std::vector<int> token_block;
    std::vector<int> token_pos;
    std::vector<Code> token_code;
    Mat embed_mask;
    std::vector<LayerCache> layers;
    Mat final_in;
    NormCache final_norm;
  };
  struct Layer {
    nn::Param<S> ln1_g, ln1_b, ln2_g, ln2_b;
    nn::Dense<S> wq, wk, wv, wo, ff1, ff2;
  };

  Output run(std::span<const CodeSequence> seqs, std::span<const int> steps, Cache* cache, Rng* rng) const {
    DDSR_REQUIRE(seqs.size() == steps.size(), ConfigError, "one diffusion step per sequence required");
    const int d = cfg_.d, m = cfg_.m;
    Output out;
    std::vector<int> token_block;
    std::vector<int> token_pos;  // counted back from the most recent item
    std::vector<Code> token_code;
    std::vector<int> token_seq;
    int total = 0;
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      const auto& seq = seqs[s];
      DDSR_REQUIRE(seq.m == m, ConfigError, "sequence code length does not match the model");
      DDSR_REQUIRE(seq.blocks() >= 1, ConfigError, "empty sequence");
      const int blocks = std::min(seq.blocks(), cfg_.max_items);
      const int first = seq.blocks() - blocks;
      if (first > 0 && !truncation_logged_) {
        truncation_logged_ = true;
        logger().info("sequences longer than {} items are truncated to their most recent items", cfg_.max_items);
      }
      out.offsets.push_back(total);
      out.first_block.push_back(first);
      out.blocks.push_back(blocks);
      for (int b = 0; b < blocks; ++b)
        for (int p = 0; p < m; ++p) {
          const Code c = seq.at(first + b, p);
          DDSR_REQUIRE(c >= 0 && c < cfg_.K, ConfigError, "code out of range");
          token_block.push_back(b);
          token_pos.push_back(blocks - 1 - b);
          token_code.push_back(c);
          token_seq.push_back(static_cast<int>(s));
        }
      total += blocks * m;
    }
    out.offsets.push_back(total);

    Mat x(total, d);
    std::vector<Row> time_rows;
    for (int t : steps) time_rows.push_back(timestep_embedding<S>(t, d));
    for (int r = 0; r < total; ++r) {
      const int p = r % m;
      x.row(r) = code_emb_.value.row(p * cfg_.K + token_code[static_cast<std::size_t>(r)]) +
                 pos_emb_.value.row(token_pos[static_cast<std::size_t>(r)]) + slot_emb_.value.row(p) +
                 time_rows[static_cast<std::size_t>(token_seq[static_cast<std::size_t>(r)])];
    }
    Mat embed_mask = dropout_mask(total, d, rng);
    x = apply_mask(x, embed_mask);
    if (cache) {
      cache->offsets = out.offsets;
      cache->token_block = token_block;
      cache->token_pos = token_pos;
      cache->token_code = token_code;
      cache->embed_mask = std::move(embed_mask);
    }

    for (const Layer& L : layers_) {
      LayerCache lc;
      lc.norm1 = layer_norm(x, L.ln1_g, L.ln1_b);
      lc.q = L.wq.forward(lc.norm1.out);
      lc.k = L.wk.forward(lc.norm1.out);
      lc.v = L.wv.forward(lc.norm1.out);
      lc.attn = Mat::Zero(total, d);
      attention_forward(lc, out.offsets, token_block);
      lc.attn_mask = dropout_mask(total, d, rng);
      Mat x2 = x + apply_mask(L.wo.forward(lc.attn), lc.attn_mask);
      lc.norm2 = layer_norm(x2, L.ln2_g, L.ln2_b);
      lc.ff_pre = L.ff1.forward(lc.norm2.out);
      lc.act = gelu(lc.ff_pre);
      lc.ff_mask = dropout_mask(total, d, rng);
      x = x2 + apply_mask(L.ff2.forward(lc.act), lc.ff_mask);
      if (cache) cache->layers.push_back(std::move(lc));
    }

    NormCache fin = layer_norm(x, lnf_g_, lnf_b_);
    out.logits.resize(total, cfg_.K);
    for (int p = 0; p < m; ++p) {
      const Eigen::Index rows = total / m;
      Mat lp = heads_[static_cast<std::size_t>(p)].forward(strided_rows(fin.out, p, rows));
      for (Eigen::Index r = 0; r < rows; ++r) out.logits.row(r * m + p) = lp.row(r);
    }
    if (cache) {
      cache->final_in = std::move(x);
      cache->final_norm = std::move(fin);
    }
    return out;
  }

  static Mat strided_rows(const Mat& src, int first, Eigen::Index rows) {
    const int m = static_cast<int>(src.rows() / std::max<Eigen::Index>(rows, 1));
    Mat out(rows, src.cols());
    for (Eigen::Index r = 0; r < rows; ++r) out.row(r) = src.row(r * m + first);
    return out;
  }

  Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, Rng* rng) const {
    if (!rng || cfg_.dropout <= 0.0) return Mat();
    Mat mask(rows, cols);
    const S keep_scale = static_cast<S>(1.0 / (1.0 - cfg_.dropout));
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(*rng) < cfg_.dropout ? S(0) : keep_scale;
    return mask;
  }

  static Mat apply_mask(const Mat& x, const Mat& mask) { return mask.size() == 0 ? x : Mat(x.cwiseProduct(mask)); }

  static NormCache layer_norm(const Mat& x, const nn::Param<S>& g, const nn::Param<S>& b) {
    NormCache c;
    const Eigen::Index n = x.rows(), d = x.cols();
    c.xhat.resize(n, d);
    c.rstd.resize(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) {
      const S mean = x.row(r).mean();
      const S var = (x.row(r).array() - mean).square().mean();
      const S rstd = S(1) / std::sqrt(var + static_cast<S>(1e-5));
      c.rstd[static_cast<std::size_t>(r)] = rstd;
      c.xhat.row(r) = (x.row(r).array() - mean) * rstd;
    }
    c.out = c.xhat.array().rowwise() * g.value.row(0).array();
    c.out.rowwise() += b.value.row(0);
    return c;
  }

  static Mat layer_norm_backward(const NormCache& c, nn::Param<S>& g, nn::Param<S>& b, const Mat& dy) {
    g.grad.row(0) += dy.cwiseProduct(c.xhat).colwise().sum();
    b.grad.row(0) += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * g.value.row(0).array();
    const S inv_d = S(1) / static_cast<S>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const S mean_dx = dxhat.row(r).sum() * inv_d;
      const S mean_dxx = dxhat.row(r).cwiseProduct(c.xhat.row(r)).sum() * inv_d;
      dx.row(r) = c.rstd[static_cast<std::size_t>(r)] *
                  (dxhat.row(r).array() - mean_dx - c.xhat.row(r).array() * mean_dxx);
    }
    return dx;
  }

  static constexpr S kGeluC = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  static constexpr S kGeluA = static_cast<S>(0.044715);

  static Mat gelu(const Mat& x) {
    return x.unaryExpr([](S v) { return S(0.5) * v * (S(1) + std::tanh(kGeluC * (v + kGeluA * v * v * v))); });
  }

  static Mat gelu_grad(const Mat& x) {
    return x.unaryExpr([](S v) {
      const S th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      return S(0.5) * (S(1) + th) + S(0.5) * v * (S(1) - th * th) * kGeluC * (S(1) + S(3) * kGeluA * v * v);
    });
  }

  void attention_forward(LayerCache& lc, const std::vector<int>& offsets, const std::vector<int>& token_block) const {
    const int H = cfg_.heads, dh = cfg_.d / cfg_.heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const std::size_t nseq = offsets.size() - 1;
    lc.probs.assign(nseq, std::vector<Mat>(static_cast<std::size_t>(H)));
    for (std::size_t s = 0; s < nseq; ++s) {
      const int o = offsets[s], n = offsets[s + 1] - offsets[s];
      for (int h = 0; h < H; ++h) {
        Mat scores = (lc.q.block(o, h * dh, n, dh) * lc.k.block(o, h * dh, n, dh).transpose()) * scale;
        for (int a = 0; a < n; ++a) {
          const int ba = token_block[static_cast<std::size_t>(o + a)];
          S mx = -std::numeric_limits<S>::infinity();
          for (int b = 0; b < n; ++b)
            if (token_block[static_cast<std::size_t>(o + b)] <= ba) mx = std::max(mx, scores(a, b));
          S z = 0;
          for (int b = 0; b < n; ++b) {
            if (token_block[static_cast<std::size_t>(o + b)] <= ba) {
              scores(a, b) = std::exp(scores(a, b) - mx);
              z += scores(a, b);
            } else {
              scores(a, b) = 0;
            }
          }
          scores.row(a) /= z;
        }
        lc.attn.block(o, h * dh, n, dh) = scores * lc.v.block(o, h * dh, n, dh);
        lc.probs[s][static_cast<std::size_t>(h)] = std::move(scores);
      }
    }
  }

  void attention_backward(const LayerCache& lc, const Mat& dattn, Mat& dq, Mat& dk, Mat& dv,
                          const std::vector<int>& offsets, const std::vector<int>&) const {
    const int H = cfg_.heads, dh = cfg_.d / cfg_.heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const int o = offsets[s], n = offsets[s + 1] - offsets[s];
      for (int h = 0; h < H; ++h) {
        const Mat& P = lc.probs[s][static_cast<std::size_t>(h)];
        const Mat dO = dattn.block(o, h * dh, n, dh);
        dv.block(o, h * dh, n, dh) += P.transpose() * dO;
        const Mat dP = dO * lc.v.block(o, h * dh, n, dh).transpose();
        Mat dS = P.cwiseProduct(dP);
        const auto row_dot = dS.rowwise().sum().eval();
        dS -= P.cwiseProduct(row_dot.replicate(1, n));
        dS *= scale;
        dq.block(o, h * dh, n, dh) += dS * lc.k.block(o, h * dh, n, dh);
        dk.block(o, h * dh, n, dh) += dS.transpose() * lc.q.block(o, h * dh, n, dh);
      }
    }
  }

  template <class T>
  static void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  template <class T>
  static T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }

  ApproximatorConfig cfg_;
  nn::Param<S> code_emb_, pos_emb_, slot_emb_;
  std::vector<Layer> layers_;
  nn::Param<S> lnf_g_, lnf_b_;
  std::vector<nn::Dense<S>> heads_;
  Cache cache_;
  bool has_cache_ = false;
  mutable bool truncation_logged_ = false;
};

/// Row-wise softmax in double precision.
template <class S>
Eigen::MatrixXd softmax_rows(const nn::Matrix<S>& logits) {
  Eigen::MatrixXd p = logits.template cast<double>();
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    p.row(r).array() -= p.row(r).maxCoeff();
    p.row(r) = p.row(r).array().exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace ddsr
