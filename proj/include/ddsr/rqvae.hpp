#pragma once

// Residual-quantized autoencoder: an MLP encoder maps an embedding to r_0, each
// level picks the nearest centroid of its own codebook and passes on the residual,
// and an MLP decoder reconstructs the embedding from the summed centroids.

#include <cmath>
#include <string>
#include <vector>

#include "ddsr/log.hpp"
#include "ddsr/nn.hpp"
#include "ddsr/tokenizer.hpp"

namespace ddsr {

class RQVAE {
 public:
  using Mat = nn::Matrix<double>;

  struct Pass {
    std::vector<Mat> enc_inputs;   // input to each encoder layer
    std::vector<Mat> enc_pre;      // pre-activation of each encoder layer
    Mat latent;                    // r_0
    std::vector<Mat> residuals;    // r_0 .. r_m
    std::vector<std::vector<Code>> codes;  // [item][level]
    Mat quantized;                 // sum of selected centroids
    std::vector<Mat> dec_inputs;
    std::vector<Mat> dec_pre;
    Mat recon;
  };

  RQVAE() = default;

  RQVAE(int input_dim, const TokenizerConfig& cfg) : m_(cfg.m), K_(cfg.K), beta_(cfg.rqvae_beta) {
    Rng rng(derive_seed(cfg.seed, 0x2e));
    std::vector<int> widths{input_dim};
    for (int h : cfg.rqvae_hidden) widths.push_back(h);
    widths.push_back(cfg.rqvae_latent);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
      encoder_.emplace_back("encoder." + std::to_string(l), widths[l], widths[l + 1], rng);
    for (std::size_t l = widths.size() - 1; l > 0; --l)
      decoder_.emplace_back("decoder." + std::to_string(widths.size() - 1 - l), widths[l], widths[l - 1], rng);
    for (int d = 0; d < m_; ++d)
      codebooks_.emplace_back("codebook." + std::to_string(d), Mat::Zero(K_, cfg.rqvae_latent));
  }

  int m() const { return m_; }
  int K() const { return K_; }
  int latent_dim() const { return static_cast<int>(codebooks_.at(0).value.cols()); }
  const Mat& centroids(int level) const { return codebooks_.at(static_cast<std::size_t>(level)).value; }
  Mat& mutable_centroids(int level) { return codebooks_.at(static_cast<std::size_t>(level)).value; }

  Mat encode_latent(const Mat& x) const {
    Pass p;
    run_encoder(x, p);
    return p.latent;
  }

  /// Full forward pass with greedy residual quantization.
  Pass forward(const Mat& x) const {
    Pass p;
    run_encoder(x, p);
    const Eigen::Index n = x.rows();
    p.residuals.push_back(p.latent);
    p.codes.assign(static_cast<std::size_t>(n), std::vector<Code>(static_cast<std::size_t>(m_)));
    p.quantized = Mat::Zero(n, p.latent.cols());
    for (int d = 0; d < m_; ++d) {
      const Mat& r = p.residuals.back();
      Mat next = r;
      const RowMatrix& cb = codebooks_[static_cast<std::size_t>(d)].value;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Code c = nearest_centroid(cb, r.row(i));
        p.codes[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] = c;
        next.row(i) -= cb.row(c);
        p.quantized.row(i) += cb.row(c);
      }
      p.residuals.push_back(std::move(next));
    }
    Mat h = p.quantized;
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
      p.dec_inputs.push_back(h);
      Mat pre = decoder_[l].forward(h);
      p.dec_pre.push_back(pre);
      h = l + 1 < decoder_.size() ? Mat(pre.cwiseMax(0.0)) : pre;
    }
    p.recon = h;
    return p;
  }

  /// Mean over the batch of ||e - e_hat||^2 + sum_d ||sg[r_d] - a_d||^2 + beta ||r_d - sg[a_d]||^2.
  /// Accumulates gradients (straight-through estimator from the decoder to r_0).
  double loss_and_grad(const Mat& x, Pass* out_pass = nullptr) {
    Pass p = forward(x);
    const auto n = static_cast<double>(x.rows());
    const Mat diff = p.recon - x;
    double loss = diff.squaredNorm() / n;
    Mat g = 2.0 * diff / n;
    for (std::size_t l = decoder_.size(); l-- > 0;) {
      if (l + 1 < decoder_.size()) g = g.cwiseProduct((p.dec_pre[l].array() > 0.0).cast<double>().matrix());
      g = decoder_[l].backward(p.dec_inputs[l], g);
    }
    Mat g_latent = g;  // straight-through: dL/d(quantized) flows to r_0
    for (int d = 0; d < m_; ++d) {
      auto& cb = codebooks_[static_cast<std::size_t>(d)];
      const Mat& r = p.residuals[static_cast<std::size_t>(d)];
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Code c = p.codes[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
        const auto delta = (r.row(i) - cb.value.row(c)).eval();
        loss += (1.0 + beta_) * delta.squaredNorm() / n;
        cb.grad.row(c) -= 2.0 * delta / n;
        g_latent.row(i) += 2.0 * beta_ * delta / n;
      }
    }
    Mat ge = g_latent;
    for (std::size_t l = encoder_.size(); l-- > 0;) {
      if (l + 1 < encoder_.size()) ge = ge.cwiseProduct((p.enc_pre[l].array() > 0.0).cast<double>().matrix());
      ge = encoder_[l].backward(p.enc_inputs[l], ge);
    }
    if (out_pass) *out_pass = std::move(p);
    return loss;
  }

  std::vector<nn::Param<double>*> parameters() {
    std::vector<nn::Param<double>*> out;
    for (auto& l : encoder_) l.collect(out);
    for (auto& l : decoder_) l.collect(out);
    for (auto& c : codebooks_) out.push_back(&c);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Identity encoder/decoder (no layers); used to check that one level reduces to plain VQ.
  static RQVAE identity(int dim, int m, int K, double beta) {
    RQVAE q;
    q.m_ = m;
    q.K_ = K;
    q.beta_ = beta;
    for (int d = 0; d < m; ++d) q.codebooks_.emplace_back("codebook." + std::to_string(d), Mat::Zero(K, dim));
    return q;
  }

 private:
  void run_encoder(const Mat& x, Pass& p) const {
    Mat h = x;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      p.enc_inputs.push_back(h);
      Mat pre = encoder_[l].forward(h);
      p.enc_pre.push_back(pre);
      h = l + 1 < encoder_.size() ? Mat(pre.cwiseMax(0.0)) : pre;
    }
    p.latent = h;
  }

  int m_ = 1;
  int K_ = 2;
  double beta_ = 0.25;
  std::vector<nn::Dense<double>> encoder_;
  std::vector<nn::Dense<double>> decoder_;
  std::vector<nn::Param<double>> codebooks_;
};

struct RqvaeResult {
  RQVAE model;
  Codebook codebook;
  CodeMap code_map;
  std::vector<double> loss_curve;  // mean loss per epoch
  int reseeded = 0;
};

namespace detail {

/// Seeds every level's codebook by k-means on that level's residuals.
inline void init_rqvae_codebooks(RQVAE& model, const RowMatrix& data, std::uint64_t seed) {
  RowMatrix residual = model.encode_latent(data);
  for (int d = 0; d < model.m(); ++d) {
    Rng rng(derive_seed(seed, 0x1c, d));
    KMeansResult km = kmeans(residual, model.K(), 10, rng);
    model.mutable_centroids(d) = km.centroids;
    for (Eigen::Index i = 0; i < residual.rows(); ++i) residual.row(i) -= km.centroids.row(km.assignment[static_cast<std::size_t>(i)]);
  }
}

inline Codebook rqvae_codebook(const RQVAE& model) {
  Codebook cb;
  cb.method = TokenizerMethod::rqvae;
  cb.m = model.m();
  cb.K = model.K();
  for (int d = 0; d < model.m(); ++d) {
    cb.centroids.push_back(model.centroids(d));
    cb.effective_k.push_back(model.K());
  }
  return cb;
}

}  // namespace detail

/// Trains the encoder, decoder and m codebooks jointly with Adam, then assigns
/// every item its greedy residual code. Centroids unused during an epoch are
/// re-seeded to the residual of a random item at that level.
inline RqvaeResult fit_rqvae(const EmbeddingTable& embeddings, const TokenizerConfig& cfg, int epochs, double lr) {
  cfg.validate();
  DDSR_REQUIRE(cfg.method == TokenizerMethod::rqvae, ConfigError, "fit_rqvae needs method = rqvae");
  DDSR_REQUIRE(epochs >= 0 && lr > 0.0, ConfigError, "rqvae needs epochs >= 0 and lr > 0");
  DDSR_REQUIRE(embeddings.size() >= 1, DataError, "no embeddings to quantize");
  const RowMatrix& data = embeddings.vectors;
  const auto n = static_cast<std::size_t>(data.rows());

  RqvaeResult out;
  out.model = RQVAE(embeddings.dim(), cfg);
  detail::init_rqvae_codebooks(out.model, data, cfg.seed);
  auto params = out.model.parameters();
  nn::Adam<double> adam({.lr = lr});
  Rng rng(derive_seed(cfg.seed, 0xe9));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.rqvae_batch));

  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle(order, rng);
    std::vector<std::vector<int>> usage(static_cast<std::size_t>(cfg.m), std::vector<int>(static_cast<std::size_t>(cfg.K), 0));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      RowMatrix x(static_cast<Eigen::Index>(end - start), data.cols());
      for (std::size_t i = start; i < end; ++i) x.row(static_cast<Eigen::Index>(i - start)) = data.row(static_cast<Eigen::Index>(order[i]));
      out.model.zero_grad();
      RQVAE::Pass pass;
      const double loss = out.model.loss_and_grad(x, &pass);
      if (!std::isfinite(loss))
        throw NumericError("rqvae loss is not finite at epoch " + std::to_string(epoch + 1) + ", batch starting at " +
                           std::to_string(start) + " (lr=" + std::to_string(lr) + ")");
      adam.step(params);
      epoch_loss += loss * static_cast<double>(end - start);
      for (const auto& codes : pass.codes)
        for (int d = 0; d < cfg.m; ++d) ++usage[static_cast<std::size_t>(d)][static_cast<std::size_t>(codes[static_cast<std::size_t>(d)])];
    }
    out.loss_curve.push_back(epoch_loss / static_cast<double>(n));

    if (epoch + 1 < epochs) {
      const RQVAE::Pass full = out.model.forward(data);
      int reseeded = 0;
      for (int d = 0; d < cfg.m; ++d)
        for (int c = 0; c < cfg.K; ++c) {
          if (usage[static_cast<std::size_t>(d)][static_cast<std::size_t>(c)] > 0) continue;
          const auto pick = static_cast<Eigen::Index>(uniform_index(rng, n));
          out.model.mutable_centroids(d).row(c) = full.residuals[static_cast<std::size_t>(d)].row(pick);
          ++reseeded;
        }
      if (reseeded > 0) logger().debug("rqvae epoch {}: re-seeded {} dead centroids", epoch + 1, reseeded);
      out.reseeded += reseeded;
    }
  }

  const RQVAE::Pass final_pass = out.model.forward(data);
  std::vector<SemanticId> codes(n);
  for (std::size_t i = 0; i < n; ++i) codes[i] = final_pass.codes[i];
  out.codebook = detail::rqvae_codebook(out.model);
  out.codebook.iterations = epochs;
  out.codebook.final_distortion = out.loss_curve.empty() ? 0.0 : out.loss_curve.back();
  out.code_map = CodeMap(cfg.m, cfg.K, std::move(codes));
  return out;
}

}  // namespace ddsr
