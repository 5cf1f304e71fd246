#pragma once

// Minimal dense-layer machinery with explicit gradients and an Adam optimizer.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ddsr/common.hpp"
#include "ddsr/random.hpp"

namespace ddsr::nn {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// A trainable tensor with its gradient and Adam moments.
template <class S>
struct Param {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;
  Matrix<S> m1;
  Matrix<S> m2;

  Param() = default;
  Param(std::string n, Matrix<S> v) : name(std::move(n)), value(std::move(v)) { reset_state(); }

  void reset_state() {
    grad = Matrix<S>::Zero(value.rows(), value.cols());
    m1 = grad;
    m2 = grad;
  }
  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

template <class S>
Matrix<S> normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(stddev * standard_normal(rng));
  return m;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::span<Param<S>* const> params) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S lr = static_cast<S>(cfg_.lr / c1);
    const S inv_c2 = static_cast<S>(1.0 / c2);
    const S eps = static_cast<S>(cfg_.eps);
    for (Param<S>* p : params) {
      p->m1 = b1 * p->m1 + (S(1) - b1) * p->grad;
      p->m2 = b2 * p->m2 + (S(1) - b2) * p->grad.cwiseProduct(p->grad);
      p->value.array() -= lr * p->m1.array() / ((p->m2.array() * inv_c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
template <class S>
double clip_grad_norm(std::span<Param<S>* const> params, double max_norm) {
  double sq = 0.0;
  for (const Param<S>* p : params) sq += static_cast<double>(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / (norm + 1e-12));
    for (Param<S>* p : params) p->grad *= scale;
  }
  return norm;
}

/// y = x W + b with W of shape (in, out).
template <class S>
struct Dense {
  Param<S> weight;
  Param<S> bias;

  Dense() = default;
  Dense(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng, double stddev = -1.0)
      : weight(name + ".weight", normal_init<S>(in, out, stddev > 0 ? stddev : std::sqrt(2.0 / (in + out)), rng)),
        bias(name + ".bias", Matrix<S>::Zero(1, out)) {}

  Matrix<S> forward(const Matrix<S>& x) const {
    Matrix<S> y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  /// Accumulates parameter gradients and returns dL/dx.
  Matrix<S> backward(const Matrix<S>& x, const Matrix<S>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

}  // namespace ddsr::nn
