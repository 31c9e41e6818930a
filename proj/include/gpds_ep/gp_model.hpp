#pragma once

// Zero-mean GP regression with one independent squared-exponential ARD
// kernel per output dimension. Predictive variances include the
// observation-noise variance.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gpds_ep/errors.hpp"
#include "gpds_ep/linalg.hpp"

namespace gpds {

struct GPHyper {
  Vector lengthscales;  ///< one per input dimension (square roots of diag(Lambda))
  double signal_var = 1.0;
  double noise_var = 1.0;

  long input_dim() const { return lengthscales.size(); }

  void validate() const {
    if (lengthscales.size() == 0) throw ConfigError("GPHyper: empty lengthscale vector");
    if (!(lengthscales.array() > 0.0).all() || !lengthscales.allFinite())
      throw ConfigError("GPHyper: lengthscales must be positive and finite");
    if (!(signal_var > 0.0) || !std::isfinite(signal_var))
      throw ConfigError("GPHyper: signal variance must be positive");
    if (!(noise_var > 0.0) || !std::isfinite(noise_var))
      throw ConfigError("GPHyper: noise variance must be positive");
  }

  /// diag(Lambda^{-1})
  Vector inverse_sq_lengthscales() const { return lengthscales.array().square().inverse(); }
};

inline double kernel_se_ard(const Vector& x1, const Vector& x2, const GPHyper& hyper) {
  require_same_dim(x1.size(), hyper.input_dim(), "kernel_se_ard x1");
  require_same_dim(x2.size(), hyper.input_dim(), "kernel_se_ard x2");
  const Vector scaled = (x1 - x2).cwiseQuotient(hyper.lengthscales);
  return hyper.signal_var * std::exp(-0.5 * scaled.squaredNorm());
}

namespace detail {

/// Noise-free kernel matrix between the rows of A and the rows of B.
inline Matrix kernel_matrix(const Matrix& A, const Matrix& B, const GPHyper& hyper) {
  const Vector inv_ls = hyper.lengthscales.cwiseInverse();
  const Matrix As = A * inv_ls.asDiagonal();
  const Matrix Bs = B * inv_ls.asDiagonal();
  Matrix sq = (-2.0 * As * Bs.transpose()).colwise() + As.rowwise().squaredNorm();
  sq.rowwise() += Bs.rowwise().squaredNorm().transpose();
  return hyper.signal_var * (-0.5 * sq.array().max(0.0)).exp().matrix();
}

inline Vector kernel_vector(const Matrix& X, const Vector& x, const GPHyper& hyper) {
  const Vector inv_ls = hyper.lengthscales.cwiseInverse();
  Vector out(X.rows());
  for (long i = 0; i < X.rows(); ++i) {
    const double sq = (X.row(i).transpose() - x).cwiseProduct(inv_ls).squaredNorm();
    out(i) = hyper.signal_var * std::exp(-0.5 * sq);
  }
  return out;
}

}  // namespace detail

/// Immutable trained GP: training data plus per-output-dimension Cholesky
/// factors of K_a = K_f + noise_var * I and the weights beta_a = K_a^{-1} y_a.
class TrainedGP {
 public:
  TrainedGP(Matrix X, Matrix Y, std::vector<GPHyper> hypers)
      : X_(std::move(X)), Y_(std::move(Y)), hypers_(std::move(hypers)) {
    require_same_dim(X_.rows(), Y_.rows(), "TrainedGP row counts");
    require_same_dim(static_cast<long>(hypers_.size()), Y_.cols(), "TrainedGP hyper count");
    if (Y_.cols() == 0) throw DimensionMismatch("TrainedGP: zero output dimensions");
    for (const auto& h : hypers_) {
      h.validate();
      require_same_dim(h.input_dim(), X_.cols(), "TrainedGP lengthscales vs input dim");
    }
    const long n = X_.rows();
    beta_.resize(n, Y_.cols());
    for (std::size_t a = 0; a < hypers_.size(); ++a) {
      Matrix K = detail::kernel_matrix(X_, X_, hypers_[a]);
      K.diagonal().array() += hypers_[a].noise_var;
      if (n == 0) {
        chol_.emplace_back();
        k_inv_.emplace_back(0, 0);
        continue;
      }
      auto llt = robust_llt(K, "TrainedGP kernel matrix");
      beta_.col(static_cast<long>(a)) = llt.solve(Y_.col(static_cast<long>(a)));
      k_inv_.push_back(symmetrize(llt.solve(Matrix::Identity(n, n))));
      chol_.push_back(std::move(llt));
    }
  }

  long size() const { return X_.rows(); }
  long input_dim() const { return X_.cols(); }
  long output_dim() const { return Y_.cols(); }

  const Matrix& inputs() const { return X_; }
  const Matrix& targets() const { return Y_; }
  const std::vector<GPHyper>& hypers() const { return hypers_; }
  const GPHyper& hyper(long a) const { return hypers_.at(static_cast<std::size_t>(a)); }
  /// n x output_dim; column a is beta_a.
  const Matrix& beta() const { return beta_; }
  const Eigen::LLT<Matrix>& chol(long a) const { return chol_.at(static_cast<std::size_t>(a)); }
  const Matrix& kernel_inverse(long a) const { return k_inv_.at(static_cast<std::size_t>(a)); }

 private:
  Matrix X_;
  Matrix Y_;
  std::vector<GPHyper> hypers_;
  Matrix beta_;
  std::vector<Eigen::LLT<Matrix>> chol_;
  std::vector<Matrix> k_inv_;
};

inline TrainedGP train_precompute(Matrix X, Matrix Y, std::vector<GPHyper> hypers) {
  return TrainedGP(std::move(X), std::move(Y), std::move(hypers));
}

struct PointPrediction {
  Vector mean;
  Vector var;  ///< diagonal of the predictive covariance, noise included
};

inline PointPrediction predict_point(const TrainedGP& gp, const Vector& x) {
  require_same_dim(x.size(), gp.input_dim(), "predict_point");
  PointPrediction out{Vector(gp.output_dim()), Vector(gp.output_dim())};
  for (long a = 0; a < gp.output_dim(); ++a) {
    const GPHyper& h = gp.hyper(a);
    if (gp.size() == 0) {
      out.mean(a) = 0.0;
      out.var(a) = h.signal_var + h.noise_var;
      continue;
    }
    const Vector k = detail::kernel_vector(gp.inputs(), x, h);
    out.mean(a) = k.dot(gp.beta().col(a));
    const Vector v = gp.chol(a).matrixL().solve(k);
    out.var(a) = std::max(h.signal_var - v.squaredNorm(), 0.0) + h.noise_var;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hyperparameter fitting

/// Log-hyperparameter vector: (log l_1..log l_D, log sigma_f, log sigma_w).
inline Vector to_log_params(const GPHyper& h) {
  Vector theta(h.input_dim() + 2);
  theta.head(h.input_dim()) = h.lengthscales.array().log();
  theta(h.input_dim()) = 0.5 * std::log(h.signal_var);
  theta(h.input_dim() + 1) = 0.5 * std::log(h.noise_var);
  return theta;
}

inline GPHyper from_log_params(const Vector& theta) {
  const long d = theta.size() - 2;
  GPHyper h;
  h.lengthscales = theta.head(d).array().exp();
  h.signal_var = std::exp(2.0 * theta(d));
  h.noise_var = std::exp(2.0 * theta(d + 1));
  return h;
}

struct MarginalLikelihood {
  double value = 0.0;
  Vector gradient;  ///< w.r.t. the log-hyperparameter vector
};

/// Log marginal likelihood of one target column and its gradient.
inline MarginalLikelihood log_marginal_likelihood(const Matrix& X, const Vector& y,
                                                  const GPHyper& hyper) {
  require_same_dim(X.rows(), y.size(), "log_marginal_likelihood");
  const long n = X.rows();
  const long d = X.cols();
  const Matrix Kf = detail::kernel_matrix(X, X, hyper);
  Matrix K = Kf;
  K.diagonal().array() += hyper.noise_var;
  Eigen::LLT<Matrix> llt(K);
  MarginalLikelihood out;
  out.gradient = Vector::Zero(d + 2);
  if (llt.info() != Eigen::Success) {
    out.value = -std::numeric_limits<double>::infinity();
    return out;
  }
  const Vector alpha = llt.solve(y);
  out.value = -0.5 * y.dot(alpha) - 0.5 * log_det_from_llt(llt) -
              0.5 * static_cast<double>(n) * kLog2Pi;

  const Matrix W = alpha * alpha.transpose() - llt.solve(Matrix::Identity(n, n));
  for (long k = 0; k < d; ++k) {
    const double inv_l2 = 1.0 / (hyper.lengthscales(k) * hyper.lengthscales(k));
    const Vector col = X.col(k);
    Matrix sq = (col.replicate(1, n) - col.transpose().replicate(n, 1)).array().square() * inv_l2;
    out.gradient(k) = 0.5 * (W.array() * Kf.array() * sq.array()).sum();
  }
  out.gradient(d) = (W.array() * Kf.array()).sum();
  out.gradient(d + 1) = W.trace() * hyper.noise_var;
  return out;
}

/// Gradient ascent on the log marginal likelihood in log-hyperparameter
/// space, independently per output dimension. Steps adapt multiplicatively:
/// grow after an improving step, halve after a rejected one.
inline std::vector<GPHyper> fit_hyperparameters(const Matrix& X, const Matrix& Y,
                                                const std::vector<GPHyper>& init, int iters) {
  require_same_dim(X.rows(), Y.rows(), "fit_hyperparameters rows");
  require_same_dim(static_cast<long>(init.size()), Y.cols(), "fit_hyperparameters init count");
  if (iters > 0 && X.rows() < 2) throw ConfigError("fit_hyperparameters: need at least 2 points");
  constexpr double kBound = 10.0;

  std::vector<GPHyper> out;
  for (long a = 0; a < Y.cols(); ++a) {
    const GPHyper& start = init[static_cast<std::size_t>(a)];
    start.validate();
    if (iters <= 0) {
      out.push_back(start);
      continue;
    }
    const Vector y = Y.col(a);
    Vector theta = to_log_params(start);
    auto current = log_marginal_likelihood(X, y, from_log_params(theta));
    if (!std::isfinite(current.value) || !current.gradient.allFinite())
      throw NonFinite("fit_hyperparameters: non-finite objective at initialization");

    double step = 0.1 / std::max(1.0, current.gradient.norm());
    for (int it = 0; it < iters; ++it) {
      const Vector candidate =
          (theta + step * current.gradient).cwiseMax(-kBound).cwiseMin(kBound);
      auto trial = log_marginal_likelihood(X, y, from_log_params(candidate));
      if (std::isfinite(trial.value) && trial.gradient.allFinite() &&
          trial.value > current.value) {
        theta = candidate;
        current = std::move(trial);
        step *= 1.5;
      } else {
        step *= 0.5;
      }
      if (step < 1e-14) break;
    }
    out.push_back(from_log_params(theta));
  }
  return out;
}

inline std::vector<GPHyper> fit_hyperparameters(const Matrix& X, const Matrix& Y,
                                                const GPHyper& init, int iters) {
  return fit_hyperparameters(X, Y, std::vector<GPHyper>(static_cast<std::size_t>(Y.cols()), init),
                             iters);
}

}  // namespace gpds
