#pragma once

// Propagation of a Gaussian input distribution through a trained GP.
//
// All three methods return the output mean and covariance (noise included),
// the input-output cross-covariance C = cov[x, f(x)] and the Jacobian of the
// implied linear model, J = C' * Sigma_in^{-1}. Known control inputs are
// appended to the state as deterministic (zero-variance) GP inputs; C and J
// only cover the state block.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "gpds_ep/errors.hpp"
#include "gpds_ep/gaussian.hpp"
#include "gpds_ep/gp_model.hpp"
#include "gpds_ep/linalg.hpp"

namespace gpds {

struct UncertainPrediction {
  Vector mean;       ///< output mean
  Matrix cov;        ///< output covariance, noise included
  Matrix cross_cov;  ///< D_in x D_out, cov[x, f(x)]
  Matrix jacobian;   ///< D_out x D_in, satisfies jacobian * Sigma_in = cross_cov'

  Gaussian output() const { return Gaussian(mean, cov); }
};

struct PredictMethod {
  enum class Kind { MomentMatching, Linearization, MonteCarlo };
  Kind kind = Kind::MomentMatching;
  long sample_count = 0;
  std::uint64_t seed = 0;

  static PredictMethod moment_matching() { return {Kind::MomentMatching, 0, 0}; }
  static PredictMethod linearization() { return {Kind::Linearization, 0, 0}; }
  static PredictMethod monte_carlo(long samples, std::uint64_t seed) {
    if (samples < 1) throw ConfigError("MonteCarlo: sample_count must be >= 1");
    return {Kind::MonteCarlo, samples, seed};
  }

  std::string name() const {
    switch (kind) {
      case Kind::MomentMatching: return "moment-matching";
      case Kind::Linearization: return "linearization";
      case Kind::MonteCarlo: return "monte-carlo";
    }
    return "unknown";
  }
};

namespace detail {

struct AugmentedInput {
  Vector mean;  ///< state mean followed by the control
  Matrix cov;   ///< state covariance padded with zeros for the control block
  long state_dim = 0;
};

inline AugmentedInput augment(const TrainedGP& gp, const Gaussian& input, const Vector& control) {
  const long d = input.dim();
  require_same_dim(d + control.size(), gp.input_dim(), "GP input dim vs state + control");
  AugmentedInput aug;
  aug.state_dim = d;
  aug.mean.resize(gp.input_dim());
  aug.mean.head(d) = input.mean();
  aug.mean.tail(control.size()) = control;
  aug.cov = Matrix::Zero(gp.input_dim(), gp.input_dim());
  aug.cov.topLeftCorner(d, d) = input.cov();
  return aug;
}

inline Matrix jacobian_from_cross(const Matrix& input_cov, const Matrix& cross) {
  const auto llt = robust_llt(input_cov, "input covariance");
  return llt.solve(cross).transpose();
}

inline void check_input(const Gaussian& input) {
  if (input.is_improper()) throw NonPositiveDefinite("uncertain prediction: improper input");
  if (!is_positive_definite(input.cov()))
    throw NonPositiveDefinite("uncertain prediction: input covariance not positive definite");
}

}  // namespace detail

/// Exact first and second moments of the GP prediction at a Gaussian input.
inline UncertainPrediction predict_moment_matched(const TrainedGP& gp, const Gaussian& input,
                                                  const Vector& control = Vector()) {
  detail::check_input(input);
  const auto aug = detail::augment(gp, input, control);
  const long n = gp.size();
  const long dg = gp.input_dim();
  const long e = gp.output_dim();
  const Matrix& S = aug.cov;

  UncertainPrediction out;
  out.mean = Vector::Zero(e);
  out.cov = Matrix::Zero(e, e);
  Matrix cross_full = Matrix::Zero(dg, e);

  if (n == 0) {
    for (long a = 0; a < e; ++a) out.cov(a, a) = gp.hyper(a).signal_var + gp.hyper(a).noise_var;
    out.cross_cov = Matrix::Zero(aug.state_dim, e);
    out.jacobian = Matrix::Zero(e, aug.state_dim);
    return out;
  }

  // nu_i = x_i - m, stored row-wise.
  const Matrix nu = gp.inputs().rowwise() - aug.mean.transpose();

  // Scaled inputs Lambda_a^{-1} nu_i and log k_a(x_i, m) per output.
  std::vector<Matrix> scaled(static_cast<std::size_t>(e));
  std::vector<Vector> log_k(static_cast<std::size_t>(e));
  for (long a = 0; a < e; ++a) {
    const GPHyper& h = gp.hyper(a);
    const Vector inv_l = h.inverse_sq_lengthscales();
    scaled[a] = nu * inv_l.asDiagonal();
    log_k[a] = (std::log(h.signal_var) - 0.5 * (scaled[a].cwiseProduct(nu)).rowwise().sum().array())
                   .matrix();

    // Mean: q_ai = sf2 / sqrt|S Lambda^-1 + I| * exp(-0.5 nu_i' (S + Lambda)^-1 nu_i).
    Matrix B = S;
    B.diagonal() += h.lengthscales.array().square().matrix();
    const auto b_llt = robust_llt(B, "moment matching S + Lambda");
    const double log_det_ratio = log_det_from_llt(b_llt) - 2.0 * h.lengthscales.array().log().sum();
    const Matrix b_inv_nu = b_llt.solve(nu.transpose());  // dg x n
    const Vector quad = (nu.transpose().cwiseProduct(b_inv_nu)).colwise().sum().transpose();
    const Vector q =
        (std::log(h.signal_var) - 0.5 * log_det_ratio - 0.5 * quad.array()).exp().matrix();
    const Vector bq = gp.beta().col(a).cwiseProduct(q);
    out.mean(a) = bq.sum();
    // cov[x, f_a(x)] = sum_i beta_ai q_ai S (S + Lambda_a)^{-1} nu_i
    cross_full.col(a) = S * (b_inv_nu * gp.beta().col(a).cwiseProduct(q));
  }

  for (long a = 0; a < e; ++a) {
    for (long b = 0; b <= a; ++b) {
      const Vector d_vec = gp.hyper(a).inverse_sq_lengthscales() + gp.hyper(b).inverse_sq_lengthscales();
      const Vector d_sqrt = d_vec.array().sqrt();
      // R = S (Lambda_a^-1 + Lambda_b^-1) + I is similar to the SPD matrix M below.
      Matrix M = d_sqrt.asDiagonal() * S * d_sqrt.asDiagonal();
      M.diagonal().array() += 1.0;
      const auto m_llt = robust_llt(M, "moment matching R");
      const double log_det_r = log_det_from_llt(m_llt);
      // T = R^{-1} S
      const Matrix T = symmetrize(d_sqrt.cwiseInverse().asDiagonal() *
                                  m_llt.solve(d_sqrt.asDiagonal() * S));
      const Matrix& A = scaled[a];
      const Matrix& Bm = scaled[b];
      const Vector ea = log_k[a] + 0.5 * (A * T).cwiseProduct(A).rowwise().sum();
      const Vector eb = log_k[b] + 0.5 * (Bm * T).cwiseProduct(Bm).rowwise().sum();
      Matrix logQ = A * T * Bm.transpose();
      logQ.colwise() += ea;
      logQ.rowwise() += eb.transpose();
      logQ.array() -= 0.5 * log_det_r;
      const Matrix Q = logQ.array().exp().matrix();

      double value = gp.beta().col(a).dot(Q * gp.beta().col(b)) - out.mean(a) * out.mean(b);
      if (a == b) {
        const GPHyper& h = gp.hyper(a);
        value += h.signal_var - (gp.kernel_inverse(a).cwiseProduct(Q)).sum() + h.noise_var;
      }
      out.cov(a, b) = value;
      out.cov(b, a) = value;
    }
  }

  out.cross_cov = cross_full.topRows(aug.state_dim);
  out.jacobian = detail::jacobian_from_cross(input.cov(), out.cross_cov);
  return out;
}

/// Propagation through the GP posterior mean linearized at the input mean.
/// The model-plus-noise variance is evaluated at the input mean and held constant.
inline UncertainPrediction predict_linearized(const TrainedGP& gp, const Gaussian& input,
                                              const Vector& control = Vector()) {
  detail::check_input(input);
  const auto aug = detail::augment(gp, input, control);
  const long e = gp.output_dim();
  const long d = aug.state_dim;

  const PointPrediction at_mean = predict_point(gp, aug.mean);
  Matrix V = Matrix::Zero(e, gp.input_dim());
  if (gp.size() > 0) {
    const Matrix nu = gp.inputs().rowwise() - aug.mean.transpose();
    for (long a = 0; a < e; ++a) {
      const GPHyper& h = gp.hyper(a);
      const Vector r = detail::kernel_vector(gp.inputs(), aug.mean, h);
      const Vector w = gp.beta().col(a).cwiseProduct(r);
      V.row(a) = (nu.transpose() * w).cwiseProduct(h.inverse_sq_lengthscales()).transpose();
    }
  }

  UncertainPrediction out;
  out.mean = at_mean.mean;
  out.jacobian = V.leftCols(d);
  out.cov = symmetrize(out.jacobian * input.cov() * out.jacobian.transpose());
  out.cov.diagonal() += at_mean.var;
  out.cross_cov = input.cov() * out.jacobian.transpose();
  return out;
}

struct MonteCarloPrediction {
  UncertainPrediction prediction;
  Vector mean_se;       ///< standard error of each output-mean entry
  Matrix cov_se;        ///< standard error of each output-covariance entry
  Matrix cross_cov_se;  ///< standard error of each cross-covariance entry
};

/// Sampling oracle: x ~ input, aggregate point predictions by the law of
/// total variance. Deterministic for a fixed seed.
inline MonteCarloPrediction predict_monte_carlo_with_errors(const TrainedGP& gp, const Gaussian& input,
                                                            long samples, std::uint64_t seed,
                                                            const Vector& control = Vector()) {
  if (samples < 2) throw ConfigError("predict_monte_carlo: need at least 2 samples");
  detail::check_input(input);
  const auto aug = detail::augment(gp, input, control);
  const long d = aug.state_dim;
  const long e = gp.output_dim();
  const auto llt = robust_llt(input.cov(), "monte carlo input covariance");
  const Matrix L = llt.matrixL();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix xs(samples, d);
  Matrix means(samples, e);
  Matrix vars(samples, e);
  Vector xin = aug.mean;
  Vector eps(d);
  for (long k = 0; k < samples; ++k) {
    for (long j = 0; j < d; ++j) eps(j) = normal(rng);
    const Vector x = input.mean() + L * eps;
    xin.head(d) = x;
    const PointPrediction p = predict_point(gp, xin);
    xs.row(k) = x.transpose();
    means.row(k) = p.mean.transpose();
    vars.row(k) = p.var.transpose();
  }

  const double nd = static_cast<double>(samples);
  const Vector mean_m = means.colwise().mean().transpose();
  const Vector mean_x = xs.colwise().mean().transpose();
  const Matrix cm = means.rowwise() - mean_m.transpose();
  const Matrix cx = xs.rowwise() - mean_x.transpose();

  auto sample_se = [nd](const Eigen::ArrayXd& values) {
    const double mu = values.mean();
    const double var = (values - mu).square().sum() / (nd - 1.0);
    return std::sqrt(var / nd);
  };

  MonteCarloPrediction out;
  UncertainPrediction& pred = out.prediction;
  pred.mean = mean_m;
  pred.cov = Matrix(e, e);
  out.cov_se = Matrix(e, e);
  out.mean_se = Vector(e);
  for (long a = 0; a < e; ++a) {
    out.mean_se(a) = sample_se(means.col(a).array());
    for (long b = 0; b < e; ++b) {
      Eigen::ArrayXd contrib = cm.col(a).array() * cm.col(b).array();
      double value = contrib.sum() / (nd - 1.0);
      if (a == b) {
        contrib += vars.col(a).array();
        value += vars.col(a).mean();
      }
      pred.cov(a, b) = value;
      out.cov_se(a, b) = sample_se(contrib);
    }
  }
  pred.cov = symmetrize(pred.cov);

  pred.cross_cov = Matrix(d, e);
  out.cross_cov_se = Matrix(d, e);
  for (long i = 0; i < d; ++i) {
    for (long a = 0; a < e; ++a) {
      const Eigen::ArrayXd contrib = cx.col(i).array() * cm.col(a).array();
      pred.cross_cov(i, a) = contrib.sum() / (nd - 1.0);
      out.cross_cov_se(i, a) = sample_se(contrib);
    }
  }
  pred.jacobian = detail::jacobian_from_cross(input.cov(), pred.cross_cov);
  return out;
}

inline UncertainPrediction predict_monte_carlo(const TrainedGP& gp, const Gaussian& input, long samples,
                                               std::uint64_t seed, const Vector& control = Vector()) {
  return predict_monte_carlo_with_errors(gp, input, samples, seed, control).prediction;
}

inline UncertainPrediction predict(const TrainedGP& gp, const Gaussian& input, const PredictMethod& method,
                                   const Vector& control = Vector()) {
  switch (method.kind) {
    case PredictMethod::Kind::MomentMatching: return predict_moment_matched(gp, input, control);
    case PredictMethod::Kind::Linearization: return predict_linearized(gp, input, control);
    case PredictMethod::Kind::MonteCarlo:
      return predict_monte_carlo(gp, input, method.sample_count, method.seed, control);
  }
  throw ConfigError("unknown prediction method");
}

}  // namespace gpds
