#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "gpds_ep/errors.hpp"

namespace gpds {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Cholesky factorization with the library-wide jitter policy: on failure
/// add 1e-10 * trace/dim * I and retry, escalating 10x, at most three times.
inline Eigen::LLT<Matrix> robust_llt(const Matrix& m, const char* what = "cholesky") {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success && m.allFinite()) return llt;
  if (!m.allFinite()) throw CholeskyFailure(std::string(what) + ": non-finite matrix");
  const long n = m.rows();
  double scale = m.trace() / static_cast<double>(n);
  if (!(scale > 0.0)) scale = 1.0;
  double jitter = 1e-10 * scale;
  for (int attempt = 0; attempt < 3; ++attempt, jitter *= 10.0) {
    Matrix shifted = m;
    shifted.diagonal().array() += jitter;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw CholeskyFailure(std::string(what) + ": matrix not positive definite after jitter");
}

/// Plain positive-definiteness probe, no jitter.
inline bool is_positive_definite(const Matrix& m) {
  if (!m.allFinite()) return false;
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

inline double log_det_from_llt(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline Matrix inverse_spd(const Matrix& m, const char* what = "inverse") {
  const auto llt = robust_llt(m, what);
  return symmetrize(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

}  // namespace gpds
