#pragma once

// Classical baselines: Kalman filter / RTS smoother for linear-Gaussian
// models and the extended Kalman smoother for parametric models.

#include <vector>

#include "gpds_ep/errors.hpp"
#include "gpds_ep/gaussian.hpp"
#include "gpds_ep/linalg.hpp"
#include "gpds_ep/state_space.hpp"

namespace gpds {

struct KalmanOutput {
  std::vector<Gaussian> predicted;    ///< p(x_t | z_{1:t-1})
  std::vector<Gaussian> filtered;     ///< p(x_t | z_{1:t})
  std::vector<Gaussian> innovations;  ///< p(z_t | z_{1:t-1})
  std::vector<Gaussian> smoothed;     ///< p(x_t | z_{1:T})
};

namespace detail {

inline Vector row_or_empty(const Matrix& m, long t) {
  if (m.size() == 0) return Vector();
  return m.row(t).transpose();
}

/// Shared filter/smoother skeleton; `linearize_f` and `linearize_g` return
/// (Jacobian, predicted mean) at a state mean.
template <class TransitionLin, class MeasurementLin>
KalmanOutput extended_smoother(const Gaussian& prior, const Matrix& Q, const Matrix& R, const Matrix& Z,
                               const Matrix& U, TransitionLin&& linearize_f, MeasurementLin&& linearize_g) {
  const long T = Z.rows();
  if (T < 1) throw ConfigError("kalman smoother: need at least one measurement");
  KalmanOutput out;
  std::vector<Matrix> transition_jac;
  Vector mean = prior.mean();
  Matrix cov = prior.cov();
  for (long t = 0; t < T; ++t) {
    if (t > 0) {
      const auto [F, fmean] = linearize_f(out.filtered.back().mean(), row_or_empty(U, t - 1));
      transition_jac.push_back(F);
      mean = fmean;
      cov = symmetrize(F * out.filtered.back().cov() * F.transpose() + Q);
    }
    out.predicted.emplace_back(mean, cov);
    const auto [H, zmean] = linearize_g(mean);
    const Matrix S = symmetrize(H * cov * H.transpose() + R);
    out.innovations.emplace_back(zmean, S);
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw NonPositiveDefinite("kalman: singular innovation covariance");
    const Matrix gain = llt.solve(H * cov).transpose();
    mean = mean + gain * (Z.row(t).transpose() - zmean);
    cov = symmetrize(cov - gain * S * gain.transpose());
    out.filtered.emplace_back(mean, cov);
  }

  out.smoothed.assign(out.filtered.begin(), out.filtered.end());
  for (long t = T - 2; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const Gaussian& f = out.filtered[ts];
    const Gaussian& p = out.predicted[ts + 1];
    const Matrix& F = transition_jac[ts];
    Eigen::LLT<Matrix> llt(p.cov());
    if (llt.info() != Eigen::Success) throw NonPositiveDefinite("rts: singular predicted covariance");
    const Matrix L = llt.solve(F * f.cov()).transpose();
    const Gaussian& next = out.smoothed[ts + 1];
    out.smoothed[ts] = Gaussian(f.mean() + L * (next.mean() - p.mean()),
                                symmetrize(f.cov() + L * (next.cov() - p.cov()) * L.transpose()));
  }
  return out;
}

}  // namespace detail

/// Kalman filter plus Rauch-Tung-Striebel backward pass.
inline KalmanOutput rts_smooth(const LinearGaussianModel& m, const Matrix& Z, const Matrix& U = Matrix()) {
  require_same_dim(Z.cols(), m.H.rows(), "rts_smooth measurement dim");
  return detail::extended_smoother(
      m.prior, m.Q, m.R, Z, U,
      [&m](const Vector& x, const Vector& u) {
        Vector next = m.A * x;
        if (m.B.size() > 0 && u.size() > 0) next += m.B * u;
        return std::pair<Matrix, Vector>{m.A, next};
      },
      [&m](const Vector& x) { return std::pair<Matrix, Vector>{m.H, m.H * x}; });
}

/// Extended Kalman filter + RTS pass using the model's analytic Jacobians.
inline KalmanOutput eks_smooth(const ParametricModel& m, const Matrix& Z, const Matrix& U = Matrix()) {
  require_same_dim(Z.cols(), m.R.rows(), "eks_smooth measurement dim");
  return detail::extended_smoother(
      m.prior, m.Q, m.R, Z, U,
      [&m](const Vector& x, const Vector& u) { return std::pair<Matrix, Vector>{m.f_jacobian(x, u), m.f(x, u)}; },
      [&m](const Vector& x) { return std::pair<Matrix, Vector>{m.g_jacobian(x), m.g(x)}; });
}

}  // namespace gpds
