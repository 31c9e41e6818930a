#pragma once

#include <cstdint>
#include <random>

#include "gpds_ep/gaussian.hpp"
#include "gpds_ep/gp_model.hpp"

namespace gpds::testing {

inline Matrix random_matrix(std::mt19937_64& rng, long r, long c) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, long n) { return random_matrix(rng, n, 1).col(0); }

/// SPD with eigenvalues bounded below by `floor`.
inline Matrix random_spd(std::mt19937_64& rng, long n, double floor = 0.2) {
  const Matrix B = random_matrix(rng, n, n);
  return B * B.transpose() / static_cast<double>(n) + floor * Matrix::Identity(n, n);
}

inline Gaussian random_gaussian(std::mt19937_64& rng, long n) {
  return Gaussian(random_vector(rng, n), random_spd(rng, n));
}

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// GP with n evenly spaced 1-D inputs on [lo, hi] and targets f(x), no noise
/// added to the targets.
template <class F>
TrainedGP gp_on_grid(F&& f, long n, double lo, double hi, GPHyper hyper) {
  Matrix X(n, 1), Y(n, 1);
  for (long i = 0; i < n; ++i) {
    X(i, 0) = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    Y(i, 0) = f(X(i, 0));
  }
  return TrainedGP(X, Y, {hyper});
}

inline GPHyper hyper1(double ell, double sf2, double sw2) { return GPHyper{Vector::Constant(1, ell), sf2, sw2}; }

/// Random GP on [-2, 2]^din with smooth random targets; used for the
/// moment-matching oracle checks.
inline TrainedGP random_gp(std::mt19937_64& rng, long din, long dout, long n) {
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  std::uniform_real_distribution<double> ell(0.6, 1.5);
  std::uniform_real_distribution<double> sf(0.5, 2.0);
  Matrix X(n, din), Y(n, dout);
  for (long i = 0; i < n; ++i)
    for (long k = 0; k < din; ++k) X(i, k) = uni(rng);
  const Vector w = random_vector(rng, din);
  for (long i = 0; i < n; ++i)
    for (long a = 0; a < dout; ++a) Y(i, a) = std::sin(X.row(i).dot(w) + static_cast<double>(a));
  std::vector<GPHyper> hypers;
  for (long a = 0; a < dout; ++a) {
    GPHyper h;
    h.lengthscales = Vector(din);
    for (long k = 0; k < din; ++k) h.lengthscales(k) = ell(rng);
    h.signal_var = sf(rng);
    h.noise_var = 0.01 * h.signal_var;
    hypers.push_back(h);
  }
  return TrainedGP(X, Y, hypers);
}

}  // namespace gpds::testing
