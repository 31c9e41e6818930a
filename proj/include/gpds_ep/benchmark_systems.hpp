#pragma once

// Reference systems for the benchmarks: the scalar sine system and the
// torque-driven pendulum observed by two bearings sensors. All generators
// are seeded and reproducible bit-for-bit.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "gpds_ep/errors.hpp"
#include "gpds_ep/gaussian.hpp"
#include "gpds_ep/gp_model.hpp"
#include "gpds_ep/state_space.hpp"

namespace gpds {

struct Trajectory {
  Matrix X;  ///< T x D latent states
  Matrix Z;  ///< T x E measurements
  Matrix U;  ///< T x U controls, empty when the system has none
  std::uint64_t seed = 0;

  long length() const { return X.rows(); }
};

/// Training pairs for the transition and measurement GPs.
struct TrainingSet {
  Matrix dyn_inputs;
  Matrix dyn_targets;
  Matrix meas_inputs;
  Matrix meas_targets;
};

/// splitmix64; derives independent stream seeds from one base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Sine system: x_{t+1} = a sin(x_t) + w,  z_t = a sin(x_t) + v

struct SineSystem {
  double amplitude = 4.0;
  double process_noise_sd = 0.1;
  double measurement_noise_sd = 0.1;
  double prior_mean = 0.0;
  double prior_sd = 1.0;
  double training_low = -5.0;
  double training_high = 5.0;

  Gaussian prior() const {
    return Gaussian(Vector::Constant(1, prior_mean), Matrix::Constant(1, 1, prior_sd * prior_sd));
  }

  /// Known-model form used by the (EP-)EKS baselines.
  ParametricModel parametric() const {
    const double a = amplitude;
    ParametricModel m;
    m.f = [a](const Vector& x, const Vector&) { return Vector::Constant(1, a * std::sin(x(0))); };
    m.f_jacobian = [a](const Vector& x, const Vector&) { return Matrix::Constant(1, 1, a * std::cos(x(0))); };
    m.Q = Matrix::Constant(1, 1, process_noise_sd * process_noise_sd);
    m.g = [a](const Vector& x) { return Vector::Constant(1, a * std::sin(x(0))); };
    m.g_jacobian = [a](const Vector& x) { return Matrix::Constant(1, 1, a * std::cos(x(0))); };
    m.R = Matrix::Constant(1, 1, measurement_noise_sd * measurement_noise_sd);
    m.prior = prior();
    return m;
  }
};

/// x_1 ~ prior unless `initial_state` is given.
inline Trajectory simulate_sine(std::uint64_t seed, long T, const SineSystem& sys = {},
                                std::optional<double> initial_state = std::nullopt) {
  if (T < 1) throw ConfigError("simulate_sine: T must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Trajectory traj;
  traj.seed = seed;
  traj.X.resize(T, 1);
  traj.Z.resize(T, 1);
  double x = sys.prior_mean + sys.prior_sd * normal(rng);
  if (initial_state) x = *initial_state;
  for (long t = 0; t < T; ++t) {
    traj.X(t, 0) = x;
    const double v = normal(rng);
    const double w = normal(rng);
    traj.Z(t, 0) = sys.amplitude * std::sin(x) + sys.measurement_noise_sd * v;
    x = sys.amplitude * std::sin(x) + sys.process_noise_sd * w;
  }
  return traj;
}

/// n inputs uniform on [training_low, training_high] shared by both GPs,
/// with independent noisy targets for the transition and the measurement.
inline TrainingSet sine_training_set(std::uint64_t seed, long n = 30, const SineSystem& sys = {}) {
  if (n < 0) throw ConfigError("sine_training_set: negative size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(sys.training_low, sys.training_high);
  std::normal_distribution<double> normal(0.0, 1.0);
  TrainingSet set;
  set.dyn_inputs.resize(n, 1);
  set.dyn_targets.resize(n, 1);
  for (long i = 0; i < n; ++i) {
    const double x = uniform(rng);
    set.dyn_inputs(i, 0) = x;
    set.dyn_targets(i, 0) = sys.amplitude * std::sin(x) + sys.process_noise_sd * normal(rng);
  }
  set.meas_inputs = set.dyn_inputs;
  set.meas_targets.resize(n, 1);
  for (long i = 0; i < n; ++i)
    set.meas_targets(i, 0) = sys.amplitude * std::sin(set.meas_inputs(i, 0)) + sys.measurement_noise_sd * normal(rng);
  return set;
}

// ---------------------------------------------------------------------------
// Pendulum: uniform rod, angle from upright, zero-order-hold torque.

struct PendulumSystem {
  double mass = 1.0;
  double length = 1.0;
  double gravity = 9.81;
  double control_limit = 2.0;
  double dt = 0.2;
  int substeps = 50;
  Matrix process_noise_cov = Eigen::Vector2d(0.3 * 0.3, 0.1 * 0.1).asDiagonal();
  Vector sensor1 = Eigen::Vector2d(-2.0, 0.0);
  Vector sensor2 = Eigen::Vector2d(-0.5, -0.5);
  Matrix measurement_noise_cov = Eigen::Vector2d(0.1 * 0.1, 0.05 * 0.05).asDiagonal();
  Gaussian prior_state = Gaussian(Vector::Zero(2), Eigen::Vector2d(std::pow(std::numbers::pi / 16.0, 2), 0.25).asDiagonal());

  /// (phi_dot, phi_ddot) for state (phi, phi_dot) under torque u.
  Eigen::Vector2d derivative(const Eigen::Vector2d& s, double u) const {
    const double inertia = mass * length * length / 3.0;
    const double accel = (u - mass * gravity * (length / 2.0) * std::sin(s(0) + std::numbers::pi)) / inertia;
    return {s(1), accel};
  }

  /// Noise-free state after one control period, fixed-step RK4.
  Vector step(const Vector& state, double u, int n_sub = 0) const {
    const int m = n_sub > 0 ? n_sub : substeps;
    const double h = dt / m;
    Eigen::Vector2d s(state(0), state(1));
    for (int i = 0; i < m; ++i) {
      const Eigen::Vector2d k1 = derivative(s, u);
      const Eigen::Vector2d k2 = derivative(s + 0.5 * h * k1, u);
      const Eigen::Vector2d k3 = derivative(s + 0.5 * h * k2, u);
      const Eigen::Vector2d k4 = derivative(s + h * k3, u);
      s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return Vector(s);
  }

  /// Mechanical energy: kinetic plus potential with the pivot as reference.
  double energy(const Vector& state) const {
    const double inertia = mass * length * length / 3.0;
    return 0.5 * inertia * state(1) * state(1) + mass * gravity * (length / 2.0) * std::cos(state(0));
  }

  Gaussian prior() const { return prior_state; }

  /// Known-model form for the EKS baselines. The transition Jacobian is a
  /// central difference of the RK4 step.
  ParametricModel parametric() const;
};

/// Bearings of the point (cos phi, sin phi) from the two sensors, noise free.
inline Vector bearings_measure(const PendulumSystem& sys, const Vector& state) {
  const double px = std::cos(state(0));
  const double py = std::sin(state(0));
  Vector z(2);
  const Vector* sensors[2] = {&sys.sensor1, &sys.sensor2};
  for (int i = 0; i < 2; ++i) {
    const double dx = px - (*sensors[i])(0);
    const double dy = py - (*sensors[i])(1);
    if (std::hypot(dx, dy) < 1e-9) throw SensorCoincidence("bearings_measure: tip coincides with a sensor");
    z(i) = std::atan2(dy, dx);
  }
  return z;
}

inline ParametricModel PendulumSystem::parametric() const {
  const PendulumSystem sys = *this;
  ParametricModel m;
  m.f = [sys](const Vector& x, const Vector& u) { return sys.step(x, u.size() > 0 ? u(0) : 0.0); };
  m.f_jacobian = [sys](const Vector& x, const Vector& u) {
    const double torque = u.size() > 0 ? u(0) : 0.0;
    constexpr double h = 1e-6;
    Matrix J(2, 2);
    for (int k = 0; k < 2; ++k) {
      Vector lo = x;
      Vector hi = x;
      lo(k) -= h;
      hi(k) += h;
      J.col(k) = (sys.step(hi, torque) - sys.step(lo, torque)) / (2.0 * h);
    }
    return J;
  };
  m.Q = process_noise_cov;
  m.g = [sys](const Vector& x) { return bearings_measure(sys, x); };
  m.g_jacobian = [sys](const Vector& x) {
    Matrix J = Matrix::Zero(2, 2);
    const double c = std::cos(x(0));
    const double s = std::sin(x(0));
    const Vector* sensors[2] = {&sys.sensor1, &sys.sensor2};
    for (int i = 0; i < 2; ++i) {
      const double dx = c - (*sensors[i])(0);
      const double dy = s - (*sensors[i])(1);
      J(i, 0) = (dx * c + dy * s) / (dx * dx + dy * dy);
    }
    return J;
  };
  m.R = measurement_noise_cov;
  m.prior = prior_state;
  m.control_dim = 1;
  return m;
}

/// Noisy bearings; the noise stream is determined by `noise_seed`.
inline Vector bearings_measure(const PendulumSystem& sys, const Vector& state, std::uint64_t noise_seed) {
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::LLT<Matrix> llt(sys.measurement_noise_cov);
  Vector eps(2);
  eps << normal(rng), normal(rng);
  return bearings_measure(sys, state) + llt.matrixL() * eps;
}

struct PendulumOverrides {
  std::optional<Vector> initial_state;
  std::optional<double> constant_control;
  bool noise_free = false;
};

inline Trajectory simulate_pendulum(std::uint64_t seed, long T = 20, const PendulumSystem& sys = {},
                                    const PendulumOverrides& overrides = {}) {
  if (T < 1) throw ConfigError("simulate_pendulum: T must be >= 1");
  if (sys.substeps < 1) throw ConfigError("simulate_pendulum: substeps must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> torque(-sys.control_limit, sys.control_limit);
  const Matrix Lw = Eigen::LLT<Matrix>(sys.process_noise_cov).matrixL();
  const Matrix Lv = Eigen::LLT<Matrix>(sys.measurement_noise_cov).matrixL();
  const Matrix Lp = Eigen::LLT<Matrix>(sys.prior_state.cov()).matrixL();
  const double noise_gain = overrides.noise_free ? 0.0 : 1.0;

  Trajectory traj;
  traj.seed = seed;
  traj.X.resize(T, 2);
  traj.Z.resize(T, 2);
  traj.U.resize(T, 1);
  Vector eps(2);
  eps << normal(rng), normal(rng);
  Vector x = sys.prior_state.mean() + Lp * eps;
  if (overrides.initial_state) x = *overrides.initial_state;
  for (long t = 0; t < T; ++t) {
    traj.X.row(t) = x.transpose();
    const double u = overrides.constant_control ? *overrides.constant_control : torque(rng);
    traj.U(t, 0) = u;
    eps << normal(rng), normal(rng);
    traj.Z.row(t) = (bearings_measure(sys, x) + noise_gain * (Lv * eps)).transpose();
    eps << normal(rng), normal(rng);
    x = sys.step(x, u) + noise_gain * (Lw * eps);
  }
  return traj;
}

/// Transition pairs ((x_t, u_t) -> x_{t+1}) and measurement pairs (x_t -> z_t)
/// pooled over the given trajectories.
inline TrainingSet training_set_from(const std::vector<Trajectory>& trajectories) {
  long n_dyn = 0;
  long n_meas = 0;
  for (const auto& tr : trajectories) {
    n_dyn += tr.length() - 1;
    n_meas += tr.length();
  }
  if (trajectories.empty()) return {};
  const long d = trajectories.front().X.cols();
  const long u = trajectories.front().U.cols();
  const long e = trajectories.front().Z.cols();
  TrainingSet set;
  set.dyn_inputs.resize(n_dyn, d + u);
  set.dyn_targets.resize(n_dyn, d);
  set.meas_inputs.resize(n_meas, d);
  set.meas_targets.resize(n_meas, e);
  long i = 0;
  long j = 0;
  for (const auto& tr : trajectories) {
    for (long t = 0; t < tr.length(); ++t) {
      set.meas_inputs.row(j) = tr.X.row(t);
      set.meas_targets.row(j) = tr.Z.row(t);
      ++j;
      if (t + 1 < tr.length()) {
        set.dyn_inputs.row(i).head(d) = tr.X.row(t);
        if (u > 0) set.dyn_inputs.row(i).tail(u) = tr.U.row(t);
        set.dyn_targets.row(i) = tr.X.row(t + 1);
        ++i;
      }
    }
  }
  return set;
}

inline constexpr long kPendulumTrainingTrajectories = 4;
inline constexpr long kPendulumTestTrajectories = 12;
inline constexpr long kPendulumHorizon = 20;

/// Seeded pendulum trajectories: 4 training runs by default, 12 test runs
/// when `test` is set. Training and test streams never share seeds.
inline std::vector<Trajectory> pendulum_trajectories(std::uint64_t seed, bool test = false,
                                                     const PendulumSystem& sys = {},
                                                     long T = kPendulumHorizon) {
  const long count = test ? kPendulumTestTrajectories : kPendulumTrainingTrajectories;
  std::vector<Trajectory> out;
  for (long k = 0; k < count; ++k)
    out.push_back(simulate_pendulum(derive_seed(seed, static_cast<std::uint64_t>(k) + (test ? 1000 : 0)), T, sys));
  return out;
}

inline TrainingSet pendulum_training_set(std::uint64_t seed, const PendulumSystem& sys = {}) {
  return training_set_from(pendulum_trajectories(seed, false, sys));
}

// ---------------------------------------------------------------------------
// Random stable linear-Gaussian systems (exactness checks against RTS)

/// A has spectral norm `radius`; Q, R and the prior covariance are
/// well-conditioned SPD matrices. Measurement dimension equals `d`.
inline LinearGaussianModel random_linear_system(std::uint64_t seed, long d, double radius = 0.9) {
  if (d < 1) throw ConfigError("random_linear_system: dimension must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](long r, long c) {
    Matrix m(r, c);
    for (long i = 0; i < r; ++i)
      for (long j = 0; j < c; ++j) m(i, j) = normal(rng);
    return m;
  };
  auto spd = [&](double floor) {
    const Matrix B = draw(d, d);
    return Matrix(0.3 * B * B.transpose() / static_cast<double>(d) + floor * Matrix::Identity(d, d));
  };
  LinearGaussianModel m;
  const Matrix A = draw(d, d);
  m.A = radius * A / Eigen::JacobiSVD<Matrix>(A).singularValues()(0);
  m.B = Matrix(d, 0);
  m.Q = spd(0.05);
  m.H = draw(d, d) + 2.0 * Matrix::Identity(d, d);
  m.R = spd(0.05);
  m.prior = Gaussian(draw(d, 1).col(0), spd(0.5));
  return m;
}

inline Trajectory simulate_linear(const LinearGaussianModel& m, std::uint64_t seed, long T) {
  if (T < 1) throw ConfigError("simulate_linear: T must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const long d = m.A.rows();
  const long e = m.H.rows();
  auto noise = [&](const Matrix& cov) {
    Vector eps(cov.rows());
    for (long i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
    return Vector(Eigen::LLT<Matrix>(cov).matrixL() * eps);
  };
  Trajectory traj;
  traj.seed = seed;
  traj.X.resize(T, d);
  traj.Z.resize(T, e);
  Vector x = m.prior.mean() + noise(m.prior.cov());
  for (long t = 0; t < T; ++t) {
    traj.X.row(t) = x.transpose();
    traj.Z.row(t) = (m.H * x + noise(m.R)).transpose();
    x = m.A * x + noise(m.Q);
  }
  return traj;
}

/// The same linear system expressed through the generic parametric
/// (linearize-at-the-mean) interface.
inline ParametricModel as_parametric(const LinearGaussianModel& lin) {
  ParametricModel p;
  p.f = [lin](const Vector& x, const Vector&) { return Vector(lin.A * x); };
  p.f_jacobian = [lin](const Vector&, const Vector&) { return lin.A; };
  p.Q = lin.Q;
  p.g = [lin](const Vector& x) { return Vector(lin.H * x); };
  p.g_jacobian = [lin](const Vector&) { return lin.H; };
  p.R = lin.R;
  p.prior = lin.prior;
  return p;
}

// ---------------------------------------------------------------------------
// GPDS construction from training pairs

namespace detail {

inline std::vector<GPHyper> default_hyper_init(const Matrix& X, const Matrix& Y) {
  std::vector<GPHyper> init;
  for (long a = 0; a < Y.cols(); ++a) {
    GPHyper h;
    h.lengthscales = Vector::Ones(X.cols());
    if (X.rows() > 1) {
      for (long k = 0; k < X.cols(); ++k) {
        const double mean = X.col(k).mean();
        const double sd = std::sqrt((X.col(k).array() - mean).square().sum() / static_cast<double>(X.rows() - 1));
        h.lengthscales(k) = sd > 1e-6 ? sd : 1.0;
      }
    }
    double var = 1.0;
    if (Y.rows() > 1) {
      const double mean = Y.col(a).mean();
      var = (Y.col(a).array() - mean).square().sum() / static_cast<double>(Y.rows() - 1);
    }
    h.signal_var = std::max(var, 1e-4);
    h.noise_var = 0.01 * h.signal_var;
    init.push_back(h);
  }
  return init;
}

}  // namespace detail

/// Hyperparameters by gradient ascent from several lengthscale scalings of
/// the default initialization; per output, the best marginal likelihood wins.
inline TrainedGP fit_gp(const Matrix& X, const Matrix& Y, int fit_iters) {
  auto best = detail::default_hyper_init(X, Y);
  if (X.rows() < 2 || fit_iters <= 0) return TrainedGP(X, Y, std::move(best));
  std::vector<double> best_value(best.size(), -std::numeric_limits<double>::infinity());
  for (const double scale : {1.0, 0.3, 0.1}) {
    auto init = detail::default_hyper_init(X, Y);
    for (auto& h : init) h.lengthscales *= scale;
    std::vector<GPHyper> fitted;
    try {
      fitted = fit_hyperparameters(X, Y, init, fit_iters);
    } catch (const NonFinite&) {
      continue;
    }
    for (std::size_t a = 0; a < fitted.size(); ++a) {
      const double value = log_marginal_likelihood(X, Y.col(static_cast<long>(a)), fitted[a]).value;
      if (std::isfinite(value) && value > best_value[a]) {
        best_value[a] = value;
        best[a] = fitted[a];
      }
    }
  }
  return TrainedGP(X, Y, std::move(best));
}

inline GPDSModel train_gpds(const TrainingSet& set, const Gaussian& prior, int fit_iters = 300) {
  GPDSModel model{fit_gp(set.dyn_inputs, set.dyn_targets, fit_iters),
                  fit_gp(set.meas_inputs, set.meas_targets, fit_iters), prior};
  model.validate();
  return model;
}

}  // namespace gpds
