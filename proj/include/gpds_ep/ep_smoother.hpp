#pragma once

// Gaussian expectation propagation on a fully factored state-space chain.
//
// Each time step t carries three sites: forward (transition from t-1),
// measurement, and backward (transition to t+1). Sites are stored in natural
// form so that negative-variance sites are representable. By default one EP
// iteration is a forward sweep (forward and measurement sites, t = 1..T)
// followed by a backward sweep (backward sites, t = T-1..1), so the first
// iteration is the single-sweep Gaussian smoother for the chosen propagation.
// SweepSchedule::Interleaved visits all three sites of each t in one
// left-to-right pass instead.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gpds_ep/errors.hpp"
#include "gpds_ep/gaussian.hpp"
#include "gpds_ep/gp_model.hpp"
#include "gpds_ep/linalg.hpp"
#include "gpds_ep/metrics.hpp"
#include "gpds_ep/state_space.hpp"
#include "gpds_ep/uncertain_propagation.hpp"

namespace gpds {

/// Derivatives of the approximate log-partition function w.r.t. the cavity
/// mean (row vector, stored as a column) and covariance.
struct LogPartitionGrads {
  double log_z = 0.0;
  Vector grad_mean;
  Matrix grad_cov;

  bool finite() const { return std::isfinite(log_z) && grad_mean.allFinite() && grad_cov.allFinite(); }
};

/// ForwardBackward: forward and measurement sites left to right, then the
/// backward sites right to left. Interleaved: forward, measurement and
/// backward site at each t in a single left-to-right pass.
enum class SweepSchedule { ForwardBackward, Interleaved };

struct EPOptions {
  int max_iters = 100;
  double tol = 1e-6;
  double damping = 1.0;
  PredictMethod method = PredictMethod::moment_matching();
  bool skip_on_indefinite_cavity = true;
  SweepSchedule schedule = SweepSchedule::ForwardBackward;

  void validate() const {
    if (max_iters < 1) throw ConfigError("EPOptions: max_iters must be >= 1");
    if (!(tol > 0.0)) throw ConfigError("EPOptions: tol must be positive");
    if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("EPOptions: damping must be in (0, 1]");
  }
};

struct MessageBank {
  std::vector<NaturalGaussian> fwd;
  std::vector<NaturalGaussian> up;
  std::vector<NaturalGaussian> back;
  std::vector<Gaussian> marginal;

  long length() const { return static_cast<long>(marginal.size()); }

  /// All sites unit except the first forward site, which holds the prior.
  /// Marginals start at the prior (t = 1) and N(0, 1e10 I) elsewhere.
  static MessageBank initial(const Gaussian& prior, long T) {
    const long d = prior.dim();
    MessageBank bank;
    bank.fwd.assign(static_cast<std::size_t>(T), NaturalGaussian::unit(d));
    bank.up.assign(static_cast<std::size_t>(T), NaturalGaussian::unit(d));
    bank.back.assign(static_cast<std::size_t>(T), NaturalGaussian::unit(d));
    bank.fwd[0] = prior.with_log_scale(0.0).natural();
    bank.marginal.assign(static_cast<std::size_t>(T), Gaussian(Vector::Zero(d), 1e10 * Matrix::Identity(d, d)));
    bank.marginal[0] = prior.with_log_scale(0.0);
    return bank;
  }
};

struct EPDiagnostics {
  int iterations_run = 0;
  bool converged = false;
  std::vector<double> convergence;  ///< mean over t of moment_distance between successive iterations
  std::vector<double> nll_x;        ///< per iteration, when ground truth is supplied
  std::vector<double> nll_z;        ///< per iteration
  std::vector<int> skipped;         ///< skipped site updates per iteration
  std::vector<int> attempted;       ///< attempted site updates per iteration
  int skipped_total = 0;
  int attempted_total = 0;
  std::vector<std::string> skip_reasons;  ///< first few reasons, for reporting
};

struct EPResult {
  std::vector<Gaussian> marginals;
  MessageBank bank;
  EPDiagnostics diagnostics;
  std::vector<Gaussian> predictives;            ///< one-step-ahead measurement predictives
  std::vector<Gaussian> posterior_predictives;  ///< smoothed marginals pushed through the measurement model
};

// ---------------------------------------------------------------------------
// Single-site operations

/// q / q_i. Returns the improper Gaussian when the message equals the
/// marginal and nullopt when the cavity precision is not positive definite.
inline std::optional<Gaussian> cavity(const Gaussian& marginal, const NaturalGaussian& message) {
  require_same_dim(marginal.dim(), message.dim(), "cavity");
  if (message.is_unit()) return marginal;
  const NaturalGaussian quotient = marginal.natural() / message;
  const double scale = marginal.natural().precision().norm();
  if (quotient.precision().norm() <= 1e-12 * scale && quotient.shift().norm() <= 1e-12 * scale)
    return Gaussian::improper(marginal.dim());
  auto moments = quotient.try_moments();
  if (!moments) return std::nullopt;
  return moments->with_log_scale(0.0);
}

inline std::optional<Gaussian> cavity(const Gaussian& marginal, const Gaussian& message) {
  return cavity(marginal, message.natural());
}

/// mu = mu_c + Sigma_c grad_m',  Sigma = Sigma_c - Sigma_c (grad_m' grad_m - 2 grad_s) Sigma_c.
inline Gaussian marginal_from_grads(const Gaussian& cav, const LogPartitionGrads& grads) {
  if (cav.is_improper()) throw UpdateSkipped("marginal_from_grads: improper cavity");
  require_same_dim(cav.dim(), grads.grad_mean.size(), "marginal_from_grads");
  if (!grads.finite()) throw UpdateSkipped("marginal_from_grads: non-finite gradients");
  const Matrix& S = cav.cov();
  const Matrix A = grads.grad_mean * grads.grad_mean.transpose() - 2.0 * grads.grad_cov;
  Vector mean = cav.mean() + S * grads.grad_mean;
  Matrix cov = symmetrize(S - S * A * S);
  if (!mean.allFinite() || !cov.allFinite()) throw UpdateSkipped("marginal_from_grads: non-finite moments");
  try {
    (void)robust_llt(cov, "updated marginal");
  } catch (const CholeskyFailure&) {
    throw UpdateSkipped("marginal_from_grads: updated covariance not positive definite");
  }
  return Gaussian(std::move(mean), std::move(cov));
}

/// New site = Z * q_new / q_cavity, optionally blended with the old site in
/// natural parameters (damping = weight of the new site).
inline NaturalGaussian site_update(const Gaussian& new_marginal, const Gaussian& cav,
                                   const LogPartitionGrads& grads,
                                   const std::optional<NaturalGaussian>& old_site = std::nullopt,
                                   double damping = 1.0) {
  require_same_dim(new_marginal.dim(), cav.dim(), "site_update");
  const NaturalGaussian raw = new_marginal.with_log_scale(grads.log_z).natural() / cav.with_log_scale(0.0).natural();
  if (old_site && damping < 1.0) return raw.blend(*old_site, damping);
  return raw;
}

/// log s_i for the site written as s_i exp(-0.5 (x - mu_i)' Sigma_i^{-1} (x - mu_i)):
///   s_i = Z sqrt|I + Sigma_c Sigma_i^{-1}| exp(0.5 grad_m A^{-1} grad_m'),
/// A = grad_m' grad_m - 2 grad_s. Requires A invertible.
inline double site_log_scale_closed_form(const Gaussian& cav, const LogPartitionGrads& grads) {
  const Matrix A = grads.grad_mean * grads.grad_mean.transpose() - 2.0 * grads.grad_cov;
  const Eigen::FullPivLU<Matrix> lu(A);
  if (!lu.isInvertible()) throw NonPositiveDefinite("site_log_scale_closed_form: singular A");
  const Matrix A_inv = lu.inverse();
  const Matrix site_cov = A_inv - cav.cov();
  const Matrix site_prec = Eigen::FullPivLU<Matrix>(site_cov).inverse();
  const Matrix M = Matrix::Identity(cav.dim(), cav.dim()) + cav.cov() * site_prec;
  return grads.log_z + 0.5 * std::log(std::abs(M.determinant())) +
         0.5 * grads.grad_mean.dot(A_inv * grads.grad_mean);
}

/// Gradients of log N(target | pred.mean, pred.cov + extra_cov) w.r.t. the
/// cavity moments under the implicit linear model target = J x: the chain
/// rule uses d mean/d mu = J and d cov/d Sigma = J (.) J', the cross terms
/// are zero.
inline LogPartitionGrads gaussian_evidence_grads(const UncertainPrediction& pred, const Vector& target,
                                                 const Matrix& extra_cov) {
  require_same_dim(pred.mean.size(), target.size(), "evidence target");
  const Matrix S = extra_cov.size() > 0 ? Matrix(symmetrize(pred.cov + extra_cov)) : pred.cov;
  const auto llt = robust_llt(S, "evidence covariance");
  const Vector innovation = target - pred.mean;
  const Vector alpha = llt.solve(innovation);
  const Matrix S_inv = symmetrize(llt.solve(Matrix::Identity(S.rows(), S.cols())));
  LogPartitionGrads g;
  g.log_z = -0.5 * (static_cast<double>(S.rows()) * kLog2Pi + log_det_from_llt(llt) + innovation.dot(alpha));
  g.grad_mean = pred.jacobian.transpose() * alpha;
  g.grad_cov = symmetrize(0.5 * pred.jacobian.transpose() * (alpha * alpha.transpose() - S_inv) * pred.jacobian);
  return g;
}

/// Measurement site: Z_up approximated by N(z_t | mu~, Sigma~).
inline LogPartitionGrads measurement_grads(const UncertainPrediction& pred, const Vector& z) {
  return gaussian_evidence_grads(pred, z, Matrix());
}

inline LogPartitionGrads measurement_grads(const TrainedGP& gp_g, const Gaussian& cav, const Vector& z,
                                           const PredictMethod& method) {
  return measurement_grads(predict(gp_g, cav, method), z);
}

/// Backward site: Z_back approximated by N(mu_fwd_cavity_next | mu~, Sigma~ + Sigma_fwd_cavity_next),
/// where (mu~, Sigma~) propagate the cavity at t through the transition.
inline LogPartitionGrads backward_grads(const UncertainPrediction& pred, const Gaussian& fwd_cavity_next) {
  const long d = pred.jacobian.cols();
  if (fwd_cavity_next.is_improper()) {
    return LogPartitionGrads{0.0, Vector::Zero(d), Matrix::Zero(d, d)};
  }
  return gaussian_evidence_grads(pred, fwd_cavity_next.mean(), fwd_cavity_next.cov());
}

inline LogPartitionGrads backward_grads(const TrainedGP& gp_h, const Gaussian& cavity_t,
                                        const Gaussian& fwd_cavity_next, const PredictMethod& method,
                                        const Vector& control = Vector()) {
  return backward_grads(predict(gp_h, cavity_t, method, control), fwd_cavity_next);
}

struct ForwardUpdate {
  Gaussian marginal;
  NaturalGaussian message;
};

/// Forward site: the transition pushforward of the backward cavity at t-1,
/// taken directly as the message; the marginal is its product with the
/// forward cavity at t (which may be improper).
inline ForwardUpdate forward_update(const UncertainPrediction& pred, const NaturalGaussian& fwd_cavity_t) {
  const NaturalGaussian message = pred.output().natural();
  auto marginal = (message * fwd_cavity_t).try_moments();
  if (!marginal || marginal->is_improper())
    throw UpdateSkipped("forward_update: marginal precision not positive definite");
  return ForwardUpdate{marginal->with_log_scale(0.0), message};
}

inline ForwardUpdate forward_update(const TrainedGP& gp_h, const Gaussian& back_cavity_prev,
                                    const Gaussian& fwd_cavity_t, const PredictMethod& method,
                                    const Vector& control = Vector()) {
  return forward_update(predict(gp_h, back_cavity_prev, method, control), fwd_cavity_t.natural());
}

/// Kalman-gain form of the measurement update: K = C Sigma_z^{-1}.
inline Gaussian kalman_form_measurement_update(const Gaussian& cav, const UncertainPrediction& pred,
                                               const Vector& z) {
  Eigen::LLT<Matrix> llt(pred.cov);
  if (llt.info() != Eigen::Success) throw NonPositiveDefinite("kalman_form_measurement_update: singular Sigma_z");
  const Matrix gain = llt.solve(pred.cross_cov.transpose()).transpose();
  return Gaussian(cav.mean() + gain * (z - pred.mean), symmetrize(cav.cov() - gain * pred.cross_cov.transpose()));
}

// ---------------------------------------------------------------------------
// Full smoother

namespace detail {

inline Vector control_at(const Matrix& controls, long t) {
  if (controls.size() == 0) return Vector();
  return controls.row(t).transpose();
}

struct SweepCounter {
  int attempted = 0;
  int skipped = 0;
  EPDiagnostics* diag = nullptr;

  void skip(const std::string& reason) {
    ++skipped;
    if (diag && diag->skip_reasons.size() < 20) diag->skip_reasons.push_back(reason);
  }
};

inline std::optional<Gaussian> checked_cavity(const Gaussian& marginal, const NaturalGaussian& site,
                                              const EPOptions& opts, const char* which) {
  auto c = cavity(marginal, site);
  if (!c && !opts.skip_on_indefinite_cavity)
    throw UpdateSkipped(std::string("indefinite cavity at ") + which + " site");
  return c;
}

}  // namespace detail

/// One-step-ahead measurement predictives: each forward message (the prior
/// at t = 1) pushed through the measurement model.
inline std::vector<Gaussian> one_step_predictives(const MessageBank& bank, const StateSpaceModel& model) {
  std::vector<Gaussian> out;
  out.reserve(bank.fwd.size());
  for (const auto& f : bank.fwd) {
    const Gaussian time_update = f.to_moments().with_log_scale(0.0);
    out.push_back(model.measurement(time_update, Vector()).output());
  }
  return out;
}

inline EPResult ep_smooth(const StateSpaceModel& model, const Matrix& Z, const Matrix& controls,
                          const EPOptions& opts, const std::optional<Matrix>& truth = std::nullopt) {
  opts.validate();
  const long T = Z.rows();
  if (T < 1) throw ConfigError("ep_smooth: need at least one measurement");
  if (!Z.allFinite()) throw ConfigError("ep_smooth: non-finite measurements");
  require_same_dim(Z.cols(), model.measurement_dim, "ep_smooth measurement dim");
  if (controls.size() > 0) {
    require_same_dim(controls.rows(), T, "ep_smooth control rows");
    require_same_dim(controls.cols(), model.control_dim, "ep_smooth control dim");
  }
  if (truth) require_same_dim(truth->rows(), T, "ep_smooth truth rows");

  EPResult result;
  MessageBank& bank = result.bank;
  bank = MessageBank::initial(model.prior, T);
  EPDiagnostics& diag = result.diagnostics;
  const double damping = opts.damping;

  auto update_backward = [&](long t, detail::SweepCounter& counter) {
    const auto ts = static_cast<std::size_t>(t);
    ++counter.attempted;
    try {
      const auto cav = detail::checked_cavity(bank.marginal[ts], bank.back[ts], opts, "backward");
      if (!cav || cav->is_improper()) throw UpdateSkipped("backward: indefinite cavity");
      const auto next = detail::checked_cavity(bank.marginal[ts + 1], bank.fwd[ts + 1], opts, "forward");
      if (!next) throw UpdateSkipped("backward: indefinite forward cavity at t+1");
      const UncertainPrediction pred = model.transition(*cav, detail::control_at(controls, t));
      const LogPartitionGrads grads = backward_grads(pred, *next);
      Gaussian marginal = marginal_from_grads(*cav, grads);
      NaturalGaussian site = site_update(marginal, *cav, grads, bank.back[ts], damping);
      if (damping < 1.0) {
        auto m = (cav->natural() * site).try_moments();
        if (!m || m->is_improper()) throw UpdateSkipped("backward: damped marginal not positive definite");
        marginal = m->with_log_scale(0.0);
      }
      bank.marginal[ts] = std::move(marginal);
      bank.back[ts] = std::move(site);
    } catch (const Error& e) {
      counter.skip(std::string("t=") + std::to_string(t + 1) + " back: " + e.what());
    }
  };

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const std::vector<Gaussian> previous = bank.marginal;
    detail::SweepCounter counter{0, 0, &diag};

    // Forward sweep: forward then measurement site at each t.
    for (long t = 0; t < T; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      if (t > 0) {
        ++counter.attempted;
        try {
          const auto back_cav = detail::checked_cavity(bank.marginal[ts - 1], bank.back[ts - 1], opts, "backward");
          if (!back_cav || back_cav->is_improper()) throw UpdateSkipped("forward: indefinite backward cavity");
          const NaturalGaussian fwd_cav = bank.marginal[ts].natural() / bank.fwd[ts];
          const UncertainPrediction pred = model.transition(*back_cav, detail::control_at(controls, t - 1));
          NaturalGaussian message = pred.output().natural();
          if (damping < 1.0) message = message.blend(bank.fwd[ts], damping);
          auto marginal = (message * fwd_cav).try_moments();
          if (!marginal || marginal->is_improper() || !marginal->mean().allFinite())
            throw UpdateSkipped("forward: marginal precision not positive definite");
          bank.marginal[ts] = marginal->with_log_scale(0.0);
          bank.fwd[ts] = message;
        } catch (const Error& e) {
          counter.skip(std::string("t=") + std::to_string(t + 1) + " fwd: " + e.what());
        }
      }

      ++counter.attempted;
      try {
        const auto cav = detail::checked_cavity(bank.marginal[ts], bank.up[ts], opts, "measurement");
        if (!cav || cav->is_improper()) throw UpdateSkipped("measurement: indefinite cavity");
        const UncertainPrediction pred = model.measurement(*cav, Vector());
        const LogPartitionGrads grads = measurement_grads(pred, Z.row(t).transpose());
        Gaussian marginal = marginal_from_grads(*cav, grads);
        NaturalGaussian site = site_update(marginal, *cav, grads, bank.up[ts], damping);
        if (damping < 1.0) {
          auto m = (cav->natural() * site).try_moments();
          if (!m || m->is_improper()) throw UpdateSkipped("measurement: damped marginal not positive definite");
          marginal = m->with_log_scale(0.0);
        }
        bank.marginal[ts] = std::move(marginal);
        bank.up[ts] = std::move(site);
      } catch (const Error& e) {
        counter.skip(std::string("t=") + std::to_string(t + 1) + " up: " + e.what());
      }
      if (opts.schedule == SweepSchedule::Interleaved && t + 1 < T) update_backward(t, counter);
    }

    if (opts.schedule == SweepSchedule::ForwardBackward)
      for (long t = T - 2; t >= 0; --t) update_backward(t, counter);

    diag.iterations_run = iter + 1;
    diag.attempted.push_back(counter.attempted);
    diag.skipped.push_back(counter.skipped);
    diag.attempted_total += counter.attempted;
    diag.skipped_total += counter.skipped;
    if (counter.attempted > 0 && counter.skipped == counter.attempted)
      throw DivergenceError("ep_smooth: every site update of iteration " + std::to_string(iter + 1) +
                            " was skipped");

    double change = 0.0;
    for (long t = 0; t < T; ++t)
      change += moment_distance(bank.marginal[static_cast<std::size_t>(t)], previous[static_cast<std::size_t>(t)]);
    change /= static_cast<double>(T);
    diag.convergence.push_back(change);

    if (truth) diag.nll_x.push_back(metric_nll_x(bank.marginal, *truth));
    try {
      diag.nll_z.push_back(metric_nll_z(one_step_predictives(bank, model), Z));
    } catch (const Error&) {
      diag.nll_z.push_back(std::numeric_limits<double>::quiet_NaN());
    }

    if (change < opts.tol) {
      diag.converged = true;
      break;
    }
  }

  result.marginals = bank.marginal;
  // Left empty when a forward message never became proper.
  try {
    result.predictives = one_step_predictives(bank, model);
  } catch (const Error& e) {
    diag.skip_reasons.push_back(std::string("predictives: ") + e.what());
  }
  try {
    for (const auto& m : result.marginals)
      result.posterior_predictives.push_back(model.measurement(m, Vector()).output());
  } catch (const Error& e) {
    result.posterior_predictives.clear();
    diag.skip_reasons.push_back(std::string("posterior predictives: ") + e.what());
  }
  return result;
}

inline EPResult ep_smooth(const GPDSModel& model, const Matrix& Z, const Matrix& controls, const EPOptions& opts,
                          const std::optional<Matrix>& truth = std::nullopt) {
  return ep_smooth(make_state_space(model, opts.method), Z, controls, opts, truth);
}

}  // namespace gpds
