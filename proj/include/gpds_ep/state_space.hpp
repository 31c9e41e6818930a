#pragma once

// State-space models seen by the EP engine. The engine only needs, for the
// transition and the measurement map, a Gaussian approximation of the
// pushforward of a Gaussian input (UncertainPrediction). GPDS models,
// linear-Gaussian models and parametric (EKS-style) models all reduce to that.

#include <functional>
#include <memory>
#include <utility>

#include "gpds_ep/errors.hpp"
#include "gpds_ep/gaussian.hpp"
#include "gpds_ep/gp_model.hpp"
#include "gpds_ep/uncertain_propagation.hpp"

namespace gpds {

using PropagateFn = std::function<UncertainPrediction(const Gaussian& input, const Vector& control)>;

struct StateSpaceModel {
  long state_dim = 0;
  long measurement_dim = 0;
  long control_dim = 0;
  PropagateFn transition;   ///< x_t (+ u_t) -> x_{t+1}
  PropagateFn measurement;  ///< x_t -> z_t, control ignored
  Gaussian prior;           ///< p(x_1)
};

/// Transition GP (state [+ control] -> state), measurement GP (state -> measurement)
/// and the initial-state prior. Noise variances live in each GP's hyperparameters.
struct GPDSModel {
  TrainedGP gp_h;
  TrainedGP gp_g;
  Gaussian prior;

  long state_dim() const { return prior.dim(); }
  long measurement_dim() const { return gp_g.output_dim(); }
  long control_dim() const { return gp_h.input_dim() - prior.dim(); }

  void validate() const {
    require_same_dim(gp_h.output_dim(), state_dim(), "GPDS transition output vs state dim");
    require_same_dim(gp_g.input_dim(), state_dim(), "GPDS measurement input vs state dim");
    if (control_dim() < 0) throw DimensionMismatch("GPDS transition input smaller than state dim");
  }
};

struct LinearGaussianModel {
  Matrix A;  ///< D x D
  Matrix B;  ///< D x U, may be empty
  Matrix Q;
  Matrix H;  ///< E x D
  Matrix R;
  Gaussian prior = Gaussian(Vector::Zero(1), Matrix::Identity(1, 1));
};

/// Known nonlinear model with analytic Jacobians, additive Gaussian noise.
struct ParametricModel {
  std::function<Vector(const Vector& x, const Vector& u)> f;
  std::function<Matrix(const Vector& x, const Vector& u)> f_jacobian;
  Matrix Q;
  std::function<Vector(const Vector& x)> g;
  std::function<Matrix(const Vector& x)> g_jacobian;
  Matrix R;
  Gaussian prior = Gaussian(Vector::Zero(1), Matrix::Identity(1, 1));
  long control_dim = 0;
};

/// Pushforward of N(mean, cov) through the affine map x -> F x + offset plus noise.
inline UncertainPrediction affine_prediction(const Gaussian& input, const Matrix& F, const Vector& mean_out,
                                             const Matrix& noise) {
  UncertainPrediction out;
  out.mean = mean_out;
  out.jacobian = F;
  out.cross_cov = input.cov() * F.transpose();
  out.cov = symmetrize(F * input.cov() * F.transpose() + noise);
  return out;
}

inline StateSpaceModel make_state_space(const LinearGaussianModel& m) {
  StateSpaceModel s{m.A.rows(), m.H.rows(), m.B.cols(), {}, {}, m.prior};
  s.transition = [m](const Gaussian& in, const Vector& u) {
    Vector mean = m.A * in.mean();
    if (m.B.size() > 0 && u.size() > 0) mean += m.B * u;
    return affine_prediction(in, m.A, mean, m.Q);
  };
  s.measurement = [m](const Gaussian& in, const Vector&) {
    return affine_prediction(in, m.H, m.H * in.mean(), m.R);
  };
  return s;
}

/// First-order linearization at the input mean (EKF/EKS propagation).
inline StateSpaceModel make_state_space(const ParametricModel& m) {
  StateSpaceModel s{m.prior.dim(), m.R.rows(), m.control_dim, {}, {}, m.prior};
  s.transition = [m](const Gaussian& in, const Vector& u) {
    return affine_prediction(in, m.f_jacobian(in.mean(), u), m.f(in.mean(), u), m.Q);
  };
  s.measurement = [m](const Gaussian& in, const Vector&) {
    return affine_prediction(in, m.g_jacobian(in.mean()), m.g(in.mean()), m.R);
  };
  return s;
}

inline StateSpaceModel make_state_space(const GPDSModel& model, const PredictMethod& method) {
  model.validate();
  auto shared = std::make_shared<const GPDSModel>(model);
  StateSpaceModel s{model.state_dim(), model.measurement_dim(), model.control_dim(), {}, {}, model.prior};
  s.transition = [shared, method](const Gaussian& in, const Vector& u) {
    return predict(shared->gp_h, in, method, u);
  };
  s.measurement = [shared, method](const Gaussian& in, const Vector&) {
    return predict(shared->gp_g, in, method);
  };
  return s;
}

}  // namespace gpds
