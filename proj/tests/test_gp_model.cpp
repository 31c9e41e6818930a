#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gpds_ep/benchmark_systems.hpp"
#include "gpds_ep/gp_model.hpp"
#include "test_support.hpp"

using namespace gpds;
using gpds::testing::hyper1;

TEST(Kernel, CoincidentInputsGiveSignalVariance) {
  GPHyper h{Eigen::Vector3d(0.5, 2.0, 1.0), 1.7, 0.1};
  const Vector x = Eigen::Vector3d(0.3, -1.0, 2.0);
  EXPECT_DOUBLE_EQ(kernel_se_ard(x, x, h), 1.7);
}

TEST(Kernel, UnitExponent) {
  GPHyper h = hyper1(1.0, 1.0, 0.1);
  EXPECT_NEAR(kernel_se_ard(Vector::Constant(1, 0.0), Vector::Constant(1, std::sqrt(2.0)), h), std::exp(-1.0),
              1e-15);
}

TEST(Kernel, ArdScaling) {
  // Lambda = diag(1, 4): lengthscales 1 and 2; squared distance 1/1 + 4/4 = 2.
  GPHyper h{Eigen::Vector2d(1.0, 2.0), 2.0, 0.1};
  EXPECT_NEAR(kernel_se_ard(Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d(0.0, 0.0), h), 2.0 * std::exp(-1.0), 1e-15);
}

TEST(Kernel, NoNoiseOffDiagonalOfTrainingMatrix) {
  GPHyper h = hyper1(1.0, 1.0, 0.5);
  EXPECT_DOUBLE_EQ(kernel_se_ard(Vector::Zero(1), Vector::Zero(1), h), 1.0);
}

TEST(Kernel, DimensionMismatchThrows) {
  GPHyper h{Eigen::Vector2d(1.0, 1.0), 1.0, 0.1};
  EXPECT_THROW(kernel_se_ard(Vector::Zero(1), Vector::Zero(2), h), DimensionMismatch);
}

TEST(Hyper, ValidationRejectsNonPositive) {
  EXPECT_THROW(hyper1(0.0, 1.0, 0.1).validate(), ConfigError);
  EXPECT_THROW(hyper1(1.0, -1.0, 0.1).validate(), ConfigError);
  EXPECT_THROW(hyper1(1.0, 1.0, 0.0).validate(), ConfigError);
  EXPECT_NO_THROW(hyper1(1.0, 1.0, 0.1).validate());
}

TEST(Train, EmptyGpIsValid) {
  const TrainedGP gp(Matrix(0, 2), Matrix(0, 1), {GPHyper{Eigen::Vector2d(1.0, 1.0), 2.0, 0.3}});
  EXPECT_EQ(gp.size(), 0);
  const PointPrediction p = predict_point(gp, Eigen::Vector2d(3.0, -1.0));
  EXPECT_DOUBLE_EQ(p.mean(0), 0.0);
  EXPECT_DOUBLE_EQ(p.var(0), 2.3);
}

TEST(Train, SinglePointHandSolve) {
  const TrainedGP gp = train_precompute(Matrix::Zero(1, 1), Matrix::Constant(1, 1, 2.0), {hyper1(1.0, 1.0, 1.0)});
  EXPECT_NEAR(gp.beta()(0, 0), 1.0, 1e-15);
  const PointPrediction p = predict_point(gp, Vector::Zero(1));
  EXPECT_NEAR(p.mean(0), 1.0, 1e-15);
  EXPECT_NEAR(p.var(0), 1.5, 1e-15);
}

TEST(Train, SineTrainingResidual) {
  const TrainingSet set = sine_training_set(7, 30);
  const TrainedGP gp(set.dyn_inputs, set.dyn_targets, {hyper1(1.0, 8.0, 0.01)});
  Matrix K = detail::kernel_matrix(set.dyn_inputs, set.dyn_inputs, gp.hyper(0));
  K.diagonal().array() += gp.hyper(0).noise_var;
  const Vector y = set.dyn_targets.col(0);
  EXPECT_LT((K * gp.beta().col(0) - y).norm() / y.norm(), 1e-6);
}

TEST(Train, MismatchedInputsThrow) {
  EXPECT_THROW(TrainedGP(Matrix::Zero(3, 1), Matrix::Zero(2, 1), {hyper1(1, 1, 1)}), DimensionMismatch);
  EXPECT_THROW(TrainedGP(Matrix::Zero(3, 1), Matrix::Zero(3, 2), {hyper1(1, 1, 1)}), DimensionMismatch);
  EXPECT_THROW(TrainedGP(Matrix::Zero(3, 2), Matrix::Zero(3, 1), {hyper1(1, 1, 1)}), DimensionMismatch);
}

TEST(Predict, RevertsToPriorFarFromData) {
  const TrainingSet set = sine_training_set(3, 30);
  const TrainedGP gp(set.meas_inputs, set.meas_targets, {hyper1(0.8, 10.0, 0.01)});
  const PointPrediction p = predict_point(gp, Vector::Constant(1, 5.0 + 12.0 * 0.8));
  EXPECT_NEAR(p.mean(0), 0.0, 1e-10);
  EXPECT_NEAR(p.var(0), 10.01, 1e-10);
}

TEST(Predict, InterpolatesWithVanishingNoise) {
  std::mt19937_64 rng(5);
  Matrix X = gpds::testing::random_matrix(rng, 8, 2) * 2.0;
  Matrix Y(8, 1);
  for (long i = 0; i < 8; ++i) Y(i, 0) = std::sin(X(i, 0)) + X(i, 1);
  const TrainedGP gp(X, Y, {GPHyper{Eigen::Vector2d(1.0, 1.5), 2.0, 1e-10}});
  for (long i = 0; i < 8; ++i)
    EXPECT_NEAR(predict_point(gp, X.row(i).transpose()).mean(0), Y(i, 0), 1e-5);
}

TEST(Predict, VarianceBounds) {
  std::mt19937_64 rng(6);
  const TrainedGP gp = gpds::testing::random_gp(rng, 2, 2, 25);
  std::uniform_real_distribution<double> uni(-4.0, 4.0);
  for (int k = 0; k < 200; ++k) {
    const Vector x = Eigen::Vector2d(uni(rng), uni(rng));
    const PointPrediction p = predict_point(gp, x);
    for (long a = 0; a < 2; ++a) {
      EXPECT_GE(p.var(a), gp.hyper(a).noise_var - 1e-12);
      EXPECT_LE(p.var(a), gp.hyper(a).signal_var + gp.hyper(a).noise_var + 1e-9);
    }
  }
}

TEST(MarginalLikelihood, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const Matrix X = gpds::testing::random_matrix(rng, 20, 2);
  Vector y(20);
  for (long i = 0; i < 20; ++i) y(i) = std::cos(X(i, 0)) - 0.5 * X(i, 1) + 0.05 * static_cast<double>(i % 3);
  const GPHyper h{Eigen::Vector2d(0.9, 1.7), 1.3, 0.05};
  const Vector theta = to_log_params(h);
  const auto analytic = log_marginal_likelihood(X, y, h);
  const double step = 1e-5;
  for (long k = 0; k < theta.size(); ++k) {
    Vector hi = theta, lo = theta;
    hi(k) += step;
    lo(k) -= step;
    const double fd = (log_marginal_likelihood(X, y, from_log_params(hi)).value -
                       log_marginal_likelihood(X, y, from_log_params(lo)).value) /
                      (2.0 * step);
    EXPECT_NEAR(analytic.gradient(k), fd, 1e-4 * std::max(1.0, std::abs(fd))) << "parameter " << k;
  }
}

TEST(MarginalLikelihood, LogParamsRoundtrip) {
  const GPHyper h{Eigen::Vector3d(0.3, 1.0, 7.0), 2.5, 0.004};
  const GPHyper back = from_log_params(to_log_params(h));
  EXPECT_LT((back.lengthscales - h.lengthscales).norm(), 1e-14);
  EXPECT_NEAR(back.signal_var, h.signal_var, 1e-14);
  EXPECT_NEAR(back.noise_var, h.noise_var, 1e-16);
}

TEST(Fit, ZeroIterationsReturnsInit) {
  const TrainingSet set = sine_training_set(1, 10);
  const GPHyper init = hyper1(1.3, 2.0, 0.2);
  const auto out = fit_hyperparameters(set.dyn_inputs, set.dyn_targets, init, 0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].lengthscales(0), 1.3);
  EXPECT_EQ(out[0].signal_var, 2.0);
  EXPECT_EQ(out[0].noise_var, 0.2);
}

TEST(Fit, NeedsTwoPoints) {
  EXPECT_THROW(fit_hyperparameters(Matrix::Zero(1, 1), Matrix::Zero(1, 1), hyper1(1, 1, 1), 10), ConfigError);
}

TEST(Fit, IncreasesMarginalLikelihood) {
  const TrainingSet set = sine_training_set(2, 30);
  const GPHyper init = hyper1(3.0, 1.0, 1.0);
  const auto out = fit_hyperparameters(set.dyn_inputs, set.dyn_targets, init, 200);
  const Vector y = set.dyn_targets.col(0);
  EXPECT_GT(log_marginal_likelihood(set.dyn_inputs, y, out[0]).value,
            log_marginal_likelihood(set.dyn_inputs, y, init).value + 1.0);
}

TEST(Fit, DeterministicGivenInit) {
  const TrainingSet set = sine_training_set(4, 20);
  const auto a = fit_hyperparameters(set.dyn_inputs, set.dyn_targets, hyper1(2.0, 1.0, 0.5), 100);
  const auto b = fit_hyperparameters(set.dyn_inputs, set.dyn_targets, hyper1(2.0, 1.0, 0.5), 100);
  EXPECT_EQ(to_log_params(a[0]), to_log_params(b[0]));
}

TEST(Fit, RecoversGeneratingHyperparameters) {
  // Draw one function from a known SE GP at 100 inputs and refit.
  const GPHyper truth = hyper1(1.0, 1.0, 0.01);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(-5.0, 5.0);
  const long n = 100;
  Matrix X(n, 1);
  for (long i = 0; i < n; ++i) X(i, 0) = uni(rng);
  Matrix K = detail::kernel_matrix(X, X, truth);
  K.diagonal().array() += truth.noise_var;
  const Matrix L = Eigen::LLT<Matrix>(K).matrixL();
  const Matrix Y = L * gpds::testing::random_vector(rng, n);
  const auto fitted = fit_hyperparameters(X, Y, hyper1(2.0, 0.5, 0.1), 500);
  const Vector diff = to_log_params(fitted[0]) - to_log_params(truth);
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 0.5) << diff.transpose();
}

TEST(Fit, ConstantTargetsCollapseSignal) {
  // Zero-mean GP: constant zero targets plus noise carry no signal.
  std::mt19937_64 rng(12);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::uniform_real_distribution<double> uni(-3.0, 3.0);
  const long n = 40;
  Matrix X(n, 1), Y(n, 1);
  for (long i = 0; i < n; ++i) {
    X(i, 0) = uni(rng);
    Y(i, 0) = noise(rng);
  }
  const auto fitted = fit_hyperparameters(X, Y, hyper1(1.0, 0.05, 0.05), 500);
  EXPECT_LT(fitted[0].signal_var / fitted[0].noise_var, 0.1);
}
