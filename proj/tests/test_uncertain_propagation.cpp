#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gpds_ep/benchmark_systems.hpp"
#include "gpds_ep/uncertain_propagation.hpp"
#include "test_support.hpp"

using namespace gpds;
using gpds::testing::gp_on_grid;
using gpds::testing::hyper1;
using gpds::testing::max_abs;

namespace {

Gaussian scalar(double mean, double var) { return Gaussian(Vector::Constant(1, mean), Matrix::Constant(1, 1, var)); }

TrainedGP linear_gp(double slope) {
  return gp_on_grid([slope](double x) { return slope * x; }, 81, -8.0, 8.0, hyper1(4.0, 400.0, 1e-6));
}

TrainedGP sine_gp(std::uint64_t seed) {
  const TrainingSet set = sine_training_set(seed, 30);
  return TrainedGP(set.dyn_inputs, set.dyn_targets, {hyper1(1.0, 8.0, 0.01)});
}

/// Every entry of `pred` within k standard errors of the Monte-Carlo oracle.
void expect_within_mc(const UncertainPrediction& pred, const MonteCarloPrediction& mc, double k) {
  const auto& ref = mc.prediction;
  for (long a = 0; a < pred.mean.size(); ++a)
    EXPECT_LE(std::abs(pred.mean(a) - ref.mean(a)), k * mc.mean_se(a) + 1e-12) << "mean " << a;
  for (long a = 0; a < pred.cov.rows(); ++a)
    for (long b = 0; b < pred.cov.cols(); ++b)
      EXPECT_LE(std::abs(pred.cov(a, b) - ref.cov(a, b)), k * mc.cov_se(a, b) + 1e-12) << "cov " << a << b;
  for (long i = 0; i < pred.cross_cov.rows(); ++i)
    for (long a = 0; a < pred.cross_cov.cols(); ++a)
      EXPECT_LE(std::abs(pred.cross_cov(i, a) - ref.cross_cov(i, a)), k * mc.cross_cov_se(i, a) + 1e-12)
          << "cross " << i << a;
}

void expect_jacobian_consistent(const UncertainPrediction& p, const Gaussian& input) {
  EXPECT_LT(max_abs(p.jacobian * input.cov() - p.cross_cov.transpose()), 1e-8);
}

void expect_joint_psd(const UncertainPrediction& p, const Gaussian& input) {
  const long d = input.dim();
  const long e = p.mean.size();
  Matrix joint(d + e, d + e);
  joint << input.cov(), p.cross_cov, p.cross_cov.transpose(), p.cov;
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(joint);
  EXPECT_GT(eig.eigenvalues().minCoeff(), -1e-8);
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Matrix>(p.cov).eigenvalues().minCoeff(), 0.0);
}

}  // namespace

TEST(MomentMatching, DeltaInputReducesToPointPrediction) {
  const TrainedGP gp = sine_gp(1);
  const Gaussian input = scalar(0.7, 1e-12);
  const UncertainPrediction p = predict_moment_matched(gp, input);
  const PointPrediction point = predict_point(gp, input.mean());
  EXPECT_NEAR(p.mean(0), point.mean(0), 1e-6);
  EXPECT_NEAR(p.cov(0, 0), point.var(0), 1e-6);
}

TEST(MomentMatching, EmptyGpRevertsToPrior) {
  const TrainedGP gp(Matrix(0, 2), Matrix(0, 2),
                     {GPHyper{Eigen::Vector2d(1, 1), 2.0, 0.1}, GPHyper{Eigen::Vector2d(1, 1), 3.0, 0.2}});
  const Gaussian input(Eigen::Vector2d(0.5, -1.0), Matrix::Identity(2, 2));
  const UncertainPrediction p = predict_moment_matched(gp, input);
  EXPECT_LT(p.mean.norm(), 1e-15);
  EXPECT_NEAR(p.cov(0, 0), 2.1, 1e-14);
  EXPECT_NEAR(p.cov(1, 1), 3.2, 1e-14);
  EXPECT_NEAR(p.cov(0, 1), 0.0, 1e-15);
  EXPECT_LT(max_abs(p.cross_cov), 1e-15);
}

TEST(MomentMatching, SineGpAgreesWithMonteCarlo) {
  const TrainedGP gp = sine_gp(2);
  const Gaussian input = scalar(0.5, 0.04);
  const UncertainPrediction p = predict_moment_matched(gp, input);
  const MonteCarloPrediction mc = predict_monte_carlo_with_errors(gp, input, 1000000, 99);
  expect_within_mc(p, mc, 3.0);
}

TEST(MomentMatching, ImproperInputThrows) {
  EXPECT_THROW(predict_moment_matched(sine_gp(1), Gaussian::improper(1)), NonPositiveDefinite);
}

TEST(MomentMatching, InputDimensionMismatchThrows) {
  EXPECT_THROW(predict_moment_matched(sine_gp(1), Gaussian(Vector::Zero(2), Matrix::Identity(2, 2))),
               DimensionMismatch);
}

TEST(MomentMatching, ControlInputsAreDeterministic) {
  std::mt19937_64 rng(21);
  const TrainedGP gp = gpds::testing::random_gp(rng, 3, 2, 30);
  const Gaussian state(Eigen::Vector2d(0.2, -0.4), gpds::testing::random_spd(rng, 2, 0.1) * 0.3);
  const Vector control = Vector::Constant(1, 0.8);
  const UncertainPrediction p = predict_moment_matched(gp, state, control);
  EXPECT_EQ(p.cross_cov.rows(), 2);
  EXPECT_EQ(p.jacobian.cols(), 2);
  const MonteCarloPrediction mc = predict_monte_carlo_with_errors(gp, state, 400000, 5, control);
  expect_within_mc(p, mc, 4.0);
  expect_jacobian_consistent(p, state);
}

TEST(Linearization, LinearFunctionPropagation) {
  const TrainedGP gp = linear_gp(2.0);
  const UncertainPrediction p = predict_linearized(gp, scalar(1.0, 0.25));
  EXPECT_NEAR(p.mean(0), 2.0, 0.02 * 2.0);
  EXPECT_NEAR(p.cov(0, 0), 1.0, 0.02 * 1.0);
  EXPECT_NEAR(p.jacobian(0, 0), 2.0, 0.02 * 2.0);
}

TEST(Linearization, DeltaInput) {
  const TrainedGP gp = sine_gp(3);
  const Gaussian input = scalar(-0.3, 1e-14);
  const UncertainPrediction p = predict_linearized(gp, input);
  const PointPrediction point = predict_point(gp, input.mean());
  EXPECT_DOUBLE_EQ(p.mean(0), point.mean(0));
  EXPECT_NEAR(p.cov(0, 0), point.var(0), 1e-10);
}

TEST(Linearization, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const TrainedGP gp = gpds::testing::random_gp(rng, 2, 2, 20);
  const Vector mu = Eigen::Vector2d(0.3, -0.6);
  const UncertainPrediction p = predict_linearized(gp, Gaussian(mu, 0.1 * Matrix::Identity(2, 2)));
  const double h = 1e-5;
  for (long k = 0; k < 2; ++k) {
    Vector hi = mu, lo = mu;
    hi(k) += h;
    lo(k) -= h;
    const Vector fd = (predict_point(gp, hi).mean - predict_point(gp, lo).mean) / (2.0 * h);
    for (long a = 0; a < 2; ++a) EXPECT_NEAR(p.jacobian(a, k), fd(a), 1e-5);
  }
}

TEST(MonteCarlo, SameSeedIsBitIdentical) {
  const TrainedGP gp = sine_gp(5);
  const auto a = predict_monte_carlo(gp, scalar(0.1, 0.3), 5000, 17);
  const auto b = predict_monte_carlo(gp, scalar(0.1, 0.3), 5000, 17);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.cov, b.cov);
  EXPECT_EQ(a.cross_cov, b.cross_cov);
}

TEST(MonteCarlo, DeltaInputReproducesPointPrediction) {
  const TrainedGP gp = sine_gp(5);
  const Gaussian input = scalar(1.1, 1e-14);
  const auto p = predict_monte_carlo(gp, input, 2000, 3);
  const PointPrediction point = predict_point(gp, input.mean());
  EXPECT_NEAR(p.mean(0), point.mean(0), 1e-5);
  EXPECT_NEAR(p.cov(0, 0), point.var(0), 1e-5);
}

TEST(MonteCarlo, LinearGpMatchesClosedForm) {
  const TrainedGP gp = linear_gp(2.0);
  const Gaussian input = scalar(1.0, 0.25);
  const MonteCarloPrediction mc = predict_monte_carlo_with_errors(gp, input, 1000000, 8);
  // Closed form for f(x) = 2x plus the (small, nearly constant) GP variance.
  const double noise = predict_point(gp, input.mean()).var(0);
  EXPECT_LE(std::abs(mc.prediction.mean(0) - 2.0), 3.0 * mc.mean_se(0) + 1e-3);
  EXPECT_LE(std::abs(mc.prediction.cov(0, 0) - (1.0 + noise)), 3.0 * mc.cov_se(0, 0) + 1e-3);
  EXPECT_LE(std::abs(mc.prediction.cross_cov(0, 0) - 0.5), 3.0 * mc.cross_cov_se(0, 0) + 1e-3);
}

TEST(MonteCarlo, RejectsTooFewSamples) { EXPECT_THROW(predict_monte_carlo(sine_gp(1), scalar(0, 1), 1, 0), ConfigError); }

TEST(Methods, AgreeOnLinearMean) {
  const TrainedGP gp = linear_gp(-1.5);
  const Gaussian input = scalar(0.5, 0.3);
  const UncertainPrediction mm = predict_moment_matched(gp, input);
  const UncertainPrediction lin = predict_linearized(gp, input);
  EXPECT_NEAR(mm.mean(0), lin.mean(0), 0.01 * std::abs(lin.mean(0)));
  EXPECT_NEAR(mm.cov(0, 0), lin.cov(0, 0), 0.01 * lin.cov(0, 0));
  EXPECT_NEAR(mm.cross_cov(0, 0), lin.cross_cov(0, 0), 0.01 * std::abs(lin.cross_cov(0, 0)));
}

TEST(Methods, DispatchByKind) {
  const TrainedGP gp = sine_gp(6);
  const Gaussian input = scalar(0.2, 0.1);
  EXPECT_EQ(predict(gp, input, PredictMethod::moment_matching()).mean, predict_moment_matched(gp, input).mean);
  EXPECT_EQ(predict(gp, input, PredictMethod::linearization()).mean, predict_linearized(gp, input).mean);
  EXPECT_EQ(predict(gp, input, PredictMethod::monte_carlo(100, 4)).mean, predict_monte_carlo(gp, input, 100, 4).mean);
}

// ---------------------------------------------------------------------------
// Properties over random GPs and inputs

class PropagationProperty : public ::testing::TestWithParam<int> {};

TEST_P(PropagationProperty, JacobianAndJointCovariance) {
  std::mt19937_64 rng(700 + GetParam());
  const long din = 1 + GetParam() % 2;
  const long dout = 1 + (GetParam() / 2) % 2;
  const TrainedGP gp = gpds::testing::random_gp(rng, din, dout, 25);
  const Gaussian input(gpds::testing::random_vector(rng, din) * 0.5,
                       gpds::testing::random_spd(rng, din, 0.05) * 0.5);
  for (const auto& method : {PredictMethod::moment_matching(), PredictMethod::linearization(),
                             PredictMethod::monte_carlo(20000, 9)}) {
    const UncertainPrediction p = predict(gp, input, method);
    expect_jacobian_consistent(p, input);
    expect_joint_psd(p, input);
  }
}

TEST_P(PropagationProperty, MomentMatchingWithinMonteCarloErrors) {
  std::mt19937_64 rng(800 + GetParam());
  const long din = 1 + GetParam() % 2;
  const long dout = 1 + (GetParam() / 2) % 2;
  const TrainedGP gp = gpds::testing::random_gp(rng, din, dout, 20);
  const Gaussian input(gpds::testing::random_vector(rng, din) * 0.5,
                       gpds::testing::random_spd(rng, din, 0.05) * 0.5);
  const MonteCarloPrediction mc =
      predict_monte_carlo_with_errors(gp, input, 200000, 1000 + static_cast<std::uint64_t>(GetParam()));
  expect_within_mc(predict_moment_matched(gp, input), mc, 4.0);
}

INSTANTIATE_TEST_SUITE_P(Random, PropagationProperty, ::testing::Range(0, 8));
