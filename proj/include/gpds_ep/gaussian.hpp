#pragma once

// Unnormalized multivariate Gaussians in moment and natural form.
//
// A moment-form Gaussian g represents the function  s * N(x | mean, cov)
// with s = exp(log_scale). The natural form represents
//     exp(log_const + shift' x - 0.5 x' precision x),
// which stays meaningful when the precision is zero (the unit message) or
// indefinite (cavity intermediates and EP sites with negative variance).

#include <cmath>
#include <optional>
#include <string>

#include "gpds_ep/errors.hpp"
#include "gpds_ep/linalg.hpp"

namespace gpds {

class NaturalGaussian;

class Gaussian {
 public:
  Gaussian(Vector mean, Matrix cov, double log_scale = 0.0)
      : mean_(std::move(mean)), cov_(symmetrize(cov)), log_scale_(log_scale) {
    require_same_dim(mean_.size(), cov_.rows(), "Gaussian mean/cov");
    require_same_dim(cov_.rows(), cov_.cols(), "Gaussian cov not square");
    if (mean_.size() == 0) throw DimensionMismatch("Gaussian: zero dimension");
  }

  /// N(0, inf*I): the flat unit factor. Has no moment form.
  static Gaussian improper(long dim, double log_scale = 0.0) {
    Gaussian g(Vector::Zero(dim), Matrix::Zero(dim, dim), log_scale);
    g.improper_ = true;
    return g;
  }

  long dim() const { return mean_.size(); }
  bool is_improper() const { return improper_; }
  double log_scale() const { return log_scale_; }

  const Vector& mean() const {
    check_proper();
    return mean_;
  }
  const Matrix& cov() const {
    check_proper();
    return cov_;
  }

  Gaussian with_log_scale(double log_scale) const {
    Gaussian g = *this;
    g.log_scale_ = log_scale;
    return g;
  }

  inline NaturalGaussian natural() const;

 private:
  void check_proper() const {
    if (improper_) throw NonPositiveDefinite("moments of an improper Gaussian requested");
  }

  Vector mean_;
  Matrix cov_;
  double log_scale_ = 0.0;
  bool improper_ = false;
};

class NaturalGaussian {
 public:
  NaturalGaussian(Matrix precision, Vector shift, double log_const = 0.0)
      : precision_(symmetrize(precision)), shift_(std::move(shift)), log_const_(log_const) {
    require_same_dim(shift_.size(), precision_.rows(), "NaturalGaussian shift/precision");
    require_same_dim(precision_.rows(), precision_.cols(), "NaturalGaussian precision not square");
  }

  static NaturalGaussian unit(long dim) {
    return NaturalGaussian(Matrix::Zero(dim, dim), Vector::Zero(dim), 0.0);
  }

  long dim() const { return shift_.size(); }
  const Matrix& precision() const { return precision_; }
  const Vector& shift() const { return shift_; }
  double log_const() const { return log_const_; }

  bool is_unit() const {
    return precision_.isZero(0.0) && shift_.isZero(0.0);
  }
  bool is_proper() const { return is_positive_definite(precision_); }

  /// log of the function value at x.
  double log_value(const Vector& x) const {
    return log_const_ + shift_.dot(x) - 0.5 * x.dot(precision_ * x);
  }

  /// Moment form when the precision is positive definite.
  std::optional<Gaussian> try_moments() const {
    if (is_unit()) return Gaussian::improper(dim(), log_const_);
    Eigen::LLT<Matrix> llt(precision_);
    if (llt.info() != Eigen::Success || !precision_.allFinite()) return std::nullopt;
    Matrix cov = symmetrize(llt.solve(Matrix::Identity(dim(), dim())));
    Vector mean = llt.solve(shift_);
    const double log_scale = log_const_ + 0.5 * static_cast<double>(dim()) * kLog2Pi -
                             0.5 * log_det_from_llt(llt) + 0.5 * shift_.dot(mean);
    return Gaussian(std::move(mean), std::move(cov), log_scale);
  }

  Gaussian to_moments() const {
    auto g = try_moments();
    if (!g) throw NonPositiveDefinite("natural Gaussian has no moment form (precision not PD)");
    return *g;
  }

  /// log s such that this equals s * N(mean, cov); requires a proper precision.
  double log_scale() const { return to_moments().log_scale(); }

  NaturalGaussian operator*(const NaturalGaussian& o) const {
    require_same_dim(dim(), o.dim(), "multiply");
    return NaturalGaussian(precision_ + o.precision_, shift_ + o.shift_, log_const_ + o.log_const_);
  }
  NaturalGaussian operator/(const NaturalGaussian& o) const {
    require_same_dim(dim(), o.dim(), "divide");
    return NaturalGaussian(precision_ - o.precision_, shift_ - o.shift_, log_const_ - o.log_const_);
  }

  /// Convex blend of natural parameters: weight * this + (1 - weight) * other.
  NaturalGaussian blend(const NaturalGaussian& other, double weight) const {
    require_same_dim(dim(), other.dim(), "blend");
    return NaturalGaussian(weight * precision_ + (1.0 - weight) * other.precision_,
                           weight * shift_ + (1.0 - weight) * other.shift_,
                           weight * log_const_ + (1.0 - weight) * other.log_const_);
  }

 private:
  Matrix precision_;
  Vector shift_;
  double log_const_ = 0.0;
};

inline NaturalGaussian Gaussian::natural() const {
  if (improper_) return NaturalGaussian(Matrix::Zero(dim(), dim()), Vector::Zero(dim()), log_scale_);
  const auto llt = robust_llt(cov_, "Gaussian::natural");
  Matrix precision = llt.solve(Matrix::Identity(dim(), dim()));
  Vector shift = llt.solve(mean_);
  const double log_const = log_scale_ - 0.5 * static_cast<double>(dim()) * kLog2Pi -
                           0.5 * log_det_from_llt(llt) - 0.5 * mean_.dot(shift);
  return NaturalGaussian(std::move(precision), std::move(shift), log_const);
}

/// Normalized product with the product's normalizing constant folded into log_scale.
inline Gaussian multiply(const Gaussian& a, const Gaussian& b) {
  require_same_dim(a.dim(), b.dim(), "multiply");
  if (b.is_improper()) return a.with_log_scale(a.log_scale() + b.log_scale());
  if (a.is_improper()) return b.with_log_scale(a.log_scale() + b.log_scale());
  auto product = (a.natural() * b.natural()).try_moments();
  if (!product) throw NonPositiveDefinite("multiply: sum of precisions not positive definite");
  return *product;
}

/// Quotient a / b in natural form; may be improper or indefinite.
inline NaturalGaussian divide(const Gaussian& a, const Gaussian& b) {
  require_same_dim(a.dim(), b.dim(), "divide");
  return a.natural() / b.natural();
}

inline double log_pdf(const Gaussian& g, const Vector& x) {
  require_same_dim(g.dim(), x.size(), "log_pdf");
  const auto llt = robust_llt(g.cov(), "log_pdf");
  const Vector diff = x - g.mean();
  const Vector half = llt.matrixL().solve(diff);
  return g.log_scale() -
         0.5 * (static_cast<double>(g.dim()) * kLog2Pi + log_det_from_llt(llt) + half.squaredNorm());
}

/// ||mean_a - mean_b||_2 + ||cov_a - cov_b||_F.
inline double moment_distance(const Gaussian& a, const Gaussian& b) {
  require_same_dim(a.dim(), b.dim(), "moment_distance");
  return (a.mean() - b.mean()).norm() + (a.cov() - b.cov()).norm();
}

}  // namespace gpds
