#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "gpds_ep/errors.hpp"
#include "gpds_ep/gaussian.hpp"

namespace gpds {

/// Mean over t of -log N(x_t | marginal_t). Rows of X are the true states.
inline double metric_nll_x(const std::vector<Gaussian>& marginals, const Matrix& X) {
  require_same_dim(static_cast<long>(marginals.size()), X.rows(), "metric_nll_x lengths");
  if (marginals.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < marginals.size(); ++t)
    total -= log_pdf(marginals[t].with_log_scale(0.0), X.row(static_cast<long>(t)).transpose());
  return total / static_cast<double>(marginals.size());
}

/// Mean over t and dimensions of |mean_t - x_t|.
inline double metric_mae_x(const std::vector<Gaussian>& marginals, const Matrix& X) {
  require_same_dim(static_cast<long>(marginals.size()), X.rows(), "metric_mae_x lengths");
  if (marginals.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < marginals.size(); ++t)
    total += (marginals[t].mean() - X.row(static_cast<long>(t)).transpose()).cwiseAbs().sum();
  return total / static_cast<double>(marginals.size() * static_cast<std::size_t>(X.cols()));
}

/// Mean over t of -log N(z_t | predictive_t).
inline double metric_nll_z(const std::vector<Gaussian>& predictives, const Matrix& Z) {
  return metric_nll_x(predictives, Z);
}

struct MeanAndError {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t count = 0;
};

/// Sample mean and its standard error sd / sqrt(n).
inline MeanAndError mean_and_standard_error(const std::vector<double>& values) {
  MeanAndError out;
  out.count = values.size();
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.standard_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  return out;
}

}  // namespace gpds
