#pragma once

#include <span>

#include "haar/common.hpp"

namespace haar {

inline constexpr double kDefaultRidge = 1e-5;

/// V(s) = W3.s^3 + W2.s^2 + W1.s + W0 with elementwise powers, no cross terms.
struct PolynomialValueEstimator {
  Vector w3;
  Vector w2;
  Vector w1;
  double w0 = 0.0;

  static PolynomialValueEstimator zeros(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(w1.size()); }
  double predict(std::span<const double> s) const;
  /// One prediction per column of `states`.
  Vector predict_batch(const Matrix& states) const;
};

/// Ridge least squares over features [s^3, s^2, s, 1]; `states` has one
/// column per sample. Throws on an empty or misaligned batch.
PolynomialValueEstimator fit_value(const Matrix& states, const Vector& targets, double ridge = kDefaultRidge);

double mean_squared_error(const PolynomialValueEstimator& est, const Matrix& states, const Vector& targets);

}  // namespace haar
