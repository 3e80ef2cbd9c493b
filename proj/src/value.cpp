#include "haar/value.hpp"

#include <Eigen/Cholesky>

namespace haar {

PolynomialValueEstimator PolynomialValueEstimator::zeros(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  return {Vector::Zero(d), Vector::Zero(d), Vector::Zero(d), 0.0};
}

double PolynomialValueEstimator::predict(std::span<const double> s) const {
  if (s.size() != dim()) throw ShapeError("value_predict: state dimension mismatch");
  double v = w0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double x = s[i];
    v += w3[k] * x * x * x + w2[k] * x * x + w1[k] * x;
  }
  return v;
}

Vector PolynomialValueEstimator::predict_batch(const Matrix& states) const {
  if (static_cast<std::size_t>(states.rows()) != dim()) throw ShapeError("value_predict: state dimension mismatch");
  const Eigen::ArrayXXd x = states.array();
  Vector out = (w1.transpose() * states).transpose();
  out += (w2.transpose() * x.square().matrix()).transpose();
  out += (w3.transpose() * x.cube().matrix()).transpose();
  out.array() += w0;
  return out;
}

PolynomialValueEstimator fit_value(const Matrix& states, const Vector& targets, double ridge) {
  const Eigen::Index n = states.cols();
  const Eigen::Index d = states.rows();
  if (n == 0) throw std::invalid_argument("fit_value: empty batch");
  if (targets.size() != n) throw ShapeError("fit_value: targets do not align with states");
  if (ridge < 0.0) throw std::invalid_argument("fit_value: ridge must be non-negative");

  const Eigen::Index f = 3 * d + 1;
  Matrix phi(f, n);
  const Eigen::ArrayXXd x = states.array();
  phi.topRows(d) = x.cube().matrix();
  phi.middleRows(d, d) = x.square().matrix();
  phi.middleRows(2 * d, d) = states;
  phi.bottomRows(1).setOnes();

  Matrix gram = phi * phi.transpose();
  gram.diagonal().array() += ridge;
  const Vector rhs = phi * targets;
  const Vector w = gram.ldlt().solve(rhs);
  if (!w.allFinite()) throw NumericError("fit_value: normal equations produced non-finite weights");

  PolynomialValueEstimator est;
  est.w3 = w.segment(0, d);
  est.w2 = w.segment(d, d);
  est.w1 = w.segment(2 * d, d);
  est.w0 = w[3 * d];
  return est;
}

double mean_squared_error(const PolynomialValueEstimator& est, const Matrix& states, const Vector& targets) {
  if (targets.size() == 0) return 0.0;
  return (est.predict_batch(states) - targets).squaredNorm() / static_cast<double>(targets.size());
}

}  // namespace haar
