#include "koa/ridge.hpp"

#include <cmath>
#include <string>

#include "koa/error.hpp"

namespace koa {

RidgeModel ridge_fit(const Matrix& X, std::span<const double> y, double lambda) {
  const auto n = X.rows();
  const auto d = X.cols();
  if (n < 1) fail(ErrorCategory::Dimension, "ridge_fit needs at least one sample");
  if (static_cast<std::size_t>(n) != y.size()) fail(ErrorCategory::Dimension, "ridge_fit: row/target count mismatch");
  if (!(lambda >= 0.0) || std::isinf(lambda)) fail(ErrorCategory::Numeric, "ridge_fit: lambda must be finite and >= 0");
  if (!X.allFinite()) fail(ErrorCategory::Numeric, "ridge_fit: non-finite input");
  const Eigen::Map<const Vector> target(y.data(), n);
  if (!target.allFinite()) fail(ErrorCategory::Numeric, "ridge_fit: non-finite target");

  RidgeModel m;
  m.lambda = lambda;
  const Vector x_mean = X.colwise().mean().transpose();
  const double y_mean = target.mean();
  if (d == 0) {
    m.weights = Vector::Zero(0);
    m.bias = y_mean;
    return m;
  }
  const Matrix xc = X.rowwise() - x_mean.transpose();
  const Vector yc = target.array() - y_mean;
  Matrix gram = xc.transpose() * xc;
  gram.diagonal().array() += lambda;
  const Vector rhs = xc.transpose() * yc;

  Eigen::LDLT<Matrix> ldlt(gram);
  const double scale = std::max(1.0, gram.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13 ||
      ldlt.vectorD().minCoeff() <= 1e-13 * scale) {
    fail(ErrorCategory::Singular, "ridge_fit: normal equations are singular (lambda = " + std::to_string(lambda) +
                                      ", n = " + std::to_string(n) + ", d = " + std::to_string(d) + ")");
  }
  m.weights = ldlt.solve(rhs);
  m.bias = y_mean - x_mean.dot(m.weights);
  if (!m.weights.allFinite()) fail(ErrorCategory::Numeric, "ridge_fit produced non-finite weights");
  return m;
}

nlohmann::json to_json(const RidgeModel& model) {
  return {{"type", "ridge"}, {"weights", to_json_array(model.weights)}, {"bias", model.bias}, {"lambda", model.lambda}};
}

RidgeModel ridge_from_json(const nlohmann::json& j) {
  RidgeModel m;
  m.weights = vector_from_json(j.at("weights"));
  m.bias = j.at("bias").get<double>();
  m.lambda = j.at("lambda").get<double>();
  return m;
}

}  // namespace koa
