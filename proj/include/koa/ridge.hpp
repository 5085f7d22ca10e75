#pragma once

#include <span>

#include <nlohmann/json.hpp>

#include "koa/linalg.hpp"

namespace koa {

struct RidgeModel {
  Vector weights;
  double bias = 0.0;
  double lambda = 0.0;

  double predict(const Eigen::Ref<const Vector>& x) const { return weights.dot(x) + bias; }
  Vector predict_rows(const Matrix& X) const { return (X * weights).array() + bias; }
};

// Exact solution of (Xc'Xc + lambda I) w = Xc'yc on centred data, so the bias
// is unpenalised. Throws Singular when the system is (numerically) singular.
RidgeModel ridge_fit(const Matrix& X, std::span<const double> y, double lambda);

nlohmann::json to_json(const RidgeModel& model);
RidgeModel ridge_from_json(const nlohmann::json& j);

}  // namespace koa
