#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "koa/linalg.hpp"

namespace koa {

struct LogisticOptions {
  int max_iterations = 5000;
  double gradient_tolerance = 1e-8;
  bool record_loss_history = false;
};

struct LogisticModel {
  Vector weights;
  double bias = 0.0;
  int iterations = 0;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // only when requested

  double margin(const Eigen::Ref<const Vector>& x) const { return weights.dot(x) + bias; }
  double predict_proba(const Eigen::Ref<const Vector>& x) const;
  Vector predict_proba_rows(const Matrix& X) const;
};

double sigmoid(double z) noexcept;

struct LogisticObjective {
  double loss = 0.0;
  Vector grad_weights;
  double grad_bias = 0.0;
};

// Mean negative log-likelihood plus (l2 / 2) * |w|^2; the bias is unpenalised.
LogisticObjective logistic_objective(const Matrix& X, std::span<const int> y, double l2, const Vector& w, double b);

// Full-batch gradient descent from zero with Barzilai-Borwein trial steps and
// Armijo backtracking, so the loss never increases between iterations.
// Throws DegenerateLabel when y holds one class, Numeric on non-finite input.
LogisticModel logreg_fit(const Matrix& X, std::span<const int> y, double l2, const LogisticOptions& opts = {});

nlohmann::json to_json(const LogisticModel& model);
LogisticModel logistic_from_json(const nlohmann::json& j);

}  // namespace koa
