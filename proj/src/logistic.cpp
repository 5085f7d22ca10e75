#include "koa/logistic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "koa/error.hpp"

namespace koa {

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) noexcept { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double LogisticModel::predict_proba(const Eigen::Ref<const Vector>& x) const { return sigmoid(margin(x)); }

Vector LogisticModel::predict_proba_rows(const Matrix& X) const {
  Vector z = (X * weights).array() + bias;
  Vector p(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) p[i] = sigmoid(z[i]);
  return p;
}

LogisticObjective logistic_objective(const Matrix& X, std::span<const int> y, double l2, const Vector& w, double b) {
  const auto n = X.rows();
  const Vector z = (X * w).array() + b;
  Vector residual(n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double zi = z[i];
    loss += y[static_cast<std::size_t>(i)] ? softplus(-zi) : softplus(zi);
    residual[i] = sigmoid(zi) - static_cast<double>(y[static_cast<std::size_t>(i)]);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  LogisticObjective out;
  out.loss = loss * inv_n + 0.5 * l2 * w.squaredNorm();
  out.grad_weights = X.transpose() * residual * inv_n + l2 * w;
  out.grad_bias = residual.sum() * inv_n;
  return out;
}

LogisticModel logreg_fit(const Matrix& X, std::span<const int> y, double l2, const LogisticOptions& opts) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) {
    fail(ErrorCategory::Dimension, "logreg_fit: " + std::to_string(X.rows()) + " rows but " + std::to_string(y.size()) +
                                       " labels");
  }
  if (!X.allFinite()) fail(ErrorCategory::Numeric, "logreg_fit: non-finite input");
  if (!(l2 >= 0.0)) fail(ErrorCategory::Numeric, "logreg_fit: negative regularisation");
  const auto positives = std::count(y.begin(), y.end(), 1);
  if (positives == 0 || positives == static_cast<long>(y.size())) {
    fail(ErrorCategory::DegenerateLabel, "logreg_fit: labels contain a single class");
  }

  const auto d = X.cols();
  LogisticModel m;
  m.weights = Vector::Zero(d);
  m.bias = 0.0;
  auto obj = logistic_objective(X, y, l2, m.weights, m.bias);
  if (opts.record_loss_history) m.loss_history.push_back(obj.loss);

  constexpr double kArmijo = 1e-4;
  double step = 1.0;
  Vector prev_w;
  double prev_b = 0.0;
  Vector prev_gw;
  double prev_gb = 0.0;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    const double gnorm2 = obj.grad_weights.squaredNorm() + obj.grad_bias * obj.grad_bias;
    if (std::sqrt(gnorm2) < opts.gradient_tolerance) break;
    if (it > 0) {
      const Vector sw = m.weights - prev_w;
      const double sb = m.bias - prev_b;
      const Vector yw = obj.grad_weights - prev_gw;
      const double yb = obj.grad_bias - prev_gb;
      const double sy = sw.dot(yw) + sb * yb;
      const double ss = sw.squaredNorm() + sb * sb;
      if (sy > 0.0 && std::isfinite(ss / sy)) step = ss / sy;
    }
    prev_w = m.weights;
    prev_b = m.bias;
    prev_gw = obj.grad_weights;
    prev_gb = obj.grad_bias;

    LogisticObjective trial;
    Vector w_trial;
    double b_trial = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      w_trial = m.weights - step * obj.grad_weights;
      b_trial = m.bias - step * obj.grad_bias;
      trial = logistic_objective(X, y, l2, w_trial, b_trial);
      if (trial.loss <= obj.loss - kArmijo * step * gnorm2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no representable descent step remains
    m.weights = std::move(w_trial);
    m.bias = b_trial;
    obj = std::move(trial);
    if (opts.record_loss_history) m.loss_history.push_back(obj.loss);
  }
  m.iterations = it;
  m.final_loss = obj.loss;
  if (!m.weights.allFinite() || !std::isfinite(m.bias)) fail(ErrorCategory::Numeric, "logreg_fit diverged");
  return m;
}

nlohmann::json to_json(const LogisticModel& model) {
  return {
      {"type", "logistic"},
      {"weights", to_json_array(model.weights)},
      {"bias", model.bias},
      {"iterations", model.iterations},
      {"final_loss", model.final_loss},
  };
}

LogisticModel logistic_from_json(const nlohmann::json& j) {
  LogisticModel m;
  m.weights = vector_from_json(j.at("weights"));
  m.bias = j.at("bias").get<double>();
  m.iterations = j.value("iterations", 0);
  m.final_loss = j.value("final_loss", 0.0);
  return m;
}

}  // namespace koa
