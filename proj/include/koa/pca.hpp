#pragma once

#include <nlohmann/json.hpp>

#include "koa/linalg.hpp"

namespace koa {

struct PcaModel {
  Vector mean;                // d
  Matrix components;          // k x d, orthonormal rows
  Vector explained_variance;  // k, descending; sample covariance (n - 1) eigenvalues

  Eigen::Index input_dim() const noexcept { return mean.size(); }
  Eigen::Index output_dim() const noexcept { return components.rows(); }

  // Row i of the result is components * (X_i - mean).
  Matrix transform(const Matrix& X) const;
  Matrix inverse_transform(const Matrix& Z) const;
};

// Top-k eigenvectors of the sample covariance of X (n x d). Each component is
// signed so its largest-magnitude entry is positive.
// Throws Dimension when n < 2 or k is outside [1, min(n - 1, d)], Numeric on
// non-finite input.
PcaModel pca_fit(const Matrix& X, Eigen::Index k);

Matrix pca_transform(const PcaModel& model, const Matrix& X);

nlohmann::json to_json(const PcaModel& model);
PcaModel pca_from_json(const nlohmann::json& j);

}  // namespace koa
