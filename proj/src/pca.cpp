#include "koa/pca.hpp"

#include <cmath>
#include <string>

#include "koa/error.hpp"

namespace koa {

namespace {

void fix_sign(Eigen::Ref<Vector> component) {
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < component.size(); ++i) {
    if (std::abs(component[i]) > std::abs(component[arg])) arg = i;
  }
  if (component[arg] < 0.0) component = -component;
}

}  // namespace

PcaModel pca_fit(const Matrix& X, Eigen::Index k) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 2) fail(ErrorCategory::Dimension, "pca_fit needs at least 2 samples, got " + std::to_string(n));
  if (k < 1 || k > std::min(n - 1, d)) {
    fail(ErrorCategory::Dimension, "pca_fit: k = " + std::to_string(k) + " outside [1, " +
                                       std::to_string(std::min(n - 1, d)) + "]");
  }
  if (!X.allFinite()) fail(ErrorCategory::Numeric, "pca_fit: non-finite input");

  PcaModel model;
  model.mean = X.colwise().mean().transpose();
  const Matrix centered = X.rowwise() - model.mean.transpose();
  const double denom = static_cast<double>(n - 1);
  model.components.resize(k, d);
  model.explained_variance.resize(k);

  if (d <= n) {
    const Matrix cov = (centered.transpose() * centered) / denom;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) fail(ErrorCategory::Numeric, "pca_fit: eigendecomposition failed");
    for (Eigen::Index c = 0; c < k; ++c) {
      const Eigen::Index src = d - 1 - c;  // eigenvalues come ascending
      model.explained_variance[c] = std::max(0.0, eig.eigenvalues()[src]);
      model.components.row(c) = eig.eigenvectors().col(src).transpose();
    }
  } else {
    // Wide data: eigendecompose the n x n Gram matrix and map back.
    const Matrix gram = (centered * centered.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    if (eig.info() != Eigen::Success) fail(ErrorCategory::Numeric, "pca_fit: eigendecomposition failed");
    for (Eigen::Index c = 0; c < k; ++c) {
      const Eigen::Index src = n - 1 - c;
      const double lambda = eig.eigenvalues()[src];
      model.explained_variance[c] = std::max(0.0, lambda);
      Vector v = centered.transpose() * eig.eigenvectors().col(src);
      // Re-orthogonalise against earlier components; the mapped vectors lose
      // orthogonality when eigenvalues are small.
      for (Eigen::Index p = 0; p < c; ++p) v -= model.components.row(p).dot(v) * model.components.row(p).transpose();
      const double norm = v.norm();
      if (!(norm > 0.0)) fail(ErrorCategory::Numeric, "pca_fit: component " + std::to_string(c) + " is degenerate");
      model.components.row(c) = (v / norm).transpose();
    }
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    Vector row = model.components.row(c).transpose();
    fix_sign(row);
    model.components.row(c) = row.transpose();
  }
  return model;
}

Matrix PcaModel::transform(const Matrix& X) const {
  if (X.cols() != mean.size()) {
    fail(ErrorCategory::Dimension, "pca_transform: input has " + std::to_string(X.cols()) + " columns, model expects " +
                                       std::to_string(mean.size()));
  }
  return (X.rowwise() - mean.transpose()) * components.transpose();
}

Matrix PcaModel::inverse_transform(const Matrix& Z) const {
  if (Z.cols() != components.rows()) fail(ErrorCategory::Dimension, "pca inverse_transform: dimension mismatch");
  return (Z * components).rowwise() + mean.transpose();
}

Matrix pca_transform(const PcaModel& model, const Matrix& X) { return model.transform(X); }

nlohmann::json to_json(const PcaModel& model) {
  return {
      {"type", "pca"},
      {"input_dim", model.input_dim()},
      {"mean", to_json_array(model.mean)},
      {"components", to_json_array(model.components)},
      {"explained_variance", to_json_array(model.explained_variance)},
  };
}

PcaModel pca_from_json(const nlohmann::json& j) {
  PcaModel m;
  m.mean = vector_from_json(j.at("mean"));
  m.components = matrix_from_json(j.at("components"), j.at("input_dim").get<Eigen::Index>());
  m.explained_variance = vector_from_json(j.at("explained_variance"));
  return m;
}

}  // namespace koa
