#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "koa/linalg.hpp"

namespace koa {

enum class GbdtLoss { Logistic, Squared };

struct GbdtParams {
  int n_trees = 500;
  int max_depth = 4;
  double learning_rate = 0.05;
  double subsample = 0.8;  // row fraction per tree, without replacement
  std::uint64_t seed = 0;
  double l2_leaf = 1.0;
  double min_child_hessian = 1e-3;
  int min_samples_leaf = 2;
  double min_split_gain = 1e-12;
  GbdtLoss loss = GbdtLoss::Logistic;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x <= threshold goes left
  bool missing_left = true;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output, already scaled by the learning rate
  double gain = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> row) const;
  int depth() const;
};

struct GbdtModel {
  GbdtLoss loss = GbdtLoss::Logistic;
  double base_score = 0.0;
  double learning_rate = 0.05;
  int max_depth = 4;
  std::vector<RegressionTree> trees;
  // Total split gain (second-order loss reduction) attributed to each feature.
  std::vector<double> gain_importance;

  std::size_t n_features() const noexcept { return gain_importance.size(); }
  double predict_margin(std::span<const double> row) const;
  // Probability for the logistic loss, raw prediction for squared loss.
  double predict(std::span<const double> row) const;
  Vector predict(const Matrix& X) const;

  // gain_importance scaled to sum to 100. All zeros when no split was made.
  std::vector<double> normalized_importance() const;
};

// Stagewise boosting with Newton leaf values. NaN entries of X are missing;
// every split learns which side missing values follow. Deterministic for a
// fixed params.seed. For the logistic loss, y must hold both classes.
GbdtModel gbdt_fit(const Matrix& X, std::span<const double> y, const GbdtParams& params);
GbdtModel gbdt_fit(const Matrix& X, std::span<const int> y, const GbdtParams& params);

double logistic_log_loss(const GbdtModel& model, const Matrix& X, std::span<const int> y);

nlohmann::json to_json(const GbdtModel& model);
GbdtModel gbdt_from_json(const nlohmann::json& j);

}  // namespace koa
