#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "koa/dataset.hpp"
#include "koa/ensemble.hpp"
#include "koa/folds.hpp"

namespace koa {

struct FoldMetrics {
  int fold = 0;
  std::size_t n = 0;
  std::size_t positives = 0;
  double auc = 0.0;
  double ap = 0.0;
  double balanced_accuracy = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  FeatureConfigId config = FeatureConfigId::DemoOnly;
  Task task = Task::JslOnlyVsNon;
  std::size_t n = 0;
  // Pooled out-of-fold metrics.
  double auc = 0.0;
  double ap = 0.0;
  double balanced_accuracy = 0.0;
  double f1 = 0.0;
  std::vector<FoldMetrics> per_fold;
  // Pooled OOF AUC of each expert inside this configuration.
  std::map<ExpertKind, double> expert_auc;
  std::size_t leakage_violations = 0;
};

MetricsReport compute_metrics(std::span<const double> scores, std::span<const int> labels, const FoldPlan& plan);

struct OofEvaluation {
  FeatureConfig config;
  FoldPlan outer;
  std::vector<double> stacked;                           // pooled OOF scores
  std::map<ExpertKind, std::vector<double>> expert_oof;  // pooled OOF per expert
  std::vector<FittedExpert> fold_tabular;                // outer-fold tabular experts
  std::vector<std::string> tabular_features;
  ProvenanceLog provenance;
  MetricsReport report;
};

// Nested out-of-fold evaluation: for every outer fold, the stacking model
// (inner k-fold meta-features, refit experts) is trained on the outer
// training rows only and scores the held-out rows.
OofEvaluation evaluate_stacking_oof(const DatasetFeatures& features, const FeatureConfig& config, const FoldPlan& outer,
                                    const StackingParams& params, ExpertCache* cache = nullptr);

struct AblationOptions {
  int k = 5;
  StackingParams params{};
  unsigned threads = 0;  // 0: hardware concurrency
};

struct AblationResult {
  std::vector<MetricsReport> reports;  // input config order
  std::vector<OofEvaluation> evaluations;
};

// One report per configuration, all sharing a single outer fold plan derived
// from `seed`.
AblationResult run_ablation_detailed(const Cohort& cohort, TaskSpec task, const std::vector<FeatureConfigId>& configs,
                                     std::uint64_t seed, const AblationOptions& options = {});
std::vector<MetricsReport> run_ablation(const Cohort& cohort, TaskSpec task,
                                        const std::vector<FeatureConfigId>& configs, std::uint64_t seed,
                                        const AblationOptions& options = {});

struct RankedFeature {
  std::string feature;
  double mean_importance = 0.0;
};

// Per-feature normalised importance averaged over the fold experts, sorted
// descending (ties by name). top_n == 0 keeps everything.
std::vector<RankedFeature> feature_importance_report(std::span<const FittedExpert> fold_experts,
                                                     std::size_t top_n = 20);

// Table grid with AUC, AP, BalAcc@0.5, F1@0.5 per task, one row per config.
std::string format_ablation_grid(const std::vector<MetricsReport>& jsl, const std::vector<MetricsReport>& pain);
std::string ablation_tsv(const std::vector<MetricsReport>& reports);
nlohmann::json to_json(const MetricsReport& report);

}  // namespace koa
