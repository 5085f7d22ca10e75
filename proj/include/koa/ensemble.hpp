#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "koa/dataset.hpp"
#include "koa/folds.hpp"
#include "koa/gbdt.hpp"
#include "koa/linalg.hpp"
#include "koa/logistic.hpp"
#include "koa/pca.hpp"

namespace koa {

enum class ExpertKind { Tabular, MriEmbedding, XrayEmbedding };
std::string_view expert_name(ExpertKind kind);  // "T", "M", "X"

enum class FeatureConfigId { DemoOnly, DemoMri, DemoXray, DemoScalars, TMX, TMXBio };
inline constexpr std::array<FeatureConfigId, 6> kAllFeatureConfigs = {
    FeatureConfigId::DemoOnly,    FeatureConfigId::DemoMri, FeatureConfigId::DemoXray,
    FeatureConfigId::DemoScalars, FeatureConfigId::TMX,     FeatureConfigId::TMXBio};

struct FeatureConfig {
  FeatureConfigId id = FeatureConfigId::DemoOnly;
  std::vector<Block> tabular_blocks;
  bool mri = false;
  bool xray = false;

  static FeatureConfig of(FeatureConfigId id);
  std::vector<ExpertKind> experts() const;
  std::string_view name() const noexcept;   // CLI spelling, e.g. "demo+mri"
  std::string_view label() const noexcept;  // table row label
};

std::string_view config_name(FeatureConfigId id);
std::optional<FeatureConfigId> parse_feature_config(std::string_view name);

// Dense per-block views of a LabeledDataset. Rows follow dataset order.
struct DatasetFeatures {
  std::array<std::vector<std::string>, 4> columns;
  std::array<Matrix, 4> blocks;  // NaN marks missing
  Matrix mri;                    // zero rows where missing
  Matrix xray;
  std::vector<bool> mri_missing;
  std::vector<bool> xray_missing;
  std::vector<int> labels;

  static DatasetFeatures from(const LabeledDataset& data);
  std::size_t size() const noexcept { return labels.size(); }
  Matrix tabular(std::span<const Block> blocks, std::span<const std::size_t> rows) const;
  std::vector<std::string> tabular_names(std::span<const Block> blocks) const;  // "rad.kl_grade"
};

struct ExpertParams {
  GbdtParams gbdt{};
  Eigen::Index pca_dims = 64;
  double logistic_l2 = 0.05;
  LogisticOptions logistic{};
  // Scale principal-component scores to unit variance before the logistic fit.
  bool whiten = true;
};

struct StackingParams {
  ExpertParams experts{};
  double meta_l2 = 1e-3;
  LogisticOptions meta{};
  int inner_k = 5;
  std::uint64_t seed = 0;
};

class FittedExpert {
 public:
  ExpertKind kind = ExpertKind::Tabular;
  // Tabular
  std::vector<Block> blocks;
  std::vector<std::string> feature_names;
  std::optional<GbdtModel> gbdt;
  // Embedding
  std::optional<PcaModel> pca;
  Vector scale;
  std::optional<LogisticModel> logistic;
  double prevalence = 0.5;  // fallback output for missing modality

  bool modality_missing(const KneeRecord& record) const;
  double predict(const KneeRecord& record) const;
  // Predictions for dataset rows, equal elementwise to predict(record).
  std::vector<double> predict_rows(const DatasetFeatures& features, std::span<const std::size_t> rows) const;
  std::vector<int> missing_flags(const DatasetFeatures& features, std::span<const std::size_t> rows) const;
};

// Record of which training rows produced each out-of-fold prediction. Rows
// are positions in the LabeledDataset under evaluation.
class ProvenanceLog {
 public:
  struct Model {
    std::string tag;
    std::vector<std::size_t> train_rows;  // sorted
  };
  struct Use {
    std::size_t row;
    std::size_t model;
    std::string purpose;
  };

  std::size_t add_model(std::string tag, std::vector<std::size_t> train_rows);
  void add_use(std::size_t row, std::size_t model, std::string purpose);
  void append(const ProvenanceLog& other);

  const std::vector<Model>& models() const noexcept { return models_; }
  const std::vector<Use>& uses() const noexcept { return uses_; }
  // Uses whose row appears in the producing model's training rows.
  std::size_t violations() const;

 private:
  std::vector<Model> models_;
  std::vector<Use> uses_;
};

struct ExpertTraining {
  FittedExpert expert;       // refit on every row
  std::vector<double> oof;   // aligned with the `rows` passed in
  std::vector<int> missing;  // modality-missing flag per row
  ProvenanceLog provenance;
};

// Memoises expert training across feature configurations that share an
// expert (same kind, blocks, rows and fold plan). Thread-safe.
class ExpertCache {
 public:
  std::shared_ptr<const ExpertTraining> find(const std::string& key) const;
  void store(const std::string& key, std::shared_ptr<const ExpertTraining> value);

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const ExpertTraining>> entries_;
};

FittedExpert fit_expert(ExpertKind kind, std::span<const Block> blocks, const DatasetFeatures& features,
                        std::span<const std::size_t> rows, const ExpertParams& params, std::uint64_t seed);

// `plan` partitions positions of `rows`. Each oof value comes from the fold
// model that excludes that row. Throws FoldDegeneracy when a training fold
// holds a single class.
ExpertTraining train_expert(ExpertKind kind, std::span<const Block> blocks, const DatasetFeatures& features,
                            std::span<const std::size_t> rows, const FoldPlan& plan, const ExpertParams& params,
                            std::uint64_t seed, ExpertCache* cache = nullptr);

// Convenience overload over the whole dataset.
ExpertTraining train_expert(ExpertKind kind, const FeatureConfig& config, const LabeledDataset& data,
                            const FoldPlan& plan, const ExpertParams& params, std::uint64_t seed = 0);

class StackingModel {
 public:
  FeatureConfig config;
  std::vector<FittedExpert> experts;
  // nullopt for single-expert configurations: the expert output passes
  // through unchanged.
  std::optional<LogisticModel> meta;
  std::string fold_fingerprint;
  Task task = Task::JslOnlyVsNon;

  std::vector<std::string> meta_feature_names() const;
  // Throws Input when a required scalar block is absent from the record.
  double predict(const KneeRecord& record) const;
  std::vector<double> predict(std::span<const KneeRecord> records) const;
  std::vector<double> predict_rows(const DatasetFeatures& features, std::span<const std::size_t> rows) const;
  const FittedExpert* tabular() const;
};

// Meta-feature row: logit of each expert probability, then the missingness
// flag of every embedding expert.
Vector meta_features(std::span<const double> expert_probs, std::span<const int> flags);

struct StackingTraining {
  StackingModel model;
  std::vector<std::vector<double>> expert_oof;  // per expert, aligned with rows
  ProvenanceLog provenance;
};

StackingTraining train_stacking(const DatasetFeatures& features, std::span<const std::size_t> rows,
                                const FeatureConfig& config, const FoldPlan& plan, const StackingParams& params,
                                ExpertCache* cache = nullptr);

StackingModel train_stacking(const LabeledDataset& data, const FeatureConfig& config, const FoldPlan& plan,
                             const StackingParams& params);

double predict_stacking(const StackingModel& model, const KneeRecord& record);

inline constexpr int kModelFormatVersion = 1;

nlohmann::json to_json(const FittedExpert& expert);
FittedExpert expert_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StackingModel& model);
StackingModel stacking_from_json(const nlohmann::json& j);

}  // namespace koa
