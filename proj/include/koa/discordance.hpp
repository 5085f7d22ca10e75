#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "koa/dataset.hpp"
#include "koa/gbdt.hpp"
#include "koa/ridge.hpp"

namespace koa {

enum class PainRegressor { Ridge, Gbdt };

struct ExpectedPainConfig {
  // Empty: every radiographic and MRI scalar column in the subset.
  std::vector<ScalarRef> features;
  PainRegressor regressor = PainRegressor::Ridge;
  double lambda = 1e-3;
  GbdtParams gbdt{.n_trees = 200, .max_depth = 2, .learning_rate = 0.05, .loss = GbdtLoss::Squared};
  // > 1: residual_sd from k-fold cross-fitted residuals instead of in-sample.
  int cross_fit_k = 0;
  std::uint64_t seed = 0;
};

struct ExpectedPainModel {
  PainRegressor regressor = PainRegressor::Ridge;
  std::vector<ScalarRef> features;
  std::optional<RidgeModel> ridge;
  std::optional<GbdtModel> gbdt;
  double residual_sd = 0.0;
  bool exact_fit = false;
  bool cross_fitted = false;
  std::size_t n_train = 0;

  // Throws Input when the record lacks a structural feature.
  double predict(const KneeRecord& record) const;
  // Divisor used for standardisation; never zero.
  double scale() const noexcept;
};

// Structural blocks are radiographic and MRI scalars. Anything else in
// `config.features` is rejected with a Spec error.
std::vector<ScalarRef> default_structural_features(const Cohort& subset);
ExpectedPainModel fit_expected_pain(const Cohort& subset, const ExpectedPainConfig& config = {});

struct DiscordanceScore {
  std::string knee_id;
  double y_pain = 0.0;
  double y_hat_pain = 0.0;
  double d_ps = 0.0;
  double d_ps_standardized = 0.0;
};

// d_ps = y_pain - y_hat_pain with no further arithmetic. Throws Numeric on
// non-finite input.
DiscordanceScore discordance(double y_pain, double y_hat_pain, const ExpectedPainModel& model);
DiscordanceScore discordance(const KneeRecord& record, const ExpectedPainModel& model);

struct Thresholds {
  double tau_d = 1.0;
  double tau_p = 0.5;
  // Throws Range unless tau_d > 0 and 0 < tau_p < 1.
  void validate() const;
};

enum class PhenotypeLabel { ConcordantSevere, ConcordantMild, PainDominant, StructureDominant };
inline constexpr PhenotypeLabel kAllPhenotypes[] = {PhenotypeLabel::ConcordantSevere, PhenotypeLabel::ConcordantMild,
                                                    PhenotypeLabel::PainDominant, PhenotypeLabel::StructureDominant};

std::string_view phenotype_name(PhenotypeLabel label);     // "ConcordantSevere"
std::string_view phenotype_display(PhenotypeLabel label);  // "Concordant Severe"
std::optional<PhenotypeLabel> parse_phenotype(std::string_view text);
// -1 structure-dominant, 0 concordant, +1 pain-dominant.
int phenotype_order(PhenotypeLabel label) noexcept;

struct Phenotype {
  PhenotypeLabel label = PhenotypeLabel::ConcordantMild;
  double p_struct = 0.0;
  double d_ps = 0.0;
  double d_ps_standardized = 0.0;
  Thresholds thresholds{};
};

PhenotypeLabel phenotype_rule(double p_struct, double d_ps_standardized, const Thresholds& th) noexcept;
Phenotype assign_phenotype(double p_struct, const DiscordanceScore& score, const Thresholds& th);

struct DiscordanceRow {
  DiscordanceScore score;
  std::optional<Phenotype> phenotype;  // when p_struct is known
};

// Tab-separated: knee_id, y_pain, y_hat_pain, d_ps, d_ps_standardized,
// phenotype (NA without p_struct).
std::string discordance_table(const std::vector<DiscordanceRow>& rows);

nlohmann::json to_json(const ExpectedPainModel& model);
ExpectedPainModel expected_pain_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DiscordanceScore& score);
nlohmann::json to_json(const Thresholds& th);
nlohmann::json to_json(const Phenotype& p);

}  // namespace koa
