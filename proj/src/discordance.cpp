#include "koa/discordance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "koa/error.hpp"
#include "koa/linalg.hpp"
#include "koa/rng.hpp"
#include "koa/text.hpp"

namespace koa {

namespace {

constexpr double kMinScale = 1e-12;

bool is_structural(Block b) { return b == Block::Radiographic || b == Block::MriScalars; }

Matrix design(const Cohort& subset, const std::vector<ScalarRef>& features) {
  Matrix X(static_cast<Eigen::Index>(subset.size()), static_cast<Eigen::Index>(features.size()));
  for (std::size_t i = 0; i < subset.size(); ++i) {
    for (std::size_t c = 0; c < features.size(); ++c) {
      const double v = subset[i].scalar(features[c].block, features[c].name);
      if (is_missing(v)) {
        fail(ErrorCategory::Input, "knee '" + subset[i].knee_id + "' lacks structural feature " +
                                       to_string(features[c]) + "; apply the complete-case filter first");
      }
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return X;
}

struct Fitted {
  std::optional<RidgeModel> ridge;
  std::optional<GbdtModel> gbdt;
};

Fitted fit_regressor(const Matrix& X, std::span<const double> y, const ExpectedPainConfig& config) {
  Fitted f;
  if (config.regressor == PainRegressor::Ridge) {
    f.ridge = ridge_fit(X, y, config.lambda);
  } else {
    GbdtParams gp = config.gbdt;
    gp.loss = GbdtLoss::Squared;
    gp.seed = derive_seed(config.seed, "expected-pain");
    f.gbdt = gbdt_fit(X, y, gp);
  }
  return f;
}

double predict_row(const Fitted& f, const Eigen::Ref<const Vector>& x) {
  if (f.ridge) return f.ridge->predict(x);
  std::vector<double> row(x.data(), x.data() + x.size());
  return f.gbdt->predict_margin(row);
}

double sample_sd(const std::vector<double>& r) {
  if (r.size() < 2) return 0.0;
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  double ss = 0.0;
  for (double v : r) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(r.size() - 1));
}

}  // namespace

std::vector<ScalarRef> default_structural_features(const Cohort& subset) {
  std::vector<ScalarRef> out;
  for (Block b : {Block::Radiographic, Block::MriScalars}) {
    for (const auto& c : subset.columns(b)) out.push_back({b, c});
  }
  return out;
}

ExpectedPainModel fit_expected_pain(const Cohort& subset, const ExpectedPainConfig& config) {
  ExpectedPainModel m;
  m.regressor = config.regressor;
  m.features = config.features.empty() ? default_structural_features(subset) : config.features;
  for (const auto& f : m.features) {
    if (!is_structural(f.block)) {
      fail(ErrorCategory::Spec, "expected-pain feature " + to_string(f) + " is not a structural covariate");
    }
  }
  if (subset.size() < 2) fail(ErrorCategory::Input, "expected-pain model needs at least two records");
  std::vector<double> y;
  for (const auto& r : subset.records()) {
    if (!std::isfinite(r.observed_pain)) {
      fail(ErrorCategory::Input, "knee '" + r.knee_id + "' has no observed pain; apply the complete-case filter first");
    }
    y.push_back(r.observed_pain);
  }
  const Matrix X = design(subset, m.features);
  const Fitted fitted = fit_regressor(X, y, config);
  m.ridge = fitted.ridge;
  m.gbdt = fitted.gbdt;
  m.n_train = subset.size();

  std::vector<double> resid(y.size());
  if (config.cross_fit_k > 1) {
    const auto k = static_cast<std::size_t>(config.cross_fit_k);
    if (k > y.size()) fail(ErrorCategory::Stratification, "cross-fit k exceeds the subset size");
    std::vector<std::size_t> order(y.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, "cross-fit"));
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::size_t> fold(y.size());
    for (std::size_t i = 0; i < order.size(); ++i) fold[order[i]] = i % k;
    for (std::size_t f = 0; f < k; ++f) {
      std::vector<std::size_t> tr, te;
      for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == f ? te : tr).push_back(i);
      std::vector<double> ytr;
      for (auto i : tr) ytr.push_back(y[i]);
      const Fitted ff = fit_regressor(gather_rows(X, tr), ytr, config);
      for (auto i : te) resid[i] = y[i] - predict_row(ff, X.row(static_cast<Eigen::Index>(i)).transpose());
    }
    m.cross_fitted = true;
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) {
      resid[i] = y[i] - predict_row(fitted, X.row(static_cast<Eigen::Index>(i)).transpose());
    }
  }
  m.residual_sd = sample_sd(resid);
  double y_scale = 0.0;
  for (double v : y) y_scale = std::max(y_scale, std::abs(v));
  m.exact_fit = m.residual_sd <= 1e-10 * std::max(1.0, y_scale);
  return m;
}

double ExpectedPainModel::predict(const KneeRecord& record) const {
  Vector x(static_cast<Eigen::Index>(features.size()));
  for (std::size_t c = 0; c < features.size(); ++c) {
    const double v = record.scalar(features[c].block, features[c].name);
    if (is_missing(v)) {
      fail(ErrorCategory::Input, "knee '" + record.knee_id + "' lacks structural feature " + to_string(features[c]));
    }
    x[static_cast<Eigen::Index>(c)] = v;
  }
  if (ridge) return ridge->predict(x);
  if (gbdt) return gbdt->predict_margin(std::vector<double>(x.data(), x.data() + x.size()));
  fail(ErrorCategory::Spec, "expected-pain model has no regressor");
}

double ExpectedPainModel::scale() const noexcept { return std::max(residual_sd, kMinScale); }

DiscordanceScore discordance(double y_pain, double y_hat_pain, const ExpectedPainModel& model) {
  if (!std::isfinite(y_pain) || !std::isfinite(y_hat_pain)) {
    fail(ErrorCategory::Numeric, "discordance requires finite observed and expected pain");
  }
  DiscordanceScore s;
  s.y_pain = y_pain;
  s.y_hat_pain = y_hat_pain;
  s.d_ps = y_pain - y_hat_pain;
  s.d_ps_standardized = s.d_ps / model.scale();
  return s;
}

DiscordanceScore discordance(const KneeRecord& record, const ExpectedPainModel& model) {
  auto s = discordance(record.observed_pain, model.predict(record), model);
  s.knee_id = record.knee_id;
  return s;
}

void Thresholds::validate() const {
  if (!(tau_d > 0.0) || !std::isfinite(tau_d)) fail(ErrorCategory::Range, "tau_d must be a positive number");
  if (!(tau_p > 0.0 && tau_p < 1.0)) fail(ErrorCategory::Range, "tau_p must lie strictly between 0 and 1");
}

std::string_view phenotype_name(PhenotypeLabel label) {
  switch (label) {
    case PhenotypeLabel::ConcordantSevere: return "ConcordantSevere";
    case PhenotypeLabel::ConcordantMild: return "ConcordantMild";
    case PhenotypeLabel::PainDominant: return "PainDominant";
    case PhenotypeLabel::StructureDominant: return "StructureDominant";
  }
  return "?";
}

std::string_view phenotype_display(PhenotypeLabel label) {
  switch (label) {
    case PhenotypeLabel::ConcordantSevere: return "Concordant Severe";
    case PhenotypeLabel::ConcordantMild: return "Concordant Mild";
    case PhenotypeLabel::PainDominant: return "Pain-Dominant";
    case PhenotypeLabel::StructureDominant: return "Structure-Dominant";
  }
  return "?";
}

std::optional<PhenotypeLabel> parse_phenotype(std::string_view text) {
  for (auto p : kAllPhenotypes) {
    if (text == phenotype_name(p) || text == phenotype_display(p)) return p;
  }
  return std::nullopt;
}

int phenotype_order(PhenotypeLabel label) noexcept {
  switch (label) {
    case PhenotypeLabel::StructureDominant: return -1;
    case PhenotypeLabel::PainDominant: return 1;
    default: return 0;
  }
}

PhenotypeLabel phenotype_rule(double p_struct, double z, const Thresholds& th) noexcept {
  if (z > th.tau_d) return PhenotypeLabel::PainDominant;
  if (z < -th.tau_d) return PhenotypeLabel::StructureDominant;
  return p_struct >= th.tau_p ? PhenotypeLabel::ConcordantSevere : PhenotypeLabel::ConcordantMild;
}

Phenotype assign_phenotype(double p_struct, const DiscordanceScore& score, const Thresholds& th) {
  Phenotype p;
  p.label = phenotype_rule(p_struct, score.d_ps_standardized, th);
  p.p_struct = p_struct;
  p.d_ps = score.d_ps;
  p.d_ps_standardized = score.d_ps_standardized;
  p.thresholds = th;
  return p;
}

std::string discordance_table(const std::vector<DiscordanceRow>& rows) {
  std::ostringstream out;
  out << "knee_id\ty_pain\ty_hat_pain\td_ps\td_ps_standardized\tphenotype\n";
  for (const auto& r : rows) {
    out << r.score.knee_id << '\t' << text::format_double17(r.score.y_pain) << '\t'
        << text::format_double17(r.score.y_hat_pain) << '\t' << text::format_double17(r.score.d_ps) << '\t'
        << text::format_double17(r.score.d_ps_standardized) << '\t'
        << (r.phenotype ? phenotype_name(r.phenotype->label) : std::string_view("NA")) << '\n';
  }
  return out.str();
}

namespace {

nlohmann::json refs_json(const std::vector<ScalarRef>& refs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : refs) a.push_back(to_string(r));
  return a;
}

}  // namespace

nlohmann::json to_json(const ExpectedPainModel& m) {
  return {{"format", "koa-model"},
          {"version", 1},
          {"type", "expected-pain"},
          {"regressor", m.regressor == PainRegressor::Ridge ? "ridge" : "gbdt"},
          {"features", refs_json(m.features)},
          {"ridge", m.ridge ? to_json(*m.ridge) : nlohmann::json()},
          {"gbdt", m.gbdt ? to_json(*m.gbdt) : nlohmann::json()},
          {"residual_sd", m.residual_sd},
          {"exact_fit", m.exact_fit},
          {"cross_fitted", m.cross_fitted},
          {"n_train", m.n_train}};
}

ExpectedPainModel expected_pain_from_json(const nlohmann::json& j) {
  if (j.value("type", "") != "expected-pain") fail(ErrorCategory::Parse, "not an expected-pain model file");
  ExpectedPainModel m;
  m.regressor = j.at("regressor").get<std::string>() == "gbdt" ? PainRegressor::Gbdt : PainRegressor::Ridge;
  for (const auto& f : j.at("features")) {
    const auto ref = parse_scalar_ref(f.get<std::string>());
    if (!ref) fail(ErrorCategory::Parse, "bad feature reference in expected-pain model");
    m.features.push_back(*ref);
  }
  if (!j.at("ridge").is_null()) m.ridge = ridge_from_json(j.at("ridge"));
  if (!j.at("gbdt").is_null()) m.gbdt = gbdt_from_json(j.at("gbdt"));
  m.residual_sd = j.at("residual_sd").get<double>();
  m.exact_fit = j.at("exact_fit").get<bool>();
  m.cross_fitted = j.value("cross_fitted", false);
  m.n_train = j.at("n_train").get<std::size_t>();
  return m;
}

nlohmann::json to_json(const DiscordanceScore& s) {
  return {{"knee_id", s.knee_id},
          {"y_pain", s.y_pain},
          {"y_hat_pain", s.y_hat_pain},
          {"d_ps", s.d_ps},
          {"d_ps_standardized", s.d_ps_standardized}};
}

nlohmann::json to_json(const Thresholds& th) { return {{"tau_d", th.tau_d}, {"tau_p", th.tau_p}}; }

nlohmann::json to_json(const Phenotype& p) {
  return {{"label", phenotype_name(p.label)},
          {"p_struct", p.p_struct},
          {"d_ps", p.d_ps},
          {"d_ps_standardized", p.d_ps_standardized},
          {"thresholds", to_json(p.thresholds)}};
}

}  // namespace koa
