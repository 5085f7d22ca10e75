#include <algorithm>
#include <numeric>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "koa/ensemble.hpp"
#include "koa/error.hpp"
#include "koa/evaluation.hpp"
#include "koa/metrics.hpp"
#include "koa/synth.hpp"

using namespace koa;

namespace {

StackingParams quick_params(std::uint64_t seed = 1) {
  StackingParams p;
  p.experts.gbdt.n_trees = 60;
  p.seed = seed;
  return p;
}

SynthSpec tabular_only() {
  SynthSpec s = SynthSpec::null_signal();
  s.radiographic = {1.6, 0.0, 4};
  s.mri_scalars = {1.2, 0.0, 4};
  return s;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST_CASE("feature configurations") {
  CHECK(FeatureConfig::of(FeatureConfigId::DemoOnly).experts() == std::vector<ExpertKind>{ExpertKind::Tabular});
  CHECK(FeatureConfig::of(FeatureConfigId::TMX).experts().size() == 3);
  for (auto id : kAllFeatureConfigs) CHECK(parse_feature_config(config_name(id)) == id);
  CHECK(!parse_feature_config("everything"));
  CHECK(FeatureConfig::of(FeatureConfigId::DemoXray).xray);
  CHECK(!FeatureConfig::of(FeatureConfigId::TMX).tabular_blocks.empty());
}

TEST_CASE("experts: tabular signal is found, embeddings stay near chance") {
  double t_auc = 0.0, m_auc = 0.0, x_auc = 0.0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    const auto data = build_task(synth_generate(100 + s, tabular_only()), TaskSpec{});
    const auto plan = stratified_kfold(data.labels, 5, s);
    const auto cfg = FeatureConfig::of(FeatureConfigId::TMX);
    const auto p = quick_params(s).experts;
    t_auc += auc(train_expert(ExpertKind::Tabular, cfg, data, plan, p, s).oof, data.labels);
    m_auc += auc(train_expert(ExpertKind::MriEmbedding, cfg, data, plan, p, s).oof, data.labels);
    x_auc += auc(train_expert(ExpertKind::XrayEmbedding, cfg, data, plan, p, s).oof, data.labels);
  }
  CHECK(t_auc / seeds > 0.85);
  CHECK(std::fabs(m_auc / seeds - 0.5) <= 0.08);
  CHECK(std::fabs(x_auc / seeds - 0.5) <= 0.08);
}

TEST_CASE("experts: missing modality falls back to training prevalence") {
  SynthSpec spec = SynthSpec::planted();
  spec.mri_missing_rate = 1.0;
  const auto data = build_task(synth_generate(3, spec), TaskSpec{});
  const auto plan = stratified_kfold(data.labels, 5, 3);
  const auto tr = train_expert(ExpertKind::MriEmbedding, FeatureConfig::of(FeatureConfigId::TMX), data, plan,
                               quick_params().experts, 3);
  for (int f = 0; f < 5; ++f) {
    const auto train = plan.train_positions(f);
    double pos = 0;
    for (auto i : train) pos += data.labels[i];
    const double prev = pos / static_cast<double>(train.size());
    for (auto i : plan.test_positions(f)) {
      CHECK(tr.oof[i] == prev);
      CHECK(tr.missing[i] == 1);
    }
  }
}

TEST_CASE("experts: oof rows never come from their own training set") {
  const auto data = build_task(synth_generate(4, SynthSpec::planted()), TaskSpec{});
  const auto plan = stratified_kfold(data.labels, 5, 4);
  const auto tr = train_expert(ExpertKind::Tabular, FeatureConfig::of(FeatureConfigId::DemoScalars), data, plan,
                               quick_params().experts, 4);
  CHECK(tr.provenance.violations() == 0);
  CHECK(tr.provenance.uses().size() == data.size());

  // a log whose model trained on the row it scored is caught
  ProvenanceLog bad;
  const auto m = bad.add_model("probe", {0, 1, 2});
  bad.add_use(1, m, "oof");
  bad.add_use(5, m, "oof");
  CHECK(bad.violations() == 1);
}

TEST_CASE("stacking: single expert passes its scores through") {
  const auto data = build_task(synth_generate(6, SynthSpec::planted()), TaskSpec{});
  const auto features = DatasetFeatures::from(data);
  const auto plan = stratified_kfold(data.labels, 5, 6);
  const auto rows = all_rows(data.size());
  const auto st = train_stacking(features, rows, FeatureConfig::of(FeatureConfigId::DemoOnly), plan, quick_params());
  CHECK(!st.model.meta);
  const auto stacked = st.model.predict_rows(features, rows);
  const auto expert = st.model.experts[0].predict_rows(features, rows);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(stacked[i] == expert[i]);
}

TEST_CASE("stacking: predictions are deterministic, batched equals single, json round-trips") {
  const auto data = build_task(synth_generate(7, SynthSpec::planted()), TaskSpec{});
  const auto plan = stratified_kfold(data.labels, 5, 7);
  const auto model = train_stacking(data, FeatureConfig::of(FeatureConfigId::TMXBio), plan, quick_params());
  REQUIRE(model.meta);
  const auto batch = model.predict(std::span<const KneeRecord>(data.records));
  for (std::size_t i = 0; i < data.size(); i += 17) {
    CHECK(predict_stacking(model, data.records[i]) == batch[i]);
    CHECK(model.predict(data.records[i]) == batch[i]);
  }
  const auto again = train_stacking(data, FeatureConfig::of(FeatureConfigId::TMXBio), plan, quick_params());
  CHECK(again.predict(std::span<const KneeRecord>(data.records)) == batch);
  const auto back = stacking_from_json(nlohmann::json::parse(to_json(model).dump()));
  CHECK(back.predict(std::span<const KneeRecord>(data.records)) == batch);

  KneeRecord bare = data.records[0];
  bare.mri_embedding.reset();
  bare.xray_embedding.reset();
  const double p = model.predict(bare);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  KneeRecord no_bio = data.records[0];
  no_bio.biomarkers.clear();
  CHECK_THROWS_AS(model.predict(no_bio), Error);
  CHECK(model.meta_feature_names().size() == 5);  // three logits, two missing flags
}

TEST_CASE("meta features are logits then flags") {
  const std::vector<double> p = {0.5, 0.8};
  const std::vector<int> f = {1};
  const Vector v = meta_features(p, f);
  REQUIRE(v.size() == 3);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == doctest::Approx(std::log(4.0)));
  CHECK(v[2] == 1.0);
}

TEST_CASE("evaluation: nested oof has no leakage and matches the metric helpers") {
  const auto data = build_task(synth_generate(9, SynthSpec::planted()), TaskSpec{});
  const auto features = DatasetFeatures::from(data);
  const auto outer = stratified_kfold(data.labels, 5, 9);
  const auto ev = evaluate_stacking_oof(features, FeatureConfig::of(FeatureConfigId::TMX), outer, quick_params());
  CHECK(ev.provenance.violations() == 0);
  CHECK(ev.report.leakage_violations == 0);
  CHECK(ev.report.auc == auc(ev.stacked, data.labels));
  CHECK(ev.report.per_fold.size() == 5);
  CHECK(ev.expert_oof.size() == 3);
  CHECK(ev.fold_tabular.size() == 5);
  std::set<std::size_t> scored;
  for (const auto& u : ev.provenance.uses())
    if (u.purpose == "stacked-oof") scored.insert(u.row);
  CHECK(scored.size() == data.size());
}

TEST_CASE("ablation: report order follows the input and the null cohort stays near chance") {
  AblationOptions opt;
  opt.params.experts.gbdt.n_trees = 40;
  const std::vector<FeatureConfigId> ids = {FeatureConfigId::TMXBio, FeatureConfigId::DemoOnly,
                                            FeatureConfigId::DemoScalars};
  const auto reports = run_ablation(synth_generate(11, SynthSpec::null_signal()), TaskSpec{}, ids, 11, opt);
  REQUIRE(reports.size() == 3);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK(reports[i].config == ids[i]);
    CHECK(std::fabs(reports[i].auc - 0.5) <= 0.12);
    CHECK(reports[i].leakage_violations == 0);
  }
  const std::string grid = format_ablation_grid(reports, {});
  CHECK(grid.find("AUC") != std::string::npos);
  CHECK(ablation_tsv(reports).find("\n") != std::string::npos);
}

TEST_CASE("importance report") {
  SynthSpec spec = SynthSpec::null_signal();
  spec.radiographic = {3.0, 0.0, 1};
  const auto data = build_task(synth_generate(12, spec), TaskSpec{});
  const auto features = DatasetFeatures::from(data);
  const auto outer = stratified_kfold(data.labels, 5, 12);
  const auto ev =
      evaluate_stacking_oof(features, FeatureConfig::of(FeatureConfigId::DemoScalars), outer, quick_params());
  const auto all = feature_importance_report(ev.fold_tabular, 0);
  double sum = 0.0;
  for (const auto& f : all) sum += f.mean_importance;
  CHECK(std::fabs(sum - 100.0) < 1e-6);
  REQUIRE(!all.empty());
  CHECK(all[0].mean_importance > 50.0);
  CHECK(feature_importance_report(ev.fold_tabular, 3).size() == 3);

  // identical data in two folds gives identical importances
  std::vector<FittedExpert> twins = {ev.fold_tabular[0], ev.fold_tabular[0]};
  const auto rep = feature_importance_report(std::span<const FittedExpert>(twins.data(), 1), 0);
  const auto rep2 = feature_importance_report(twins, 0);
  REQUIRE(rep.size() == rep2.size());
  for (std::size_t i = 0; i < rep.size(); ++i) CHECK(rep[i].mean_importance == doctest::Approx(rep2[i].mean_importance));
}
