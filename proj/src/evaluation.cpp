#include "koa/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "koa/error.hpp"
#include "koa/metrics.hpp"
#include "koa/parallel.hpp"
#include "koa/rng.hpp"

namespace koa {

MetricsReport compute_metrics(std::span<const double> scores, std::span<const int> labels, const FoldPlan& plan) {
  MetricsReport r;
  r.n = scores.size();
  r.auc = auc(scores, labels);
  r.ap = average_precision(scores, labels);
  const auto t = thresholded_metrics(scores, labels);
  r.balanced_accuracy = t.balanced_accuracy;
  r.f1 = t.f1;
  for (int f = 0; f < plan.k; ++f) {
    const auto pos = plan.test_positions(f);
    FoldMetrics fm;
    fm.fold = f;
    fm.n = pos.size();
    std::vector<double> s;
    std::vector<int> y;
    for (auto p : pos) {
      s.push_back(scores[p]);
      y.push_back(labels[p]);
    }
    fm.positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    if (fm.positives > 0 && fm.positives < fm.n) {
      fm.auc = auc(s, y);
      fm.ap = average_precision(s, y);
      const auto ft = thresholded_metrics(s, y);
      fm.balanced_accuracy = ft.balanced_accuracy;
      fm.f1 = ft.f1;
    }
    r.per_fold.push_back(fm);
  }
  return r;
}

OofEvaluation evaluate_stacking_oof(const DatasetFeatures& features, const FeatureConfig& config, const FoldPlan& outer,
                                    const StackingParams& params, ExpertCache* cache) {
  if (outer.size() != features.size()) fail(ErrorCategory::Dimension, "evaluate_stacking_oof: plan size mismatch");
  OofEvaluation ev;
  ev.config = config;
  ev.outer = outer;
  ev.stacked.assign(features.size(), 0.0);
  const auto kinds = config.experts();
  for (auto k : kinds) ev.expert_oof[k].assign(features.size(), 0.0);
  ev.tabular_features = features.tabular_names(config.tabular_blocks);

  for (int f = 0; f < outer.k; ++f) {
    const auto train = outer.train_positions(f);
    const auto test = outer.test_positions(f);
    std::vector<int> train_labels;
    for (auto r : train) train_labels.push_back(features.labels[r]);
    const FoldPlan inner = stratified_kfold(train_labels, params.inner_k, derive_seed(params.seed, f));
    StackingParams fold_params = params;
    fold_params.seed = derive_seed(params.seed, "outer-" + std::to_string(f));
    auto st = train_stacking(features, train, config, inner, fold_params, cache);
    ev.provenance.append(st.provenance);

    const auto meta_id = ev.provenance.add_model("meta-outer" + std::to_string(f), train);
    const auto scores = st.model.predict_rows(features, test);
    for (std::size_t i = 0; i < test.size(); ++i) {
      ev.stacked[test[i]] = scores[i];
      ev.provenance.add_use(test[i], meta_id, "stacked-oof");
    }
    for (const auto& e : st.model.experts) {
      const auto id = ev.provenance.add_model(std::string(expert_name(e.kind)) + "-outer" + std::to_string(f), train);
      const auto p = e.predict_rows(features, test);
      for (std::size_t i = 0; i < test.size(); ++i) {
        ev.expert_oof[e.kind][test[i]] = p[i];
        ev.provenance.add_use(test[i], id, "expert-outer-oof");
      }
      if (e.kind == ExpertKind::Tabular) ev.fold_tabular.push_back(e);
    }
  }
  ev.report = compute_metrics(ev.stacked, features.labels, outer);
  ev.report.config = config.id;
  for (const auto& [k, v] : ev.expert_oof) ev.report.expert_auc[k] = auc(v, features.labels);
  ev.report.leakage_violations = ev.provenance.violations();
  return ev;
}

AblationResult run_ablation_detailed(const Cohort& cohort, TaskSpec task, const std::vector<FeatureConfigId>& configs,
                                     std::uint64_t seed, const AblationOptions& options) {
  const auto data = build_task(cohort, task);
  const auto features = DatasetFeatures::from(data);
  for (auto id : configs) {
    const auto c = FeatureConfig::of(id);
    for (Block b : c.tabular_blocks) {
      if (features.columns[static_cast<int>(b)].empty()) {
        fail(ErrorCategory::Input, "configuration " + std::string(c.name()) + " needs the " +
                                       std::string(block_name(b)) + " block, which the cohort lacks");
      }
    }
  }
  const FoldPlan outer = stratified_kfold(data.labels, options.k, derive_seed(seed, "outer-folds"));
  StackingParams params = options.params;
  params.seed = derive_seed(seed, "stacking");

  AblationResult result;
  result.evaluations.resize(configs.size());
  ExpertCache cache;
  parallel_for(configs.size(), options.threads, [&](std::size_t i) {
    result.evaluations[i] = evaluate_stacking_oof(features, FeatureConfig::of(configs[i]), outer, params, &cache);
  });
  for (auto& ev : result.evaluations) {
    ev.report.task = task.task;
    result.reports.push_back(ev.report);
  }
  return result;
}

std::vector<MetricsReport> run_ablation(const Cohort& cohort, TaskSpec task,
                                        const std::vector<FeatureConfigId>& configs, std::uint64_t seed,
                                        const AblationOptions& options) {
  return run_ablation_detailed(cohort, task, configs, seed, options).reports;
}

std::vector<RankedFeature> feature_importance_report(std::span<const FittedExpert> fold_experts, std::size_t top_n) {
  std::map<std::string, double> sums;
  std::size_t folds = 0;
  for (const auto& e : fold_experts) {
    if (e.kind != ExpertKind::Tabular || !e.gbdt) continue;
    ++folds;
    const auto imp = e.gbdt->normalized_importance();
    for (std::size_t i = 0; i < imp.size(); ++i) sums[e.feature_names[i]] += imp[i];
  }
  std::vector<RankedFeature> out;
  for (const auto& [name, s] : sums) out.push_back({name, folds ? s / static_cast<double>(folds) : 0.0});
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedFeature& a, const RankedFeature& b) { return a.mean_importance > b.mean_importance; });
  if (top_n > 0 && out.size() > top_n) out.resize(top_n);
  return out;
}

namespace {

std::string fmt3(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

const MetricsReport* find_report(const std::vector<MetricsReport>& rs, FeatureConfigId id) {
  for (const auto& r : rs) {
    if (r.config == id) return &r;
  }
  return nullptr;
}

}  // namespace

std::string format_ablation_grid(const std::vector<MetricsReport>& jsl, const std::vector<MetricsReport>& pain) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-62s | %-29s | %-29s\n", "Feature set / Method", "JSL Only vs Non",
                "Pain Only vs Non");
  out << line;
  std::snprintf(line, sizeof line, "%-62s | %6s %6s %7s %6s | %6s %6s %7s %6s\n", "", "AUC", "AP", "BalAcc", "F1",
                "AUC", "AP", "BalAcc", "F1");
  out << line << std::string(128, '-') << '\n';
  std::vector<FeatureConfigId> order;
  for (const auto* rs : {&jsl, &pain}) {
    for (const auto& r : *rs) {
      if (std::find(order.begin(), order.end(), r.config) == order.end()) order.push_back(r.config);
    }
  }
  for (auto id : order) {
    const auto cells = [&](const MetricsReport* r) {
      if (!r) return std::string(30, ' ');
      char c[64];
      std::snprintf(c, sizeof c, "%6s %6s %7s %6s", fmt3(r->auc).c_str(), fmt3(r->ap).c_str(),
                    fmt3(r->balanced_accuracy).c_str(), fmt3(r->f1).c_str());
      return std::string(c);
    };
    std::snprintf(line, sizeof line, "%-62s | %s | %s\n", std::string(FeatureConfig::of(id).label()).c_str(),
                  cells(find_report(jsl, id)).c_str(), cells(find_report(pain, id)).c_str());
    out << line;
  }
  return out.str();
}

std::string ablation_tsv(const std::vector<MetricsReport>& reports) {
  std::ostringstream out;
  out << "task\tconfig\tn\tauc\tap\tbalanced_accuracy_at_0_5\tf1_at_0_5\texpert_auc_T\texpert_auc_M\texpert_auc_X\n";
  for (const auto& r : reports) {
    const auto ea = [&](ExpertKind k) {
      const auto it = r.expert_auc.find(k);
      return it == r.expert_auc.end() ? std::string("NA") : fmt3(it->second);
    };
    out << (r.task == Task::JslOnlyVsNon ? "jsl" : "pain") << '\t' << config_name(r.config) << '\t' << r.n << '\t'
        << fmt3(r.auc) << '\t' << fmt3(r.ap) << '\t' << fmt3(r.balanced_accuracy) << '\t' << fmt3(r.f1) << '\t'
        << ea(ExpertKind::Tabular) << '\t' << ea(ExpertKind::MriEmbedding) << '\t' << ea(ExpertKind::XrayEmbedding)
        << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.per_fold) {
    folds.push_back({{"fold", f.fold},
                     {"n", f.n},
                     {"positives", f.positives},
                     {"auc", f.auc},
                     {"ap", f.ap},
                     {"balanced_accuracy_at_0_5", f.balanced_accuracy},
                     {"f1_at_0_5", f.f1}});
  }
  nlohmann::json experts = nlohmann::json::object();
  for (const auto& [k, v] : r.expert_auc) experts[std::string(expert_name(k))] = v;
  return {{"task", r.task == Task::JslOnlyVsNon ? "jsl" : "pain"},
          {"config", config_name(r.config)},
          {"n", r.n},
          {"auc", r.auc},
          {"ap", r.ap},
          {"balanced_accuracy_at_0_5", r.balanced_accuracy},
          {"f1_at_0_5", r.f1},
          {"per_fold", folds},
          {"expert_auc", experts},
          {"leakage_violations", r.leakage_violations}};
}

}  // namespace koa
