#include "koa/cli.hpp"

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "koa/agents.hpp"
#include "koa/dataset.hpp"
#include "koa/discordance.hpp"
#include "koa/ensemble.hpp"
#include "koa/error.hpp"
#include "koa/evaluation.hpp"
#include "koa/log.hpp"
#include "koa/raterkit.hpp"
#include "koa/rng.hpp"
#include "koa/synth.hpp"
#include "koa/text.hpp"
#include "koa/version.hpp"

namespace fs = std::filesystem;

namespace koa {

namespace {

using nlohmann::json;

// Output directory <out>/<subcommand>-<hash of the canonical arguments>, so a
// rerun with the same arguments lands in the same place.
class RunDir {
 public:
  RunDir(std::string subcommand, json args, const std::string& out_root, std::vector<std::string> argv)
      : subcommand_(std::move(subcommand)), args_(std::move(args)), argv_(std::move(argv)) {
    hash_ = text::hex64(fnv1a64(subcommand_ + "\n" + args_.dump()));
    dir_ = fs::path(out_root) / (subcommand_ + "-" + hash_.substr(0, 12));
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) fail(ErrorCategory::Io, "cannot create run directory '" + dir_.string() + "': " + ec.message());
  }

  const fs::path& dir() const { return dir_; }

  void write(const std::string& name, std::string_view contents) {
    const fs::path p = dir_ / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    text::write_file(p.string(), contents);
    artifacts_[name] = text::hex64(fnv1a64(contents));
  }

  void finish(std::ostream& out) {
    json m = {{"tool", "koa"},
              {"version", kVersion},
              {"subcommand", subcommand_},
              {"config_hash", hash_},
              {"seed", args_.contains("seed") ? args_["seed"] : json()},
              {"args", args_},
              {"argv", argv_},
              {"seed_derivation", "component seed = mix64(seed ^ fnv1a64(label)); see README"},
              {"artifacts", artifacts_}};
    text::write_file((dir_ / "manifest.json").string(), m.dump(2) + "\n");
    out << "run directory: " << dir_.string() << "\n";
  }

 private:
  std::string subcommand_;
  json args_;
  std::vector<std::string> argv_;
  std::string hash_;
  fs::path dir_;
  std::map<std::string, std::string> artifacts_;
};

struct CohortArgs {
  std::string table;
  std::string mri;
  std::string xray;
  std::string schema;

  void add(CLI::App* app) {
    app->add_option("--cohort", table, "Cohort table (CSV)")->required();
    app->add_option("--mri-embeddings", mri, "MRI embedding file");
    app->add_option("--xray-embeddings", xray, "X-ray embedding file");
    app->add_option("--schema", schema, "Column-role mapping (JSON)");
  }
  json to_json() const { return {{"cohort", table}, {"mri_embeddings", mri}, {"xray_embeddings", xray}, {"schema", schema}}; }
  Cohort load() const {
    CohortPaths p;
    p.table = table;
    if (!mri.empty()) p.mri_embeddings = mri;
    if (!xray.empty()) p.xray_embeddings = xray;
    const CohortSchema s = schema.empty() ? CohortSchema::conventional() : CohortSchema::from_json_file(schema);
    return load_cohort(p, s);
  }
};

TaskSpec task_from(const std::string& s) {
  const auto t = parse_task(s);
  if (!t) fail(ErrorCategory::Usage, "unknown task '" + s + "' (expected jsl or pain)");
  return TaskSpec{*t};
}

FeatureConfig config_from(const std::string& s) {
  const auto id = parse_feature_config(s);
  if (!id) {
    fail(ErrorCategory::Usage,
         "unknown feature configuration '" + s + "' (expected demo, demo+mri, demo+xray, demo+scalars, tmx, tmxbio)");
  }
  return FeatureConfig::of(*id);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& f : text::split_fields(s)) {
    const auto t = std::string(text::trim(f));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::string oof_tsv(const LabeledDataset& data, const OofEvaluation& ev) {
  std::ostringstream out;
  out << "knee_id\tlabel\tfold\tstacked";
  for (const auto& [k, v] : ev.expert_oof) out << "\tp_" << expert_name(k);
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.records[i].knee_id << '\t' << data.labels[i] << '\t' << ev.outer.assignment[i] << '\t'
        << text::format_double17(ev.stacked[i]);
    for (const auto& [k, v] : ev.expert_oof) out << '\t' << text::format_double17(v[i]);
    out << '\n';
  }
  return out.str();
}

std::string importance_tsv(const std::vector<RankedFeature>& fs) {
  std::ostringstream out;
  out << "rank\tfeature\tmean_importance\n";
  for (std::size_t i = 0; i < fs.size(); ++i) {
    out << i + 1 << '\t' << fs[i].feature << '\t' << text::format_double17(fs[i].mean_importance) << '\n';
  }
  return out.str();
}

struct ModelArgs {
  std::string task = "jsl";
  std::string config = "tmxbio";
  int k = 5;
  std::uint64_t seed = 0;
  int trees = 500;
  unsigned threads = 0;

  void add(CLI::App* app, bool with_seed = true) {
    app->add_option("--task", task, "jsl or pain")->capture_default_str();
    app->add_option("--config", config, "Feature configuration")->capture_default_str();
    app->add_option("--k", k, "Cross-validation folds")->capture_default_str();
    app->add_option("--trees", trees, "Boosting rounds of the tabular expert")->capture_default_str();
    app->add_option("--threads", threads, "Worker threads (0: all cores)")->capture_default_str();
    if (with_seed) app->add_option("--seed", seed, "Top-level seed")->required();
  }
  json to_json() const {
    return {{"task", task}, {"config", config}, {"k", k}, {"seed", seed}, {"trees", trees}};
  }
  StackingParams params() const {
    StackingParams p;
    p.experts.gbdt.n_trees = trees;
    p.inner_k = k;
    p.seed = derive_seed(seed, "stacking");
    return p;
  }
};

// Out-of-fold evaluation and a refit on every task row, sharing one cache.
struct TrainedStack {
  LabeledDataset data;
  DatasetFeatures features;
  OofEvaluation oof;
  StackingModel model;
};

TrainedStack train_and_evaluate(const Cohort& cohort, const ModelArgs& a, bool need_oof) {
  TrainedStack t;
  t.data = build_task(cohort, task_from(a.task));
  t.features = DatasetFeatures::from(t.data);
  const FeatureConfig cfg = config_from(a.config);
  ExpertCache cache;
  const StackingParams params = a.params();
  if (need_oof) {
    const FoldPlan outer = stratified_kfold(t.data.labels, a.k, derive_seed(a.seed, "outer-folds"));
    t.oof = evaluate_stacking_oof(t.features, cfg, outer, params, &cache);
    t.oof.report.task = t.data.task.task;
  }
  const FoldPlan plan = stratified_kfold(t.data.labels, a.k, derive_seed(a.seed, "final-folds"));
  std::vector<std::size_t> rows(t.data.size());
  std::iota(rows.begin(), rows.end(), 0);
  StackingParams final_params = params;
  final_params.seed = derive_seed(a.seed, "final-model");
  auto st = train_stacking(t.features, rows, cfg, plan, final_params, &cache);
  t.model = std::move(st.model);
  t.model.task = t.data.task.task;
  return t;
}

struct ThresholdArgs {
  double tau_d = 1.0;
  double tau_p = 0.5;
  void add(CLI::App* app) {
    app->add_option("--tau-d", tau_d, "Discordance threshold (standardized units)")->capture_default_str();
    app->add_option("--tau-p", tau_p, "Structural-risk cut")->capture_default_str();
  }
  Thresholds get() const {
    Thresholds th{tau_d, tau_p};
    th.validate();
    return th;
  }
  json to_json() const { return {{"tau_d", tau_d}, {"tau_p", tau_p}}; }
};

struct PainArgs {
  std::string features;
  std::string regressor = "ridge";
  double lambda = 1e-3;
  int cross_fit = 0;
  void add(CLI::App* app) {
    app->add_option("--pain-features", features, "Comma-separated structural features (default: all rad./mri.)");
    app->add_option("--regressor", regressor, "ridge or gbdt")->capture_default_str();
    app->add_option("--lambda", lambda, "Ridge penalty")->capture_default_str();
    app->add_option("--cross-fit", cross_fit, "Folds for cross-fitted residual SD (0: in-sample)")->capture_default_str();
  }
  json to_json() const {
    return {{"pain_features", features}, {"regressor", regressor}, {"lambda", lambda}, {"cross_fit", cross_fit}};
  }
  ExpectedPainConfig config(std::uint64_t seed) const {
    ExpectedPainConfig c;
    for (const auto& f : split_list(features)) {
      const auto ref = parse_scalar_ref(f);
      if (!ref) fail(ErrorCategory::Usage, "bad feature reference '" + f + "' (expected block.name)");
      c.features.push_back(*ref);
    }
    if (regressor == "gbdt") {
      c.regressor = PainRegressor::Gbdt;
    } else if (regressor != "ridge") {
      fail(ErrorCategory::Usage, "unknown regressor '" + regressor + "'");
    }
    c.lambda = lambda;
    c.cross_fit_k = cross_fit;
    c.seed = derive_seed(seed, "expected-pain");
    return c;
  }
};

std::pair<Cohort, ExpectedPainModel> fit_pain(const Cohort& cohort, const PainArgs& pa, std::uint64_t seed) {
  ExpectedPainConfig cfg = pa.config(seed);
  std::vector<ScalarRef> vars = cfg.features.empty() ? default_structural_features(cohort) : cfg.features;
  Cohort subset = filter_complete_cases(cohort, vars);
  if (subset.size() < 2) fail(ErrorCategory::Input, "complete-case subset has fewer than two knees");
  cfg.features = vars;
  auto model = fit_expected_pain(subset, cfg);
  return {std::move(subset), std::move(model)};
}

json reports_file(const std::vector<CaseReport>& reports) {
  json a = json::array();
  for (const auto& r : reports) a.push_back(to_json(r));
  return {{"format", "koa-case-reports"}, {"version", 1}, {"reports", a}};
}

std::vector<CaseReport> load_reports(const std::string& path) {
  const auto j = json::parse(text::read_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCategory::Parse, "'" + path + "' is not valid JSON");
  if (j.value("format", "") != "koa-case-reports") fail(ErrorCategory::Parse, "'" + path + "' is not a case-report file");
  std::vector<CaseReport> out;
  for (const auto& r : j.at("reports")) out.push_back(case_report_from_json(r));
  return out;
}

std::atomic<RaterServer*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discordance-aware knee osteoarthritis decision support"};
  app.set_version_flag("--version", std::string("koa ") + kVersion);
  app.require_subcommand(1);
  std::string out_root = "runs";
  bool verbose = false;
  app.add_option("--out", out_root, "Root directory for run outputs")->capture_default_str();
  app.add_flag("--verbose", verbose, "Log informational messages");

  std::vector<std::string> argv(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic cohort");
  std::uint64_t synth_seed = 0;
  std::size_t synth_n = 300;
  std::string synth_signal = "planted";
  double synth_disc = 0.05;
  synth->add_option("--seed", synth_seed, "Generator seed")->required();
  synth->add_option("--n", synth_n, "Number of knees")->capture_default_str();
  synth->add_option("--signal", synth_signal, "planted or null")->capture_default_str();
  synth->add_option("--discordant-fraction", synth_disc, "Share of knees with planted +2 pain residual")
      ->capture_default_str();

  // train / evaluate
  auto* train = app.add_subcommand("train", "Fit the stacking model on a task");
  CohortArgs train_cohort;
  ModelArgs train_args;
  train_cohort.add(train);
  train_args.add(train);

  auto* evaluate = app.add_subcommand("evaluate", "Out-of-fold evaluation of one configuration");
  CohortArgs eval_cohort;
  ModelArgs eval_args;
  eval_cohort.add(evaluate);
  eval_args.add(evaluate);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run the six-configuration ablation");
  CohortArgs abl_cohort;
  std::string abl_task = "both";
  std::string abl_configs = "demo,demo+mri,demo+xray,demo+scalars,tmx,tmxbio";
  int abl_k = 5;
  std::uint64_t abl_seed = 0;
  int abl_trees = 500;
  unsigned abl_threads = 0;
  abl_cohort.add(ablate);
  ablate->add_option("--task", abl_task, "jsl, pain or both")->capture_default_str();
  ablate->add_option("--configs", abl_configs, "Comma-separated configurations")->capture_default_str();
  ablate->add_option("--k", abl_k, "Cross-validation folds")->capture_default_str();
  ablate->add_option("--seed", abl_seed, "Top-level seed")->required();
  ablate->add_option("--trees", abl_trees, "Boosting rounds of the tabular expert")->capture_default_str();
  ablate->add_option("--threads", abl_threads, "Worker threads (0: all cores)")->capture_default_str();

  // discordance
  auto* disc = app.add_subcommand("discordance", "Fit expected pain and score discordance");
  CohortArgs disc_cohort;
  PainArgs disc_pain;
  ThresholdArgs disc_th;
  std::string disc_model;
  std::optional<std::uint64_t> disc_seed;
  disc_cohort.add(disc);
  disc_pain.add(disc);
  disc_th.add(disc);
  disc->add_option("--model", disc_model, "Stacking model (from train) supplying p_struct");
  disc->add_option("--seed", disc_seed, "Seed (needed for gbdt or cross-fitting)");

  // reason
  auto* reason = app.add_subcommand("reason", "Run the agent ladder over complete-case knees");
  CohortArgs rs_cohort;
  ModelArgs rs_model;
  ThresholdArgs rs_th;
  PainArgs rs_pain;
  std::string rs_agent = "A0";
  std::string rs_backend = "deterministic";
  double rs_rate = 0.5;
  int rs_cap = 2;
  std::size_t rs_limit = 0;
  unsigned rs_inflight = 1;
  rs_cohort.add(reason);
  rs_model.add(reason);
  rs_th.add(reason);
  rs_pain.add(reason);
  reason->add_option("--agent-config", rs_agent, "A0..A4, a comma list, or all")->capture_default_str();
  reason->add_option("--backend", rs_backend, "deterministic or http:<url>")->capture_default_str();
  reason->add_option("--debate-rate", rs_rate, "Debate probability of the randomized trigger")->capture_default_str();
  reason->add_option("--debate-cap", rs_cap, "Maximum debate rounds")->capture_default_str();
  reason->add_option("--limit", rs_limit, "Only the first N complete-case knees (0: all)")->capture_default_str();
  reason->add_option("--max-in-flight", rs_inflight, "Concurrent cases")->capture_default_str();

  // packets
  auto* packets = app.add_subcommand("packets", "Build blinded rater packets and the sealed key");
  std::vector<std::string> pk_reports;
  std::string pk_raters;
  std::uint64_t pk_seed = 0;
  bool pk_a0 = false;
  packets->add_option("--reports", pk_reports, "Case-report files from reason")->required();
  packets->add_option("--raters", pk_raters, "Comma-separated rater ids")->required();
  packets->add_option("--seed", pk_seed, "Blinding seed")->required();
  packets->add_flag("--include-a0", pk_a0, "Also rate deterministic-template reports");

  // aggregate
  auto* agg = app.add_subcommand("aggregate", "Aggregate ratings per configuration");
  std::string ag_ratings, ag_key, ag_a = "A1", ag_b = "A2";
  agg->add_option("--ratings", ag_ratings, "Ratings CSV")->required();
  agg->add_option("--key", ag_key, "Sealed key from packets");
  agg->add_option("--divergence", ag_a, "First configuration of the divergence table")->capture_default_str();
  agg->add_option("--against", ag_b, "Second configuration of the divergence table")->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "Serve packets to the rater UI");
  std::string sv_packets, sv_addr = "127.0.0.1:8080", sv_log, sv_tokens;
  serve->add_option("--packets", sv_packets, "Packet file from packets")->required();
  serve->add_option("--serve-addr", sv_addr, "host:port")->capture_default_str();
  serve->add_option("--ratings-log", sv_log, "Append accepted ratings to this CSV");
  serve->add_option("--tokens", sv_tokens, "JSON object mapping rater id to bearer token");

  // replay
  auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  std::string rp_manifest;
  replay->add_option("manifest", rp_manifest, "manifest.json of an earlier run")->required();

  try {
    std::vector<std::string> rev(argv.rbegin(), argv.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: category=" << category_name(ErrorCategory::Usage) << " message=" << e.what() << "\n";
    err << app.help() << "\n";
    return exit_code(ErrorCategory::Usage);
  }
  if (verbose) log::set_level(log::Level::Info);

  try {
    if (synth->parsed()) {
      SynthSpec spec;
      if (synth_signal == "planted") {
        spec = SynthSpec::planted();
      } else if (synth_signal == "null") {
        spec = SynthSpec::null_signal();
      } else {
        fail(ErrorCategory::Usage, "unknown signal '" + synth_signal + "' (expected planted or null)");
      }
      spec.size = synth_n;
      spec.discordant_fraction = synth_disc;
      json a = {{"seed", synth_seed}, {"n", synth_n}, {"signal", synth_signal}, {"discordant_fraction", synth_disc}};
      RunDir run("synth", a, out_root, argv);
      const auto sc = synth_generate_detailed(synth_seed, spec);
      CohortPaths paths{run.dir() / "cohort.csv", run.dir() / "mri_embeddings.csv", run.dir() / "xray_embeddings.csv"};
      write_cohort(sc.cohort, paths);
      std::ostringstream truth;
      truth << "knee_id\tstructural_pain_mean\tdiscordant\n";
      for (std::size_t i = 0; i < sc.cohort.size(); ++i) {
        truth << sc.cohort[i].knee_id << '\t' << text::format_double17(sc.truth.structural_pain_mean[i]) << '\t'
              << (sc.truth.discordant[i] ? 1 : 0) << '\n';
      }
      run.write("truth.tsv", truth.str());
      out << "synthesized " << sc.cohort.size() << " knees\n";
      run.finish(out);
      return 0;
    }

    if (train->parsed()) {
      const Cohort cohort = train_cohort.load();
      json a = train_cohort.to_json();
      a.update(train_args.to_json());
      RunDir run("train", a, out_root, argv);
      const auto t = train_and_evaluate(cohort, train_args, false);
      run.write("model.json", to_json(t.model).dump(2) + "\n");
      run.write("importance.tsv", importance_tsv(top_features(t.model, 20)));
      out << "trained " << t.model.config.name() << " on " << t.data.size() << " knees (" << t.data.task.name()
          << ")\n";
      run.finish(out);
      return 0;
    }

    if (evaluate->parsed()) {
      const Cohort cohort = eval_cohort.load();
      json a = eval_cohort.to_json();
      a.update(eval_args.to_json());
      RunDir run("evaluate", a, out_root, argv);
      const auto data = build_task(cohort, task_from(eval_args.task));
      const auto features = DatasetFeatures::from(data);
      const FoldPlan outer = stratified_kfold(data.labels, eval_args.k, derive_seed(eval_args.seed, "outer-folds"));
      ExpertCache cache;
      auto ev = evaluate_stacking_oof(features, config_from(eval_args.config), outer, eval_args.params(), &cache);
      ev.report.task = data.task.task;
      json report = to_json(ev.report);
      run.write("metrics.json", report.dump(2) + "\n");
      run.write("oof.tsv", oof_tsv(data, ev));
      run.write("importance.tsv", importance_tsv(feature_importance_report(ev.fold_tabular, 20)));
      char line[160];
      std::snprintf(line, sizeof line, "%s %s: AUC %.3f  AP %.3f  BalAcc@0.5 %.3f  F1@0.5 %.3f  leakage %zu\n",
                    std::string(data.task.name()).c_str(), eval_args.config.c_str(), ev.report.auc, ev.report.ap,
                    ev.report.balanced_accuracy, ev.report.f1, ev.report.leakage_violations);
      out << line;
      run.finish(out);
      return 0;
    }

    if (ablate->parsed()) {
      const Cohort cohort = abl_cohort.load();
      std::vector<FeatureConfigId> ids;
      for (const auto& c : split_list(abl_configs)) ids.push_back(config_from(c).id);
      std::vector<Task> tasks;
      if (abl_task == "both") {
        tasks = {Task::JslOnlyVsNon, Task::PainOnlyVsNon};
      } else {
        tasks = {task_from(abl_task).task};
      }
      json a = abl_cohort.to_json();
      a.update({{"task", abl_task}, {"configs", abl_configs}, {"k", abl_k}, {"seed", abl_seed}, {"trees", abl_trees}});
      RunDir run("ablate", a, out_root, argv);
      AblationOptions opt;
      opt.k = abl_k;
      opt.threads = abl_threads;
      opt.params.inner_k = abl_k;
      opt.params.experts.gbdt.n_trees = abl_trees;
      std::vector<MetricsReport> jsl, pain, all;
      json reports = json::array();
      for (Task t : tasks) {
        const auto res = run_ablation_detailed(cohort, TaskSpec{t}, ids, abl_seed, opt);
        for (std::size_t i = 0; i < res.reports.size(); ++i) {
          reports.push_back(to_json(res.reports[i]));
          all.push_back(res.reports[i]);
          (t == Task::JslOnlyVsNon ? jsl : pain).push_back(res.reports[i]);
        }
        const auto& last = res.evaluations.back();
        run.write(std::string("importance_") + std::string(TaskSpec{t}.name()) + "_" + std::string(last.config.name()) + ".tsv",
                  importance_tsv(feature_importance_report(last.fold_tabular, 20)));
      }
      const std::string grid = format_ablation_grid(jsl, pain);
      run.write("ablation.tsv", ablation_tsv(all));
      run.write("ablation.json", json{{"reports", reports}}.dump(2) + "\n");
      run.write("grid.txt", grid);
      out << grid;
      run.finish(out);
      return 0;
    }

    if (disc->parsed()) {
      const bool stochastic = disc_pain.regressor == "gbdt" || disc_pain.cross_fit > 1;
      if (stochastic && !disc_seed) fail(ErrorCategory::Usage, "--seed is required with a gbdt regressor or cross-fitting");
      const std::uint64_t seed = disc_seed.value_or(0);
      const Cohort cohort = disc_cohort.load();
      const Thresholds th = disc_th.get();
      json a = disc_cohort.to_json();
      a.update(disc_pain.to_json());
      a.update(disc_th.to_json());
      a["model"] = disc_model;
      if (disc_seed) a["seed"] = seed;
      RunDir run("discordance", a, out_root, argv);
      auto [subset, model] = fit_pain(cohort, disc_pain, seed);
      std::optional<StackingModel> stack;
      if (!disc_model.empty()) stack = stacking_from_json(json::parse(text::read_file(disc_model)));
      std::vector<DiscordanceRow> rows;
      for (const auto& r : subset.records()) {
        DiscordanceRow row{discordance(r, model), std::nullopt};
        if (stack) row.phenotype = assign_phenotype(stack->predict(r), row.score, th);
        rows.push_back(std::move(row));
      }
      run.write("expected_pain.json", to_json(model).dump(2) + "\n");
      run.write("discordance.tsv", discordance_table(rows));
      char line[160];
      std::snprintf(line, sizeof line, "complete cases %zu of %zu; residual SD %.4f%s\n", subset.size(), cohort.size(),
                    model.residual_sd, model.exact_fit ? " (exact fit)" : "");
      out << line;
      run.finish(out);
      return 0;
    }

    if (reason->parsed()) {
      std::vector<SystemConfigId> cfgs;
      for (const auto& c : split_list(rs_agent == "all" ? std::string("A0,A1,A2,A3,A4") : rs_agent)) {
        const auto id = parse_system_config(c);
        if (!id) fail(ErrorCategory::Usage, "unknown agent configuration '" + c + "' (expected A0..A4)");
        cfgs.push_back(*id);
      }
      const Thresholds th = rs_th.get();
      const Cohort cohort = rs_cohort.load();
      json a = rs_cohort.to_json();
      a.update(rs_model.to_json());
      a.update(rs_th.to_json());
      a.update(rs_pain.to_json());
      a.update({{"agent_config", rs_agent},
                {"backend", rs_backend},
                {"debate_rate", rs_rate},
                {"debate_cap", rs_cap},
                {"limit", rs_limit}});
      RunDir run("reason", a, out_root, argv);

      const auto stack = train_and_evaluate(cohort, rs_model, true);
      std::map<std::string, double, std::less<>> oof;
      for (std::size_t i = 0; i < stack.data.size(); ++i) oof[stack.data.records[i].knee_id] = stack.oof.stacked[i];
      const auto top = top_features(stack.model, 5);
      auto [subset, pain_model] = fit_pain(cohort, rs_pain, rs_model.seed);

      std::vector<EvidenceBundle> bundles;
      for (const auto& r : subset.records()) {
        if (rs_limit && bundles.size() >= rs_limit) break;
        const auto it = oof.find(r.knee_id);
        const double p = it != oof.end() ? it->second : stack.model.predict(r);
        bundles.push_back(bundle_evidence(r, p, top, pain_model, th));
      }
      std::unique_ptr<TextBackend> backend;
      bool needs_backend = false;
      for (auto c : cfgs) needs_backend = needs_backend || c != SystemConfigId::A0;
      if (needs_backend) backend = make_backend(rs_backend);

      json ev = json::array();
      for (const auto& b : bundles) ev.push_back(to_json(b));
      run.write("evidence.json", json{{"evidence", ev}}.dump(2) + "\n");
      run.write("expected_pain.json", to_json(pain_model).dump(2) + "\n");
      std::vector<CaseReport> all;
      const std::uint64_t agent_seed = derive_seed(rs_model.seed, "agents");
      for (auto c : cfgs) {
        SystemConfig sc = SystemConfig::of(c);
        sc.random_rate = rs_rate;
        sc.debate_cap = rs_cap;
        auto reps = run_cases(bundles, sc, backend.get(), agent_seed, rs_inflight);
        const std::string name(config_id_name(c));
        std::size_t debates = 0, divergent = 0;
        for (const auto& r : reps) {
          run.write("transcripts/" + name + "/" + r.knee_id + ".json", transcript_json(r).dump(2) + "\n");
          debates += r.decision.debate_occurred;
          divergent += r.narrative_divergence;
        }
        run.write("reports_" + name + ".json", reports_file(reps).dump(2) + "\n");
        out << name << ": " << reps.size() << " cases, " << debates << " debates, " << divergent
            << " narrative divergences\n";
        all.insert(all.end(), reps.begin(), reps.end());
      }
      run.write("reports.json", reports_file(all).dump(2) + "\n");
      std::ostringstream dec;
      dec << "knee_id\tconfig\tphenotype\tnarrative_phenotype\tdebate_rounds\tresolution_rule\n";
      for (const auto& r : all) {
        dec << r.knee_id << '\t' << config_id_name(r.config) << '\t' << phenotype_name(r.decision.phenotype) << '\t'
            << (r.narrative_phenotype ? phenotype_name(*r.narrative_phenotype) : std::string_view("none")) << '\t'
            << r.decision.debate_rounds << '\t' << r.decision.resolution_rule << '\n';
      }
      run.write("decisions.tsv", dec.str());
      run.finish(out);
      return 0;
    }

    if (packets->parsed()) {
      std::vector<CaseReport> reports;
      for (const auto& p : pk_reports) {
        auto r = load_reports(p);
        reports.insert(reports.end(), r.begin(), r.end());
      }
      const auto raters = split_list(pk_raters);
      json a = {{"reports", pk_reports}, {"raters", pk_raters}, {"seed", pk_seed}, {"include_a0", pk_a0}};
      RunDir run("packets", a, out_root, argv);
      const auto set = make_packets(reports, pk_seed, raters, PacketOptions{pk_a0});
      run.write("packets.json", packets_json(set.packets).dump(2) + "\n");
      run.write("sealed_key.json", to_json(set.key).dump(2) + "\n");
      std::string excluded;
      for (const auto& e : set.excluded_reports) excluded += e + "\n";
      run.write("excluded.txt", excluded);
      out << set.packets.size() << " packets for " << raters.size() << " raters; " << set.excluded_reports.size()
          << " reports excluded\n";
      run.finish(out);
      return 0;
    }

    if (agg->parsed()) {
      if (ag_key.empty()) fail(ErrorCategory::Sealed, "aggregation requires the sealed key (--key)");
      const SealedKey key = load_sealed_key(ag_key);
      std::set<std::string> known;
      for (const auto& e : key.entries) known.insert(e.packet_id);
      const auto ratings = ingest_ratings(ag_ratings, &known);
      json a = {{"ratings", ag_ratings}, {"key", ag_key}, {"divergence", ag_a}, {"against", ag_b}};
      RunDir run("aggregate", a, out_root, argv);
      const auto rep = aggregate(ratings, &key, ag_a, ag_b);
      const std::string table = aggregate_table(rep);
      run.write("aggregate.json", to_json(rep).dump(2) + "\n");
      run.write("aggregate.tsv", table);
      out << table;
      run.finish(out);
      return 0;
    }

    if (serve->parsed()) {
      const auto colon = sv_addr.rfind(':');
      if (colon == std::string::npos) fail(ErrorCategory::Usage, "--serve-addr must be host:port");
      const std::string host = sv_addr.substr(0, colon);
      const auto port = text::parse_int(sv_addr.substr(colon + 1));
      if (!port || *port < 0 || *port > 65535) fail(ErrorCategory::Usage, "bad port in --serve-addr");
      auto pk = packets_from_json(json::parse(text::read_file(sv_packets)));
      std::vector<Rating> existing;
      if (!sv_log.empty() && fs::exists(sv_log)) existing = ingest_ratings(sv_log);
      RaterStore store(std::move(pk), std::move(existing),
                       sv_log.empty() ? std::nullopt : std::optional<fs::path>(sv_log));
      ServerOptions opts;
      if (!sv_tokens.empty()) {
        opts.tokens = json::parse(text::read_file(sv_tokens)).get<std::map<std::string, std::string>>();
      }
      RaterServer server(store, opts);
      const int bound = server.bind(host, static_cast<int>(*port));
      out << "serving on " << host << ":" << bound << std::endl;
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.listen();
      g_server = nullptr;
      return 0;
    }

    if (replay->parsed()) {
      const auto m = json::parse(text::read_file(rp_manifest), nullptr, false);
      if (m.is_discarded() || !m.contains("argv")) fail(ErrorCategory::Parse, "'" + rp_manifest + "' is not a run manifest");
      std::vector<std::string> again = {args.empty() ? std::string("koa") : args.front()};
      for (const auto& s : m.at("argv")) again.push_back(s.get<std::string>());
      if (again.size() > 1 && again[1] == "replay") fail(ErrorCategory::Usage, "manifest records a replay");
      return run_cli(again, out, err);
    }
  } catch (const Error& e) {
    err << "error: category=" << category_name(e.category()) << " message=" << e.what() << "\n";
    return exit_code(e.category());
  } catch (const nlohmann::json::exception& e) {
    err << "error: category=" << category_name(ErrorCategory::Parse) << " message=" << e.what() << "\n";
    return exit_code(ErrorCategory::Parse);
  }
  return exit_code(ErrorCategory::Usage);
}

}  // namespace koa
