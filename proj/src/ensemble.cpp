#include "koa/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "koa/error.hpp"
#include "koa/log.hpp"
#include "koa/rng.hpp"
#include "koa/text.hpp"

namespace koa {

std::string_view expert_name(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::Tabular: return "T";
    case ExpertKind::MriEmbedding: return "M";
    case ExpertKind::XrayEmbedding: return "X";
  }
  return "?";
}

FeatureConfig FeatureConfig::of(FeatureConfigId id) {
  FeatureConfig c;
  c.id = id;
  const std::vector<Block> demo = {Block::Demographics};
  const std::vector<Block> scalars = {Block::Demographics, Block::Radiographic, Block::MriScalars};
  switch (id) {
    case FeatureConfigId::DemoOnly: c.tabular_blocks = demo; break;
    case FeatureConfigId::DemoMri: c.tabular_blocks = demo; c.mri = true; break;
    case FeatureConfigId::DemoXray: c.tabular_blocks = demo; c.xray = true; break;
    case FeatureConfigId::DemoScalars: c.tabular_blocks = scalars; break;
    case FeatureConfigId::TMX:
      c.tabular_blocks = scalars;
      c.mri = c.xray = true;
      break;
    case FeatureConfigId::TMXBio:
      c.tabular_blocks = scalars;
      c.tabular_blocks.push_back(Block::Biomarkers);
      c.mri = c.xray = true;
      break;
  }
  return c;
}

std::vector<ExpertKind> FeatureConfig::experts() const {
  std::vector<ExpertKind> out = {ExpertKind::Tabular};
  if (mri) out.push_back(ExpertKind::MriEmbedding);
  if (xray) out.push_back(ExpertKind::XrayEmbedding);
  return out;
}

std::string_view config_name(FeatureConfigId id) {
  switch (id) {
    case FeatureConfigId::DemoOnly: return "demo";
    case FeatureConfigId::DemoMri: return "demo+mri";
    case FeatureConfigId::DemoXray: return "demo+xray";
    case FeatureConfigId::DemoScalars: return "demo+scalars";
    case FeatureConfigId::TMX: return "tmx";
    case FeatureConfigId::TMXBio: return "tmxbio";
  }
  return "?";
}

std::string_view FeatureConfig::name() const noexcept { return config_name(id); }

std::string_view FeatureConfig::label() const noexcept {
  switch (id) {
    case FeatureConfigId::DemoOnly: return "Demographics only";
    case FeatureConfigId::DemoMri: return "Demographics + MRI embeddings";
    case FeatureConfigId::DemoXray: return "Demographics + X-ray embeddings";
    case FeatureConfigId::DemoScalars: return "Demographics + image-derived scalars";
    case FeatureConfigId::TMX: return "Demographics + scalars + embeddings (T+M+X)";
    case FeatureConfigId::TMXBio: return "Demographics + scalars + embeddings + biomarkers (T+M+X+Bio)";
  }
  return "?";
}

std::optional<FeatureConfigId> parse_feature_config(std::string_view name) {
  for (auto id : kAllFeatureConfigs) {
    if (config_name(id) == name) return id;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

DatasetFeatures DatasetFeatures::from(const LabeledDataset& data) {
  DatasetFeatures f;
  const auto n = static_cast<Eigen::Index>(data.size());
  f.labels = data.labels;
  for (Block b : kAllBlocks) {
    std::set<std::string> names;
    for (const auto& r : data.records) {
      for (const auto& [name, v] : r.block(b)) names.insert(name);
    }
    auto& cols = f.columns[static_cast<int>(b)];
    cols.assign(names.begin(), names.end());
    Matrix m(n, static_cast<Eigen::Index>(cols.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = data.records[static_cast<std::size_t>(i)];
      for (std::size_t c = 0; c < cols.size(); ++c) m(i, static_cast<Eigen::Index>(c)) = r.scalar(b, cols[c]);
    }
    f.blocks[static_cast<int>(b)] = std::move(m);
  }
  f.mri = Matrix::Zero(n, static_cast<Eigen::Index>(kEmbeddingDim));
  f.xray = Matrix::Zero(n, static_cast<Eigen::Index>(kEmbeddingDim));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = data.records[static_cast<std::size_t>(i)];
    f.mri_missing.push_back(r.mri_missing());
    f.xray_missing.push_back(r.xray_missing());
    if (r.mri_embedding) f.mri.row(i) = Eigen::Map<const Vector>(r.mri_embedding->data(), kEmbeddingDim).transpose();
    if (r.xray_embedding) f.xray.row(i) = Eigen::Map<const Vector>(r.xray_embedding->data(), kEmbeddingDim).transpose();
  }
  return f;
}

Matrix DatasetFeatures::tabular(std::span<const Block> bs, std::span<const std::size_t> rows) const {
  Eigen::Index cols = 0;
  for (Block b : bs) cols += blocks[static_cast<int>(b)].cols();
  Matrix out(static_cast<Eigen::Index>(rows.size()), cols);
  Eigen::Index offset = 0;
  for (Block b : bs) {
    const auto& m = blocks[static_cast<int>(b)];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.block(static_cast<Eigen::Index>(i), offset, 1, m.cols()) = m.row(static_cast<Eigen::Index>(rows[i]));
    }
    offset += m.cols();
  }
  return out;
}

std::vector<std::string> DatasetFeatures::tabular_names(std::span<const Block> bs) const {
  std::vector<std::string> out;
  for (Block b : bs) {
    for (const auto& c : columns[static_cast<int>(b)]) out.push_back(std::string(block_prefix(b)) + "." + c);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

const std::optional<Embedding>& embedding_of(const KneeRecord& r, ExpertKind kind) {
  return kind == ExpertKind::MriEmbedding ? r.mri_embedding : r.xray_embedding;
}

double embedding_prob(const FittedExpert& e, const Eigen::Ref<const Vector>& x) {
  Vector z = e.pca->transform(x.transpose()).row(0).transpose();
  z = z.cwiseQuotient(e.scale);
  return e.logistic->predict_proba(z);
}

}  // namespace

bool FittedExpert::modality_missing(const KneeRecord& record) const {
  if (kind == ExpertKind::Tabular) return false;
  return !embedding_of(record, kind).has_value();
}

double FittedExpert::predict(const KneeRecord& record) const {
  if (kind == ExpertKind::Tabular) {
    for (Block b : blocks) {
      const bool needed = std::any_of(feature_names.begin(), feature_names.end(), [&](const std::string& n) {
        return n.starts_with(std::string(block_prefix(b)) + ".");
      });
      if (needed && record.block(b).empty()) {
        fail(ErrorCategory::Input, "knee '" + record.knee_id + "': required block " + std::string(block_name(b)) +
                                       " is absent");
      }
    }
    std::vector<double> row;
    row.reserve(feature_names.size());
    for (const auto& name : feature_names) {
      const auto ref = parse_scalar_ref(name);
      row.push_back(ref ? record.scalar(ref->block, ref->name) : kMissing);
    }
    return gbdt->predict(row);
  }
  const auto& emb = embedding_of(record, kind);
  if (!emb || !logistic) return prevalence;
  if (emb->size() != static_cast<std::size_t>(pca->input_dim())) {
    fail(ErrorCategory::Dimension, "knee '" + record.knee_id + "': embedding dimension mismatch");
  }
  return embedding_prob(*this, Eigen::Map<const Vector>(emb->data(), static_cast<Eigen::Index>(emb->size())));
}

std::vector<double> FittedExpert::predict_rows(const DatasetFeatures& features, std::span<const std::size_t> rows) const {
  std::vector<double> out;
  out.reserve(rows.size());
  if (kind == ExpertKind::Tabular) {
    const Matrix X = features.tabular(blocks, rows);
    if (static_cast<std::size_t>(X.cols()) != feature_names.size()) {
      fail(ErrorCategory::Dimension, "tabular expert column mismatch");
    }
    const Vector p = gbdt->predict(X);
    out.assign(p.data(), p.data() + p.size());
    return out;
  }
  const auto& missing = kind == ExpertKind::MriEmbedding ? features.mri_missing : features.xray_missing;
  const auto& emb = kind == ExpertKind::MriEmbedding ? features.mri : features.xray;
  for (std::size_t r : rows) {
    if (missing[r] || !logistic) {
      out.push_back(prevalence);
    } else {
      out.push_back(embedding_prob(*this, emb.row(static_cast<Eigen::Index>(r)).transpose()));
    }
  }
  return out;
}

std::vector<int> FittedExpert::missing_flags(const DatasetFeatures& features, std::span<const std::size_t> rows) const {
  std::vector<int> out(rows.size(), 0);
  if (kind == ExpertKind::Tabular) return out;
  const auto& missing = kind == ExpertKind::MriEmbedding ? features.mri_missing : features.xray_missing;
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = missing[rows[i]] ? 1 : 0;
  return out;
}

FittedExpert fit_expert(ExpertKind kind, std::span<const Block> blocks, const DatasetFeatures& features,
                        std::span<const std::size_t> rows, const ExpertParams& params, std::uint64_t seed) {
  FittedExpert e;
  e.kind = kind;
  std::vector<int> y;
  y.reserve(rows.size());
  for (std::size_t r : rows) y.push_back(features.labels[r]);
  const auto pos = std::count(y.begin(), y.end(), 1);
  e.prevalence = rows.empty() ? 0.5 : static_cast<double>(pos) / static_cast<double>(rows.size());

  if (kind == ExpertKind::Tabular) {
    e.blocks.assign(blocks.begin(), blocks.end());
    e.feature_names = features.tabular_names(blocks);
    GbdtParams gp = params.gbdt;
    gp.seed = seed;
    e.gbdt = gbdt_fit(features.tabular(blocks, rows), std::span<const int>(y), gp);
    return e;
  }

  const auto& missing = kind == ExpertKind::MriEmbedding ? features.mri_missing : features.xray_missing;
  const auto& emb = kind == ExpertKind::MriEmbedding ? features.mri : features.xray;
  std::vector<std::size_t> present;
  std::vector<int> y_present;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!missing[rows[i]]) {
      present.push_back(rows[i]);
      y_present.push_back(y[i]);
    }
  }
  const auto pos_present = std::count(y_present.begin(), y_present.end(), 1);
  if (present.size() < 3 || pos_present == 0 || pos_present == static_cast<long>(present.size())) {
    return e;  // constant prevalence model
  }
  const Matrix X = gather_rows(emb, present);
  const Eigen::Index limit = std::min<Eigen::Index>(static_cast<Eigen::Index>(present.size()) - 1, X.cols());
  Eigen::Index k = params.pca_dims;
  if (k > limit) {
    log::warning("expert " + std::string(expert_name(kind)) + ": PCA dimension clipped from " + std::to_string(k) +
                 " to " + std::to_string(limit) + " (" + std::to_string(present.size()) + " training rows)");
    k = limit;
  }
  e.pca = pca_fit(X, k);
  Matrix Z = e.pca->transform(X);
  e.scale = Vector::Ones(k);
  if (params.whiten) {
    for (Eigen::Index c = 0; c < k; ++c) {
      const double sd = std::sqrt(e.pca->explained_variance[c]);
      if (sd > 1e-12) e.scale[c] = sd;
    }
  }
  for (Eigen::Index c = 0; c < k; ++c) Z.col(c) /= e.scale[c];
  e.logistic = logreg_fit(Z, std::span<const int>(y_present), params.logistic_l2, params.logistic);
  return e;
}

// ---------------------------------------------------------------------------

std::size_t ProvenanceLog::add_model(std::string tag, std::vector<std::size_t> train_rows) {
  std::sort(train_rows.begin(), train_rows.end());
  models_.push_back({std::move(tag), std::move(train_rows)});
  return models_.size() - 1;
}

void ProvenanceLog::add_use(std::size_t row, std::size_t model, std::string purpose) {
  uses_.push_back({row, model, std::move(purpose)});
}

void ProvenanceLog::append(const ProvenanceLog& other) {
  const std::size_t offset = models_.size();
  models_.insert(models_.end(), other.models_.begin(), other.models_.end());
  for (const auto& u : other.uses_) uses_.push_back({u.row, u.model + offset, u.purpose});
}

std::size_t ProvenanceLog::violations() const {
  std::size_t bad = 0;
  for (const auto& u : uses_) {
    const auto& rows = models_.at(u.model).train_rows;
    if (std::binary_search(rows.begin(), rows.end(), u.row)) ++bad;
  }
  return bad;
}

std::shared_ptr<const ExpertTraining> ExpertCache::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : it->second;
}

void ExpertCache::store(const std::string& key, std::shared_ptr<const ExpertTraining> value) {
  std::lock_guard lock(mutex_);
  entries_.emplace(key, std::move(value));
}

namespace {

std::string cache_key(ExpertKind kind, std::span<const Block> blocks, std::span<const std::size_t> rows,
                      const FoldPlan& plan, std::uint64_t seed) {
  std::string key(expert_name(kind));
  if (kind == ExpertKind::Tabular) {
    for (Block b : blocks) key += block_prefix(b);
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t r : rows) h = mix64(h ^ r);
  key += ":" + text::hex64(h) + ":" + plan.fingerprint() + ":" + text::hex64(seed);
  return key;
}

}  // namespace

ExpertTraining train_expert(ExpertKind kind, std::span<const Block> blocks, const DatasetFeatures& features,
                            std::span<const std::size_t> rows, const FoldPlan& plan, const ExpertParams& params,
                            std::uint64_t seed, ExpertCache* cache) {
  if (plan.size() != rows.size() || !is_partition(plan)) {
    fail(ErrorCategory::Dimension, "train_expert: fold plan does not partition the training rows");
  }
  std::string key;
  if (cache) {
    key = cache_key(kind, blocks, rows, plan, seed);
    if (auto hit = cache->find(key)) return *hit;
  }

  ExpertTraining out;
  out.oof.assign(rows.size(), 0.0);
  const std::string tag = std::string(expert_name(kind)) + "-fold";
  for (int f = 0; f < plan.k; ++f) {
    const auto train_pos = plan.train_positions(f);
    const auto test_pos = plan.test_positions(f);
    std::vector<std::size_t> train_rows, test_rows;
    for (auto p : train_pos) train_rows.push_back(rows[p]);
    for (auto p : test_pos) test_rows.push_back(rows[p]);
    long pos = 0;
    for (auto r : train_rows) pos += features.labels[r];
    if (pos == 0 || pos == static_cast<long>(train_rows.size())) {
      fail(ErrorCategory::FoldDegeneracy, "train_expert: training fold " + std::to_string(f) +
                                              " holds a single class; re-plan the folds");
    }
    const FittedExpert e = fit_expert(kind, blocks, features, train_rows, params, derive_seed(seed, f));
    const auto preds = e.predict_rows(features, test_rows);
    const auto id = out.provenance.add_model(tag + std::to_string(f), train_rows);
    for (std::size_t i = 0; i < test_pos.size(); ++i) {
      out.oof[test_pos[i]] = preds[i];
      out.provenance.add_use(test_rows[i], id, "expert-oof");
    }
  }
  out.expert = fit_expert(kind, blocks, features, rows, params, derive_seed(seed, "final"));
  out.missing = out.expert.missing_flags(features, rows);
  if (cache) cache->store(key, std::make_shared<const ExpertTraining>(out));
  return out;
}

ExpertTraining train_expert(ExpertKind kind, const FeatureConfig& config, const LabeledDataset& data,
                            const FoldPlan& plan, const ExpertParams& params, std::uint64_t seed) {
  const auto features = DatasetFeatures::from(data);
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0);
  return train_expert(kind, config.tabular_blocks, features, rows, plan, params, seed);
}

// ---------------------------------------------------------------------------

namespace {

double logit_clipped(double p) {
  constexpr double eps = 1e-12;
  p = std::clamp(p, eps, 1.0 - eps);
  return std::log(p / (1.0 - p));
}

}  // namespace

Vector meta_features(std::span<const double> expert_probs, std::span<const int> flags) {
  Vector v(static_cast<Eigen::Index>(expert_probs.size() + flags.size()));
  Eigen::Index i = 0;
  for (double p : expert_probs) v[i++] = logit_clipped(p);
  for (int f : flags) v[i++] = static_cast<double>(f);
  return v;
}

std::vector<std::string> StackingModel::meta_feature_names() const {
  std::vector<std::string> out;
  for (const auto& e : experts) out.push_back("logit_p_" + std::string(expert_name(e.kind)));
  for (const auto& e : experts) {
    if (e.kind != ExpertKind::Tabular) out.push_back("missing_" + std::string(expert_name(e.kind)));
  }
  return out;
}

const FittedExpert* StackingModel::tabular() const {
  for (const auto& e : experts) {
    if (e.kind == ExpertKind::Tabular) return &e;
  }
  return nullptr;
}

double StackingModel::predict(const KneeRecord& record) const {
  std::vector<double> probs;
  std::vector<int> flags;
  for (const auto& e : experts) probs.push_back(e.predict(record));
  if (!meta) return probs.front();
  for (const auto& e : experts) {
    if (e.kind != ExpertKind::Tabular) flags.push_back(e.modality_missing(record) ? 1 : 0);
  }
  return meta->predict_proba(meta_features(probs, flags));
}

std::vector<double> StackingModel::predict(std::span<const KneeRecord> records) const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(predict(r));
  return out;
}

std::vector<double> StackingModel::predict_rows(const DatasetFeatures& features, std::span<const std::size_t> rows) const {
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<int>> flags;
  for (const auto& e : experts) {
    probs.push_back(e.predict_rows(features, rows));
    if (e.kind != ExpertKind::Tabular) flags.push_back(e.missing_flags(features, rows));
  }
  if (!meta) return probs.front();
  std::vector<double> out(rows.size());
  std::vector<double> p(experts.size());
  std::vector<int> fl(flags.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t e = 0; e < experts.size(); ++e) p[e] = probs[e][i];
    for (std::size_t f = 0; f < flags.size(); ++f) fl[f] = flags[f][i];
    out[i] = meta->predict_proba(meta_features(p, fl));
  }
  return out;
}

StackingTraining train_stacking(const DatasetFeatures& features, std::span<const std::size_t> rows,
                                const FeatureConfig& config, const FoldPlan& plan, const StackingParams& params,
                                ExpertCache* cache) {
  const auto kinds = config.experts();
  if (kinds.empty()) fail(ErrorCategory::Spec, "train_stacking: configuration has no experts");
  StackingTraining out;
  out.model.config = config;
  out.model.fold_fingerprint = plan.fingerprint();
  std::vector<std::vector<int>> flags;
  for (ExpertKind kind : kinds) {
    const std::span<const Block> blocks =
        kind == ExpertKind::Tabular ? std::span<const Block>(config.tabular_blocks) : std::span<const Block>();
    auto t = train_expert(kind, blocks, features, rows, plan, params.experts,
                          derive_seed(params.seed, expert_name(kind)), cache);
    out.provenance.append(t.provenance);
    out.expert_oof.push_back(std::move(t.oof));
    if (kind != ExpertKind::Tabular) flags.push_back(std::move(t.missing));
    out.model.experts.push_back(std::move(t.expert));
  }
  if (kinds.size() > 1) {
    const auto dims = static_cast<Eigen::Index>(kinds.size() + flags.size());
    Matrix M(static_cast<Eigen::Index>(rows.size()), dims);
    std::vector<double> p(kinds.size());
    std::vector<int> fl(flags.size());
    std::vector<int> y;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t e = 0; e < kinds.size(); ++e) p[e] = out.expert_oof[e][i];
      for (std::size_t f = 0; f < flags.size(); ++f) fl[f] = flags[f][i];
      M.row(static_cast<Eigen::Index>(i)) = meta_features(p, fl).transpose();
      y.push_back(features.labels[rows[i]]);
    }
    out.model.meta = logreg_fit(M, std::span<const int>(y), params.meta_l2, params.meta);
  }
  return out;
}

StackingModel train_stacking(const LabeledDataset& data, const FeatureConfig& config, const FoldPlan& plan,
                             const StackingParams& params) {
  const auto features = DatasetFeatures::from(data);
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0);
  auto t = train_stacking(features, rows, config, plan, params);
  t.model.task = data.task.task;
  return std::move(t.model);
}

double predict_stacking(const StackingModel& model, const KneeRecord& record) { return model.predict(record); }

// ---------------------------------------------------------------------------

nlohmann::json to_json(const FittedExpert& e) {
  nlohmann::json j = {{"kind", expert_name(e.kind)}, {"prevalence", e.prevalence}};
  if (e.kind == ExpertKind::Tabular) {
    nlohmann::json blocks = nlohmann::json::array();
    for (Block b : e.blocks) blocks.push_back(block_prefix(b));
    j["blocks"] = blocks;
    j["feature_names"] = e.feature_names;
    j["gbdt"] = to_json(*e.gbdt);
  } else {
    j["pca"] = e.pca ? to_json(*e.pca) : nlohmann::json();
    j["scale"] = e.pca ? to_json_array(e.scale) : nlohmann::json();
    j["logistic"] = e.logistic ? to_json(*e.logistic) : nlohmann::json();
  }
  return j;
}

FittedExpert expert_from_json(const nlohmann::json& j) {
  FittedExpert e;
  const auto kind = j.at("kind").get<std::string>();
  e.kind = kind == "T" ? ExpertKind::Tabular : kind == "M" ? ExpertKind::MriEmbedding : ExpertKind::XrayEmbedding;
  e.prevalence = j.at("prevalence").get<double>();
  if (e.kind == ExpertKind::Tabular) {
    for (const auto& b : j.at("blocks")) {
      const auto ref = parse_scalar_ref(b.get<std::string>() + ".x");
      if (!ref) fail(ErrorCategory::Parse, "unknown block in model file");
      e.blocks.push_back(ref->block);
    }
    e.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    e.gbdt = gbdt_from_json(j.at("gbdt"));
  } else {
    if (!j.at("pca").is_null()) {
      e.pca = pca_from_json(j.at("pca"));
      e.scale = vector_from_json(j.at("scale"));
    }
    if (!j.at("logistic").is_null()) e.logistic = logistic_from_json(j.at("logistic"));
  }
  return e;
}

nlohmann::json to_json(const StackingModel& m) {
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : m.experts) experts.push_back(to_json(e));
  return {
      {"format", "koa-model"},
      {"version", kModelFormatVersion},
      {"type", "stacking"},
      {"config", m.config.name()},
      {"task", m.task == Task::JslOnlyVsNon ? "jsl" : "pain"},
      {"fold_fingerprint", m.fold_fingerprint},
      {"meta_features", m.meta_feature_names()},
      {"experts", experts},
      {"meta", m.meta ? to_json(*m.meta) : nlohmann::json()},
  };
}

StackingModel stacking_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "koa-model" || j.value("type", "") != "stacking") {
    fail(ErrorCategory::Parse, "not a stacking model file");
  }
  if (j.value("version", 0) != kModelFormatVersion) {
    fail(ErrorCategory::Parse, "unsupported model format version " + std::to_string(j.value("version", 0)));
  }
  StackingModel m;
  const auto id = parse_feature_config(j.at("config").get<std::string>());
  if (!id) fail(ErrorCategory::Parse, "unknown feature configuration in model file");
  m.config = FeatureConfig::of(*id);
  m.task = j.at("task").get<std::string>() == "pain" ? Task::PainOnlyVsNon : Task::JslOnlyVsNon;
  m.fold_fingerprint = j.at("fold_fingerprint").get<std::string>();
  for (const auto& e : j.at("experts")) m.experts.push_back(expert_from_json(e));
  if (!j.at("meta").is_null()) m.meta = logistic_from_json(j.at("meta"));
  return m;
}

}  // namespace koa
