#include "koa/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "koa/error.hpp"
#include "koa/text.hpp"

namespace koa {

std::string_view block_name(Block block) {
  switch (block) {
    case Block::Demographics: return "demographics";
    case Block::Radiographic: return "radiographic";
    case Block::MriScalars: return "mri_scalars";
    case Block::Biomarkers: return "biomarkers";
  }
  return "?";
}

std::string_view block_prefix(Block block) {
  switch (block) {
    case Block::Demographics: return "demo";
    case Block::Radiographic: return "rad";
    case Block::MriScalars: return "mri";
    case Block::Biomarkers: return "bio";
  }
  return "?";
}

std::string_view side_name(Side side) { return side == Side::Left ? "left" : "right"; }

const ScalarMap& KneeRecord::block(Block b) const {
  switch (b) {
    case Block::Demographics: return demographics;
    case Block::Radiographic: return radiographic;
    case Block::MriScalars: return mri_scalars;
    case Block::Biomarkers: return biomarkers;
  }
  return demographics;
}

ScalarMap& KneeRecord::block(Block b) {
  return const_cast<ScalarMap&>(static_cast<const KneeRecord&>(*this).block(b));
}

double KneeRecord::scalar(Block b, std::string_view name) const {
  const auto& m = block(b);
  const auto it = m.find(name);
  return it == m.end() ? kMissing : it->second;
}

namespace {

void check_grade(const KneeRecord& r, std::string_view name, double lo, double hi) {
  const double v = r.scalar(Block::Radiographic, name);
  if (is_missing(v)) return;
  if (v < lo || v > hi) {
    fail(ErrorCategory::Range, "knee '" + r.knee_id + "': rad." + std::string(name) + " = " +
                                   text::format_double17(v) + " outside [" +
                                   text::format_double17(lo) + ", " + text::format_double17(hi) + "]");
  }
}

}  // namespace

void validate_record(const KneeRecord& r) {
  if (r.knee_id.empty()) fail(ErrorCategory::Integrity, "empty knee_id");
  const int c = static_cast<int>(r.case_label);
  if (c < 1 || c > 4) fail(ErrorCategory::Range, "knee '" + r.knee_id + "': case label out of range");
  for (Block b : kAllBlocks) {
    for (const auto& [name, v] : r.block(b)) {
      if (std::isinf(v)) {
        fail(ErrorCategory::Numeric, "knee '" + r.knee_id + "': " + std::string(block_prefix(b)) + "." +
                                         name + " is infinite");
      }
    }
  }
  check_grade(r, rad::kKlGrade, 0, 4);
  check_grade(r, rad::kJsnMedial, 0, 3);
  check_grade(r, rad::kJsnLateral, 0, 3);
  for (const auto* e : {&r.mri_embedding, &r.xray_embedding}) {
    if (!e->has_value()) continue;
    if ((*e)->size() != kEmbeddingDim) {
      fail(ErrorCategory::Dimension, "knee '" + r.knee_id + "': embedding has " +
                                         std::to_string((*e)->size()) + " values, expected " +
                                         std::to_string(kEmbeddingDim));
    }
    for (double v : **e) {
      if (!std::isfinite(v)) fail(ErrorCategory::Numeric, "knee '" + r.knee_id + "': non-finite embedding value");
    }
  }
  if (std::isinf(r.observed_pain)) fail(ErrorCategory::Numeric, "knee '" + r.knee_id + "': infinite pain");
}

Cohort::Cohort(std::vector<KneeRecord> records, CohortProvenance provenance)
    : records_(std::move(records)), provenance_(std::move(provenance)) {
  std::unordered_set<std::string> seen;
  seen.reserve(records_.size());
  for (const auto& r : records_) {
    validate_record(r);
    if (!seen.insert(r.knee_id).second) fail(ErrorCategory::Integrity, "duplicate knee_id '" + r.knee_id + "'");
  }
}

std::vector<std::string> Cohort::columns(Block block) const {
  std::set<std::string> names;
  for (const auto& r : records_) {
    for (const auto& [name, v] : r.block(block)) names.insert(name);
  }
  return {names.begin(), names.end()};
}

// ---------------------------------------------------------------------------

std::pair<ColumnRole, std::string> CohortSchema::resolve(std::string_view column) const {
  if (const auto it = explicit_roles.find(column); it != explicit_roles.end()) {
    std::string name(column);
    if (const auto dot = name.find('.'); dot != std::string::npos) name = name.substr(dot + 1);
    return {it->second, name};
  }
  if (!use_prefix_convention) return {ColumnRole::Ignore, std::string(column)};
  if (column == "knee_id") return {ColumnRole::KneeId, "knee_id"};
  if (column == "side") return {ColumnRole::Side, "side"};
  if (column == "case") return {ColumnRole::Case, "case"};
  if (column == "pain") return {ColumnRole::Pain, "pain"};
  static constexpr std::pair<std::string_view, ColumnRole> prefixes[] = {
      {"demo.", ColumnRole::Demographic},
      {"rad.", ColumnRole::Radiographic},
      {"mri.", ColumnRole::MriScalar},
      {"bio.", ColumnRole::Biomarker},
  };
  for (const auto& [prefix, role] : prefixes) {
    if (column.starts_with(prefix) && column.size() > prefix.size()) {
      return {role, std::string(column.substr(prefix.size()))};
    }
  }
  return {ColumnRole::Ignore, std::string(column)};
}

CohortSchema CohortSchema::from_json_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text::read_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::Parse, "schema file '" + path.string() + "': " + e.what());
  }
  static const std::map<std::string, ColumnRole, std::less<>> role_names = {
      {"knee_id", ColumnRole::KneeId},       {"side", ColumnRole::Side},
      {"case", ColumnRole::Case},            {"pain", ColumnRole::Pain},
      {"demographic", ColumnRole::Demographic}, {"radiographic", ColumnRole::Radiographic},
      {"mri_scalar", ColumnRole::MriScalar}, {"biomarker", ColumnRole::Biomarker},
      {"ignore", ColumnRole::Ignore},
  };
  CohortSchema schema;
  schema.use_prefix_convention = j.value("use_prefix_convention", true);
  const nlohmann::json columns = j.value("columns", nlohmann::json::object());
  for (auto entry = columns.begin(); entry != columns.end(); ++entry) {
    if (!entry.value().is_string()) fail(ErrorCategory::Schema, "role of column '" + entry.key() + "' is not a string");
    const std::string role = entry.value().get<std::string>();
    const auto it = role_names.find(role);
    if (it == role_names.end()) fail(ErrorCategory::Schema, "unknown column role '" + role + "'");
    schema.explicit_roles.emplace(entry.key(), it->second);
  }
  return schema;
}

namespace {

Side parse_side(std::string_view field, std::size_t row) {
  const auto f = text::trim(field);
  if (f == "left" || f == "Left" || f == "L" || f == "l" || f == "2") return Side::Left;
  if (f == "right" || f == "Right" || f == "R" || f == "r" || f == "1") return Side::Right;
  fail(ErrorCategory::Parse, "row " + std::to_string(row) + ": unrecognised side '" + std::string(f) + "'");
}

std::vector<std::string> required_columns_missing(const std::vector<ColumnRole>& roles) {
  std::vector<std::string> missing;
  const auto has = [&](ColumnRole r) { return std::find(roles.begin(), roles.end(), r) != roles.end(); };
  if (!has(ColumnRole::KneeId)) missing.emplace_back("knee_id");
  if (!has(ColumnRole::Side)) missing.emplace_back("side");
  if (!has(ColumnRole::Case)) missing.emplace_back("case");
  if (!has(ColumnRole::Pain)) missing.emplace_back("pain");
  return missing;
}

}  // namespace

std::map<std::string, Embedding, std::less<>> load_embeddings(const std::filesystem::path& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::Io, "cannot open embedding file '" + path.string() + "'");
  std::map<std::string, Embedding, std::less<>> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (text::trim(line).empty()) continue;
    const auto fields = text::split_fields(line);
    if (fields.size() != dim + 1) {
      fail(ErrorCategory::Parse, path.string() + " line " + std::to_string(row) + ": expected " +
                                     std::to_string(dim + 1) + " fields, got " + std::to_string(fields.size()));
    }
    Embedding e(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const auto v = text::parse_double(fields[i + 1]);
      if (!v || !std::isfinite(*v)) {
        fail(ErrorCategory::Parse, path.string() + " line " + std::to_string(row) + ": non-numeric value in column " +
                                       std::to_string(i + 1));
      }
      e[i] = *v;
    }
    std::string id(text::trim(fields[0]));
    if (!out.emplace(id, std::move(e)).second) {
      fail(ErrorCategory::Integrity, path.string() + ": duplicate knee_id '" + id + "'");
    }
  }
  return out;
}

Cohort load_cohort(const std::filesystem::path& table, const CohortSchema& schema) {
  return load_cohort(CohortPaths{table, std::nullopt, std::nullopt}, schema);
}

Cohort load_cohort(const CohortPaths& paths, const CohortSchema& schema) {
  std::ifstream in(paths.table);
  if (!in) fail(ErrorCategory::Io, "cannot open cohort file '" + paths.table.string() + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCategory::Schema, "cohort file '" + paths.table.string() + "' has no header");
  const auto header = text::split_fields(line);
  std::vector<ColumnRole> roles;
  std::vector<std::string> names;
  for (const auto& h : header) {
    auto [role, name] = schema.resolve(text::trim(h));
    roles.push_back(role);
    names.push_back(std::move(name));
  }
  if (const auto missing = required_columns_missing(roles); !missing.empty()) {
    std::string msg = "cohort file '" + paths.table.string() + "' lacks required column role(s):";
    for (const auto& m : missing) msg += " " + m;
    fail(ErrorCategory::Schema, msg);
  }

  std::vector<KneeRecord> records;
  std::unordered_set<std::string> seen;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (text::trim(line).empty()) continue;
    const auto fields = text::split_fields(line);
    if (fields.size() != header.size()) {
      fail(ErrorCategory::Parse, "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                     " fields, got " + std::to_string(fields.size()));
    }
    KneeRecord r;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const std::string_view f = fields[c];
      const auto numeric = [&]() -> double {
        if (text::is_missing_token(f)) return kMissing;
        const auto v = text::parse_double(f);
        if (!v || std::isinf(*v)) {
          fail(ErrorCategory::Parse, "row " + std::to_string(row) + ", column '" + header[c] +
                                         "': non-numeric value '" + std::string(f) + "'");
        }
        return *v;
      };
      switch (roles[c]) {
        case ColumnRole::KneeId: r.knee_id = std::string(text::trim(f)); break;
        case ColumnRole::Side: r.side = parse_side(f, row); break;
        case ColumnRole::Case: {
          const auto v = text::parse_int(f);
          if (!v || *v < 1 || *v > 4) {
            fail(ErrorCategory::Parse, "row " + std::to_string(row) + ": case label '" + std::string(f) +
                                           "' is not one of 1, 2, 3, 4");
          }
          r.case_label = static_cast<CaseLabel>(*v);
          break;
        }
        case ColumnRole::Pain: r.observed_pain = numeric(); break;
        case ColumnRole::Demographic: r.demographics[names[c]] = numeric(); break;
        case ColumnRole::Radiographic: r.radiographic[names[c]] = numeric(); break;
        case ColumnRole::MriScalar: r.mri_scalars[names[c]] = numeric(); break;
        case ColumnRole::Biomarker: r.biomarkers[names[c]] = numeric(); break;
        case ColumnRole::Ignore: break;
      }
    }
    if (r.knee_id.empty()) fail(ErrorCategory::Parse, "row " + std::to_string(row) + ": empty knee_id");
    if (!seen.insert(r.knee_id).second) {
      fail(ErrorCategory::Integrity, "row " + std::to_string(row) + ": duplicate knee_id '" + r.knee_id + "'");
    }
    records.push_back(std::move(r));
  }

  const auto attach = [&](const std::optional<std::filesystem::path>& p, std::optional<Embedding> KneeRecord::*slot) {
    if (!p) return;
    auto table = load_embeddings(*p);
    for (auto& r : records) {
      if (auto it = table.find(r.knee_id); it != table.end()) r.*slot = std::move(it->second);
    }
  };
  attach(paths.mri_embeddings, &KneeRecord::mri_embedding);
  attach(paths.xray_embeddings, &KneeRecord::xray_embedding);

  return Cohort(std::move(records), CohortProvenance{CohortProvenance::Kind::File, 0, paths.table.string()});
}

void write_cohort(const Cohort& cohort, const CohortPaths& paths) {
  std::ostringstream out;
  std::array<std::vector<std::string>, 4> cols;
  out << "knee_id,side,case,pain";
  for (Block b : kAllBlocks) {
    cols[static_cast<int>(b)] = cohort.columns(b);
    for (const auto& name : cols[static_cast<int>(b)]) out << ',' << block_prefix(b) << '.' << name;
  }
  out << '\n';
  const auto num = [](double v) { return is_missing(v) ? std::string("NA") : text::format_double17(v); };
  for (const auto& r : cohort.records()) {
    out << r.knee_id << ',' << side_name(r.side) << ',' << static_cast<int>(r.case_label) << ','
        << num(r.observed_pain);
    for (Block b : kAllBlocks) {
      for (const auto& name : cols[static_cast<int>(b)]) out << ',' << num(r.scalar(b, name));
    }
    out << '\n';
  }
  text::write_file(paths.table.string(), out.str());

  const auto emit = [&](const std::optional<std::filesystem::path>& p, const std::optional<Embedding> KneeRecord::*slot) {
    if (!p) return;
    std::ostringstream e;
    for (const auto& r : cohort.records()) {
      if (!(r.*slot)) continue;
      e << r.knee_id;
      for (double v : *(r.*slot)) e << ',' << text::format_double17(v);
      e << '\n';
    }
    text::write_file(p->string(), e.str());
  };
  emit(paths.mri_embeddings, &KneeRecord::mri_embedding);
  emit(paths.xray_embeddings, &KneeRecord::xray_embedding);
}

// ---------------------------------------------------------------------------

CaseLabel TaskSpec::positive_case() const noexcept {
  return task == Task::JslOnlyVsNon ? CaseLabel::JslOnly : CaseLabel::PainOnly;
}

CaseLabel TaskSpec::negative_case() const noexcept { return CaseLabel::Non; }

std::string_view TaskSpec::name() const noexcept { return task == Task::JslOnlyVsNon ? "jsl" : "pain"; }

std::optional<Task> parse_task(std::string_view name) {
  if (name == "jsl") return Task::JslOnlyVsNon;
  if (name == "pain") return Task::PainOnlyVsNon;
  return std::nullopt;
}

std::size_t LabeledDataset::positives() const noexcept {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

LabeledDataset build_task(const Cohort& cohort, TaskSpec spec) {
  LabeledDataset out;
  out.task = spec;
  const auto pos = spec.positive_case();
  const auto neg = spec.negative_case();
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& r = cohort[i];
    if (r.case_label != pos && r.case_label != neg) continue;
    out.records.push_back(r);
    out.labels.push_back(r.case_label == pos ? 1 : 0);
    out.cohort_rows.push_back(i);
  }
  const auto p = out.positives();
  if (p == 0 || p == out.size()) {
    fail(ErrorCategory::Task, "task '" + std::string(spec.name()) + "': " + std::to_string(p) + " positive and " +
                                  std::to_string(out.size() - p) + " negative records; both classes are required");
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(const ScalarRef& ref) { return std::string(block_prefix(ref.block)) + "." + ref.name; }

std::optional<ScalarRef> parse_scalar_ref(std::string_view text) {
  const auto dot = text.find('.');
  if (dot == std::string_view::npos || dot + 1 >= text.size()) return std::nullopt;
  const auto prefix = text.substr(0, dot);
  for (Block b : kAllBlocks) {
    if (block_prefix(b) == prefix) return ScalarRef{b, std::string(text.substr(dot + 1))};
  }
  return std::nullopt;
}

namespace {

bool has_all(const KneeRecord& r, const std::vector<ScalarRef>& refs) {
  return std::all_of(refs.begin(), refs.end(), [&](const ScalarRef& s) { return !is_missing(r.scalar(s.block, s.name)); });
}

}  // namespace

Cohort filter_complete_predictors(const Cohort& cohort, const std::vector<ScalarRef>& required) {
  std::vector<KneeRecord> kept;
  for (const auto& r : cohort.records()) {
    if (has_all(r, required)) kept.push_back(r);
  }
  return Cohort(std::move(kept), cohort.provenance());
}

Cohort filter_complete_cases(const Cohort& cohort, const std::vector<ScalarRef>& discordance_vars) {
  std::vector<KneeRecord> kept;
  for (const auto& r : cohort.records()) {
    if (!is_missing(r.observed_pain) && has_all(r, discordance_vars)) kept.push_back(r);
  }
  return Cohort(std::move(kept), cohort.provenance());
}

}  // namespace koa
