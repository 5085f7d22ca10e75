#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace koa {

inline constexpr std::size_t kEmbeddingDim = 512;

// Explicit missing marker for named scalars. Infinities are never legal.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) noexcept { return std::isnan(v); }

enum class Side { Left, Right };

enum class CaseLabel : int { JslAndPain = 1, JslOnly = 2, PainOnly = 3, Non = 4 };

enum class Block : int { Demographics = 0, Radiographic = 1, MriScalars = 2, Biomarkers = 3 };
inline constexpr std::array<Block, 4> kAllBlocks = {Block::Demographics, Block::Radiographic,
                                                    Block::MriScalars, Block::Biomarkers};

std::string_view block_name(Block block);
std::string_view block_prefix(Block block);  // "demo", "rad", "mri", "bio"
std::string_view side_name(Side side);

// Well-known radiographic scalar names used by the structural summary.
namespace rad {
inline constexpr std::string_view kKlGrade = "kl_grade";
inline constexpr std::string_view kJsnMedial = "jsn_medial";
inline constexpr std::string_view kJsnLateral = "jsn_lateral";
inline constexpr std::string_view kJswMm = "jsw_mm";
}  // namespace rad

using ScalarMap = std::map<std::string, double, std::less<>>;
using Embedding = std::vector<double>;

struct KneeRecord {
  std::string knee_id;
  Side side = Side::Right;
  CaseLabel case_label = CaseLabel::Non;
  ScalarMap demographics;
  ScalarMap radiographic;
  ScalarMap mri_scalars;
  ScalarMap biomarkers;
  std::optional<Embedding> mri_embedding;
  std::optional<Embedding> xray_embedding;
  double observed_pain = kMissing;

  bool mri_missing() const noexcept { return !mri_embedding.has_value(); }
  bool xray_missing() const noexcept { return !xray_embedding.has_value(); }

  const ScalarMap& block(Block b) const;
  ScalarMap& block(Block b);

  // kMissing when the block lacks the name.
  double scalar(Block b, std::string_view name) const;
};

// Throws Error{Range|Numeric|Dimension} when a record breaks its invariants.
void validate_record(const KneeRecord& record);

struct CohortProvenance {
  enum class Kind { File, Synthetic };
  Kind kind = Kind::File;
  std::uint64_t seed = 0;
  std::string source;
};

// Immutable after construction; safe to share across readers.
class Cohort {
 public:
  Cohort() = default;
  Cohort(std::vector<KneeRecord> records, CohortProvenance provenance);

  const std::vector<KneeRecord>& records() const noexcept { return records_; }
  const CohortProvenance& provenance() const noexcept { return provenance_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const KneeRecord& operator[](std::size_t i) const { return records_[i]; }

  // Sorted union of scalar names present in the block across all records.
  std::vector<std::string> columns(Block block) const;

 private:
  std::vector<KneeRecord> records_;
  CohortProvenance provenance_;
};

// ---------------------------------------------------------------------------
// File IO

enum class ColumnRole {
  KneeId,
  Side,
  Case,
  Pain,
  Demographic,
  Radiographic,
  MriScalar,
  Biomarker,
  Ignore,
};

// Maps header columns to roles. The default convention recognises the fixed
// names knee_id, side, case, pain and the block prefixes demo., rad., mri.,
// bio. (the prefix is stripped from the stored scalar name). Explicit
// mappings take precedence over the convention.
struct CohortSchema {
  std::map<std::string, ColumnRole, std::less<>> explicit_roles;
  bool use_prefix_convention = true;

  static CohortSchema conventional() { return {}; }
  static CohortSchema from_json_file(const std::filesystem::path& path);

  // Resolved role and stored scalar name for a header column.
  std::pair<ColumnRole, std::string> resolve(std::string_view column) const;
};

struct CohortPaths {
  std::filesystem::path table;
  std::optional<std::filesystem::path> mri_embeddings;
  std::optional<std::filesystem::path> xray_embeddings;
};

Cohort load_cohort(const CohortPaths& paths, const CohortSchema& schema = CohortSchema::conventional());
Cohort load_cohort(const std::filesystem::path& table, const CohortSchema& schema = CohortSchema::conventional());

// Embedding file: one line per knee, knee_id followed by `dim` comma-separated
// values. No header.
std::map<std::string, Embedding, std::less<>> load_embeddings(const std::filesystem::path& path,
                                                              std::size_t dim = kEmbeddingDim);

// Writes the cohort table (and optional embedding files) in the conventional
// schema. Values are written with 17 significant digits so that a
// write/load cycle is lossless.
void write_cohort(const Cohort& cohort, const CohortPaths& paths);

// ---------------------------------------------------------------------------
// Tasks

enum class Task { JslOnlyVsNon, PainOnlyVsNon };

struct TaskSpec {
  Task task = Task::JslOnlyVsNon;

  CaseLabel positive_case() const noexcept;
  CaseLabel negative_case() const noexcept;
  std::string_view name() const noexcept;  // "jsl" or "pain"
};

std::optional<Task> parse_task(std::string_view name);

struct LabeledDataset {
  std::vector<KneeRecord> records;
  std::vector<int> labels;
  TaskSpec task;
  // Index of each record in the cohort it was built from.
  std::vector<std::size_t> cohort_rows;

  std::size_t size() const noexcept { return records.size(); }
  std::size_t positives() const noexcept;
  std::size_t negatives() const noexcept { return size() - positives(); }
};

LabeledDataset build_task(const Cohort& cohort, TaskSpec spec);

// ---------------------------------------------------------------------------
// Cohort filters

struct ScalarRef {
  Block block;
  std::string name;

  bool operator==(const ScalarRef&) const = default;
};

std::string to_string(const ScalarRef& ref);  // "rad.kl_grade"
std::optional<ScalarRef> parse_scalar_ref(std::string_view text);

// Structural modelling cohort: keeps records with every required predictor
// present. The predictor set is configuration.
Cohort filter_complete_predictors(const Cohort& cohort, const std::vector<ScalarRef>& required);

// Complete-case subset for discordance modelling: additionally requires
// observed pain.
Cohort filter_complete_cases(const Cohort& cohort, const std::vector<ScalarRef>& discordance_vars);

}  // namespace koa
