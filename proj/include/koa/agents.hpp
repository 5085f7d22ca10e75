#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "koa/dataset.hpp"
#include "koa/discordance.hpp"
#include "koa/ensemble.hpp"
#include "koa/evaluation.hpp"

namespace koa {

struct StructuralSummary {
  double kl_grade = 0.0;
  double jsn_medial = 0.0;
  double jsn_lateral = 0.0;
  double jsw_mm = 0.0;
  std::vector<RankedFeature> top_features;  // at most five, normalised importance
};

struct EvidenceFields {
  std::string knee_id;
  double p_struct = 0.0;
  double y_pain = 0.0;
  double y_hat_pain = 0.0;
  double d_ps = 0.0;
  double d_ps_standardized = 0.0;
  StructuralSummary structure;
  Thresholds thresholds;
};

// A field quoted by a narrative: the exact bundle value and the string the
// text is allowed to show for it.
struct Citation {
  std::string field;
  double value = 0.0;
  std::string rendered;
  bool operator==(const Citation&) const = default;
};

// Frozen once constructed. Agents only ever see a const reference.
class EvidenceBundle {
 public:
  explicit EvidenceBundle(EvidenceFields fields);

  const EvidenceFields& fields() const noexcept { return fields_; }
  const std::string& knee_id() const noexcept { return fields_.knee_id; }
  // FNV-1a digest of the canonical numeric serialisation.
  const std::string& hash() const noexcept { return hash_; }
  std::string recompute_hash() const;

  // Every numeric field, with its canonical rendering.
  const std::vector<Citation>& citations() const noexcept { return citations_; }
  const Citation& citation(std::string_view field) const;
  std::optional<double> value(std::string_view field) const;

  PhenotypeLabel rule_phenotype() const noexcept;

 private:
  EvidenceFields fields_;
  std::vector<Citation> citations_;
  std::string hash_;
};

std::string render_field(std::string_view field, double value);

StructuralSummary structural_summary(const KneeRecord& record, std::span<const RankedFeature> top = {});
std::vector<RankedFeature> top_features(const StackingModel& model, std::size_t n = 5);

// Everything is computed before the bundle exists; on any error no bundle
// is produced.
EvidenceBundle bundle_evidence(const KneeRecord& record, const StackingModel& stacking,
                               const ExpectedPainModel& pain_model, const Thresholds& th);
// Same, with p_struct supplied by the caller (e.g. an out-of-fold estimate).
EvidenceBundle bundle_evidence(const KneeRecord& record, double p_struct, std::span<const RankedFeature> top,
                               const ExpectedPainModel& pain_model, const Thresholds& th);
EvidenceBundle bundle_from_values(std::string knee_id, double p_struct, const DiscordanceScore& score,
                                  StructuralSummary structure, const Thresholds& th);

nlohmann::json to_json(const EvidenceBundle& bundle);
EvidenceBundle evidence_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------

enum class AgentRole { Template, SingleAgent, Structuralist, Physiologist, LeadConsultant, Therapy };
std::string_view role_name(AgentRole role);

enum class ConcernLevel { Low, Moderate, High };
std::string_view concern_name(ConcernLevel level);

struct AgentMessage {
  std::uint64_t tick = 0;  // logical timestamp: position in the conversation
  AgentRole role = AgentRole::Template;
  std::string intent;      // e.g. "structuralist.report", "debate.physiologist"
  int round = 0;           // debate round, 0 outside the debate
  std::string text;
  std::vector<Citation> citations;
};

struct GenerationRequest {
  AgentRole role = AgentRole::Template;
  std::string intent;
  std::string system_prompt;
  // Non-numeric slots (labels, concern level, feature list).
  std::map<std::string, std::string> slots;
  // Numeric evidence the text may quote.
  std::vector<Citation> citations;
  const std::vector<AgentMessage>* conversation = nullptr;
};

class TextBackend {
 public:
  virtual ~TextBackend() = default;
  virtual std::string fingerprint() const = 0;
  // Must be safe to call concurrently for different cases.
  virtual std::string generate(const GenerationRequest& request) = 0;
};

// Template expansion: `{name}` is replaced by the slot value or the rendered
// citation of that name. Unknown intents and unknown slots are Spec errors.
class DeterministicBackend final : public TextBackend {
 public:
  std::string fingerprint() const override { return "deterministic-template-v1"; }
  std::string generate(const GenerationRequest& request) override;
  static std::string expand(std::string_view tmpl, const GenerationRequest& request);
  static std::string_view template_for(std::string_view intent);
};

struct HttpBackendOptions {
  std::string url;  // http://host[:port]/path
  std::string model = "default";
  std::chrono::milliseconds timeout{30000};
  int retries = 2;
  std::string token_env = "KOA_BACKEND_TOKEN";
};

// Chat-completion style JSON over HTTP. Failures after the configured
// retries raise a retriable Transport error.
class HttpBackend final : public TextBackend {
 public:
  explicit HttpBackend(HttpBackendOptions options);
  std::string fingerprint() const override;
  std::string generate(const GenerationRequest& request) override;

 private:
  HttpBackendOptions options_;
  std::string host_;
  int port_ = 80;
  std::string path_;
};

// "deterministic" or "http:<url>".
std::unique_ptr<TextBackend> make_backend(std::string_view spec);

// ---------------------------------------------------------------------------

enum class SystemConfigId { A0, A1, A2, A3, A4 };
enum class TriggerSource { None, Discordance, Randomized };

struct SystemConfig {
  SystemConfigId id = SystemConfigId::A0;
  bool debate_enabled = false;
  TriggerSource trigger_source = TriggerSource::None;
  double random_rate = 0.5;  // A4 only
  int debate_cap = 2;

  static SystemConfig of(SystemConfigId id);
  bool uses_backend() const noexcept { return id != SystemConfigId::A0; }
};

std::string_view config_id_name(SystemConfigId id);  // "A0".."A4"
std::optional<SystemConfigId> parse_system_config(std::string_view text);

struct SpecialistReport {
  AgentRole role = AgentRole::Structuralist;
  ConcernLevel concern_level = ConcernLevel::Low;
  PhenotypeLabel claimed_phenotype_view = PhenotypeLabel::ConcordantMild;
  std::string narrative;
  std::vector<Citation> cited_evidence;
};

struct ConsultantDecision {
  PhenotypeLabel phenotype = PhenotypeLabel::ConcordantMild;
  bool debate_occurred = false;
  int debate_rounds = 0;
  std::string resolution_rule;
  std::string management_summary;
};

std::string_view resolution_rule_for(PhenotypeLabel label);
std::string therapy_summary(const ConsultantDecision& decision);

// Default view of each specialist before any generated text is considered.
ConcernLevel structural_concern(const EvidenceBundle& bundle);
ConcernLevel symptom_concern(const EvidenceBundle& bundle);
PhenotypeLabel structuralist_view(const EvidenceBundle& bundle);
PhenotypeLabel physiologist_view(const EvidenceBundle& bundle);

bool views_conflict(const SpecialistReport& a, const SpecialistReport& b);
double randomized_trigger_draw(const std::string& knee_id, std::uint64_t seed);
bool trigger_debate(const EvidenceBundle& bundle, const SpecialistReport& structuralist,
                    const SpecialistReport& physiologist, const SystemConfig& config, std::uint64_t seed);

// Phenotype named in free text: the label after "phenotype:" when present,
// otherwise the earliest mention. nullopt when no label is mentioned.
std::optional<PhenotypeLabel> parse_phenotype_mention(std::string_view text);

// Numerals in `text` not found among the citations' renderings, plus
// citations whose value differs from the bundle.
struct GroundingCheck {
  std::vector<std::string> unmatched_numerals;
  std::vector<std::string> mismatched_citations;
  bool ok() const noexcept { return unmatched_numerals.empty() && mismatched_citations.empty(); }
  std::size_t violations() const noexcept { return unmatched_numerals.size() + mismatched_citations.size(); }
};
std::vector<std::string> numeral_tokens(std::string_view text);
GroundingCheck check_grounding(std::string_view text, std::span<const Citation> citations,
                               const EvidenceBundle& bundle);

struct CaseReport {
  std::string knee_id;
  SystemConfigId config = SystemConfigId::A0;
  std::string backend_fingerprint;  // "none" for A0
  std::string evidence_hash;
  nlohmann::json evidence;
  std::vector<AgentMessage> transcript;
  std::optional<SpecialistReport> structuralist;
  std::optional<SpecialistReport> physiologist;
  ConsultantDecision decision;
  // Label named by the generated text; differs from decision.phenotype only
  // when the narrative diverged from the rule output.
  std::optional<PhenotypeLabel> narrative_phenotype;
  bool narrative_divergence = false;

  std::string report_id() const;  // knee_id + "/" + config
  // Text shown to raters: the transcript without any configuration marker.
  std::string report_text() const;
};

struct RunCaseOptions {
  // Reject the report on any grounding violation.
  bool enforce_grounding = true;
};

CaseReport run_case(const EvidenceBundle& bundle, const SystemConfig& config, TextBackend* backend,
                    std::uint64_t seed, const RunCaseOptions& options = {});

std::vector<CaseReport> run_cases(std::span<const EvidenceBundle> bundles, const SystemConfig& config,
                                  TextBackend* backend, std::uint64_t seed, unsigned max_in_flight = 1,
                                  const RunCaseOptions& options = {});

nlohmann::json to_json(const CaseReport& report);
CaseReport case_report_from_json(const nlohmann::json& j);
nlohmann::json transcript_json(const CaseReport& report);

}  // namespace koa
