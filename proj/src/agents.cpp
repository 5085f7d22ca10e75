#include "koa/agents.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "koa/error.hpp"
#include "koa/parallel.hpp"
#include "koa/rng.hpp"
#include "koa/text.hpp"

namespace koa {

namespace {

constexpr std::string_view kImportancePrefix = "importance:";

bool is_grade_field(std::string_view f) { return f == "kl_grade" || f == "jsn_medial" || f == "jsn_lateral"; }

std::string printf_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

std::string render_field(std::string_view field, double value) {
  if (is_grade_field(field)) return printf_double("%.0f", value);
  if (field.starts_with(kImportancePrefix)) return printf_double("%.1f", value);
  return printf_double("%.2f", value);
}

EvidenceBundle::EvidenceBundle(EvidenceFields fields) : fields_(std::move(fields)) {
  const auto& f = fields_;
  const std::pair<std::string_view, double> scalars[] = {
      {"p_struct", f.p_struct},
      {"y_pain", f.y_pain},
      {"y_hat_pain", f.y_hat_pain},
      {"d_ps", f.d_ps},
      {"d_ps_standardized", f.d_ps_standardized},
      {"kl_grade", f.structure.kl_grade},
      {"jsn_medial", f.structure.jsn_medial},
      {"jsn_lateral", f.structure.jsn_lateral},
      {"jsw_mm", f.structure.jsw_mm},
      {"tau_d", f.thresholds.tau_d},
      {"tau_p", f.thresholds.tau_p},
  };
  for (const auto& [name, v] : scalars) {
    if (!std::isfinite(v)) fail(ErrorCategory::Numeric, "evidence field " + std::string(name) + " is not finite");
    citations_.push_back({std::string(name), v, render_field(name, v)});
  }
  for (const auto& t : f.structure.top_features) {
    const std::string name = std::string(kImportancePrefix) + t.feature;
    citations_.push_back({name, t.mean_importance, render_field(name, t.mean_importance)});
  }
  hash_ = recompute_hash();
}

std::string EvidenceBundle::recompute_hash() const {
  std::string canon = "knee_id=" + fields_.knee_id + "\n";
  const auto add = [&](std::string_view name, double v) {
    canon += std::string(name) + "=" + text::format_double17(v) + "\n";
  };
  const auto& f = fields_;
  add("p_struct", f.p_struct);
  add("y_pain", f.y_pain);
  add("y_hat_pain", f.y_hat_pain);
  add("d_ps", f.d_ps);
  add("d_ps_standardized", f.d_ps_standardized);
  add("kl_grade", f.structure.kl_grade);
  add("jsn_medial", f.structure.jsn_medial);
  add("jsn_lateral", f.structure.jsn_lateral);
  add("jsw_mm", f.structure.jsw_mm);
  add("tau_d", f.thresholds.tau_d);
  add("tau_p", f.thresholds.tau_p);
  for (const auto& t : f.structure.top_features) add(std::string(kImportancePrefix) + t.feature, t.mean_importance);
  return text::hex64(fnv1a64(canon));
}

const Citation& EvidenceBundle::citation(std::string_view field) const {
  for (const auto& c : citations_) {
    if (c.field == field) return c;
  }
  fail(ErrorCategory::Spec, "evidence bundle has no field " + std::string(field));
}

std::optional<double> EvidenceBundle::value(std::string_view field) const {
  for (const auto& c : citations_) {
    if (c.field == field) return c.value;
  }
  return std::nullopt;
}

PhenotypeLabel EvidenceBundle::rule_phenotype() const noexcept {
  return phenotype_rule(fields_.p_struct, fields_.d_ps_standardized, fields_.thresholds);
}

StructuralSummary structural_summary(const KneeRecord& record, std::span<const RankedFeature> top) {
  StructuralSummary s;
  const auto need = [&](std::string_view name) {
    const double v = record.scalar(Block::Radiographic, name);
    if (is_missing(v)) {
      fail(ErrorCategory::Input, "knee '" + record.knee_id + "' lacks radiographic scalar " + std::string(name));
    }
    return v;
  };
  s.kl_grade = need(rad::kKlGrade);
  s.jsn_medial = need(rad::kJsnMedial);
  s.jsn_lateral = need(rad::kJsnLateral);
  s.jsw_mm = need(rad::kJswMm);
  s.top_features.assign(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(5, top.size())));
  return s;
}

std::vector<RankedFeature> top_features(const StackingModel& model, std::size_t n) {
  const FittedExpert* t = model.tabular();
  if (!t) return {};
  return feature_importance_report(std::span<const FittedExpert>(t, 1), n);
}

EvidenceBundle bundle_evidence(const KneeRecord& record, double p_struct, std::span<const RankedFeature> top,
                               const ExpectedPainModel& pain_model, const Thresholds& th) {
  th.validate();
  if (!(p_struct >= 0.0 && p_struct <= 1.0)) fail(ErrorCategory::Range, "p_struct outside [0, 1]");
  if (!std::isfinite(record.observed_pain)) {
    fail(ErrorCategory::Input, "knee '" + record.knee_id + "' has no observed pain");
  }
  StructuralSummary s = structural_summary(record, top);
  const DiscordanceScore score = discordance(record, pain_model);
  return bundle_from_values(record.knee_id, p_struct, score, std::move(s), th);
}

EvidenceBundle bundle_evidence(const KneeRecord& record, const StackingModel& stacking,
                               const ExpectedPainModel& pain_model, const Thresholds& th) {
  const double p = stacking.predict(record);
  const auto top = top_features(stacking, 5);
  return bundle_evidence(record, p, top, pain_model, th);
}

EvidenceBundle bundle_from_values(std::string knee_id, double p_struct, const DiscordanceScore& score,
                                  StructuralSummary structure, const Thresholds& th) {
  th.validate();
  EvidenceFields f;
  f.knee_id = std::move(knee_id);
  f.p_struct = p_struct;
  f.y_pain = score.y_pain;
  f.y_hat_pain = score.y_hat_pain;
  f.d_ps = score.d_ps;
  f.d_ps_standardized = score.d_ps_standardized;
  f.structure = std::move(structure);
  f.thresholds = th;
  return EvidenceBundle(std::move(f));
}

nlohmann::json to_json(const EvidenceBundle& b) {
  const auto& f = b.fields();
  nlohmann::json top = nlohmann::json::array();
  for (const auto& t : f.structure.top_features) top.push_back({{"feature", t.feature}, {"importance", t.mean_importance}});
  return {{"knee_id", f.knee_id},
          {"p_struct", f.p_struct},
          {"y_pain", f.y_pain},
          {"y_hat_pain", f.y_hat_pain},
          {"d_ps", f.d_ps},
          {"d_ps_standardized", f.d_ps_standardized},
          {"structure",
           {{"kl_grade", f.structure.kl_grade},
            {"jsn_medial", f.structure.jsn_medial},
            {"jsn_lateral", f.structure.jsn_lateral},
            {"jsw_mm", f.structure.jsw_mm},
            {"top_features", top}}},
          {"thresholds", to_json(f.thresholds)},
          {"hash", b.hash()}};
}

EvidenceBundle evidence_from_json(const nlohmann::json& j) {
  EvidenceFields f;
  f.knee_id = j.at("knee_id").get<std::string>();
  f.p_struct = j.at("p_struct").get<double>();
  f.y_pain = j.at("y_pain").get<double>();
  f.y_hat_pain = j.at("y_hat_pain").get<double>();
  f.d_ps = j.at("d_ps").get<double>();
  f.d_ps_standardized = j.at("d_ps_standardized").get<double>();
  const auto& s = j.at("structure");
  f.structure.kl_grade = s.at("kl_grade").get<double>();
  f.structure.jsn_medial = s.at("jsn_medial").get<double>();
  f.structure.jsn_lateral = s.at("jsn_lateral").get<double>();
  f.structure.jsw_mm = s.at("jsw_mm").get<double>();
  for (const auto& t : s.at("top_features")) {
    f.structure.top_features.push_back({t.at("feature").get<std::string>(), t.at("importance").get<double>()});
  }
  f.thresholds.tau_d = j.at("thresholds").at("tau_d").get<double>();
  f.thresholds.tau_p = j.at("thresholds").at("tau_p").get<double>();
  EvidenceBundle b(std::move(f));
  if (j.contains("hash") && j.at("hash").get<std::string>() != b.hash()) {
    fail(ErrorCategory::Integrity, "evidence hash mismatch for knee '" + b.knee_id() + "'");
  }
  return b;
}

// ---------------------------------------------------------------------------

std::string_view role_name(AgentRole role) {
  switch (role) {
    case AgentRole::Template: return "Template";
    case AgentRole::SingleAgent: return "Assistant";
    case AgentRole::Structuralist: return "Structuralist";
    case AgentRole::Physiologist: return "Physiologist";
    case AgentRole::LeadConsultant: return "Lead Consultant";
    case AgentRole::Therapy: return "Therapy";
  }
  return "?";
}

namespace {

std::optional<AgentRole> parse_role(std::string_view s) {
  for (auto r : {AgentRole::Template, AgentRole::SingleAgent, AgentRole::Structuralist, AgentRole::Physiologist,
                 AgentRole::LeadConsultant, AgentRole::Therapy}) {
    if (role_name(r) == s) return r;
  }
  return std::nullopt;
}

}  // namespace

std::string_view concern_name(ConcernLevel level) {
  switch (level) {
    case ConcernLevel::Low: return "low";
    case ConcernLevel::Moderate: return "moderate";
    case ConcernLevel::High: return "high";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Deterministic backend

std::string_view DeterministicBackend::template_for(std::string_view intent) {
  static const std::map<std::string_view, std::string_view> table = {
      {"template.report",
       "Phenotype: {phenotype}\n"
       "p_struct: {p_struct}\n"
       "y_pain: {y_pain}\n"
       "y_hat_pain: {y_hat_pain}\n"
       "D_PS: {d_ps}\n"
       "D_PS standardized: {d_ps_standardized}\n"
       "KL grade: {kl_grade}\n"
       "JSN medial: {jsn_medial}\n"
       "JSN lateral: {jsn_lateral}\n"
       "JSW mm: {jsw_mm}\n"
       "Thresholds: tau_d {tau_d}, tau_p {tau_p}\n"
       "Rule: {rule}"},
      {"single.report",
       "Assessment of the supplied evidence. The structural progression probability is p_struct = {p_struct}, "
       "with Kellgren-Lawrence grade {kl_grade} and joint-space width {jsw_mm} mm. Observed pain {y_pain} against "
       "a structure-expected {y_hat_pain} gives D_PS = {d_ps}. Phenotype: {phenotype}. {interpretation}"},
      {"structuralist.report",
       "Structural assessment. The multimodal model assigns p_struct = {p_struct}, which I read as {concern} "
       "structural concern against tau_p = {tau_p}. Radiographic burden: Kellgren-Lawrence grade {kl_grade}, "
       "medial JSN grade {jsn_medial}, lateral JSN grade {jsn_lateral}, joint-space width {jsw_mm} mm. Leading "
       "tabular drivers: {top_features}. From structure alone, my phenotype view: {view}."},
      {"physiologist.report",
       "Symptom assessment. Observed pain is {y_pain} against a structure-expected {y_hat_pain}, so "
       "D_PS = y_pain - y_hat_pain = {d_ps}, or {d_ps_standardized} residual SD against tau_d = {tau_d}. "
       "{direction} Symptom concern is {concern}. My phenotype view: {view}."},
      {"debate.structuralist",
       "The standardized discordance of {d_ps_standardized} against tau_d = {tau_d} bears on the structural "
       "reading. Weighing it, my phenotype view: {view}."},
      {"debate.physiologist",
       "The structural probability p_struct = {p_struct} against tau_p = {tau_p} is consistent with that. "
       "My phenotype view: {view}."},
      {"lead.decision.structure_dominant",
       "Final phenotype: Structure-Dominant. {debate_note}Structural risk is p_struct = {p_struct} while observed "
       "pain {y_pain} sits below the structure-expected {y_hat_pain}. The standardized discordance "
       "{d_ps_standardized} falls below the negative of tau_d = {tau_d}, so structure outweighs symptoms."},
      {"lead.decision.pain_dominant",
       "Final phenotype: Pain-Dominant. {debate_note}Observed pain {y_pain} exceeds the structure-expected "
       "{y_hat_pain}. The standardized discordance {d_ps_standardized} is above tau_d = {tau_d}, so symptoms "
       "outweigh structure (p_struct = {p_struct})."},
      {"lead.decision.concordant_severe",
       "Final phenotype: Concordant Severe. {debate_note}Observed pain {y_pain} matches the structure-expected "
       "{y_hat_pain} within tau_d = {tau_d} (standardized discordance {d_ps_standardized}), and p_struct = "
       "{p_struct} is at or above tau_p = {tau_p}. High structural risk with symptom concordance."},
      {"lead.decision.concordant_mild",
       "Final phenotype: Concordant Mild. {debate_note}Observed pain {y_pain} matches the structure-expected "
       "{y_hat_pain} within tau_d = {tau_d} (standardized discordance {d_ps_standardized}), and p_struct = "
       "{p_struct} is below tau_p = {tau_p}. Low structural risk with symptom concordance."},
  };
  const auto it = table.find(intent);
  if (it == table.end()) fail(ErrorCategory::Spec, "no template for intent '" + std::string(intent) + "'");
  return it->second;
}

std::string DeterministicBackend::expand(std::string_view tmpl, const GenerationRequest& req) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] != '{') {
      out += tmpl[i++];
      continue;
    }
    const auto close = tmpl.find('}', i);
    if (close == std::string_view::npos) fail(ErrorCategory::Spec, "unterminated template slot");
    const std::string name(tmpl.substr(i + 1, close - i - 1));
    if (const auto s = req.slots.find(name); s != req.slots.end()) {
      out += s->second;
    } else {
      const auto c = std::find_if(req.citations.begin(), req.citations.end(),
                                  [&](const Citation& c) { return c.field == name; });
      if (c == req.citations.end()) fail(ErrorCategory::Spec, "template slot '" + name + "' has no value");
      out += c->rendered;
    }
    i = close + 1;
  }
  return out;
}

std::string DeterministicBackend::generate(const GenerationRequest& request) {
  return expand(template_for(request.intent), request);
}

std::unique_ptr<TextBackend> make_backend(std::string_view spec) {
  if (spec == "deterministic") return std::make_unique<DeterministicBackend>();
  if (spec.starts_with("http:")) {
    HttpBackendOptions o;
    o.url = std::string(spec.substr(5));
    return std::make_unique<HttpBackend>(std::move(o));
  }
  fail(ErrorCategory::Usage, "unknown backend '" + std::string(spec) + "' (expected deterministic or http:<url>)");
}

// ---------------------------------------------------------------------------

SystemConfig SystemConfig::of(SystemConfigId id) {
  SystemConfig c;
  c.id = id;
  if (id == SystemConfigId::A3) {
    c.debate_enabled = true;
    c.trigger_source = TriggerSource::Discordance;
  } else if (id == SystemConfigId::A4) {
    c.debate_enabled = true;
    c.trigger_source = TriggerSource::Randomized;
  }
  return c;
}

std::string_view config_id_name(SystemConfigId id) {
  switch (id) {
    case SystemConfigId::A0: return "A0";
    case SystemConfigId::A1: return "A1";
    case SystemConfigId::A2: return "A2";
    case SystemConfigId::A3: return "A3";
    case SystemConfigId::A4: return "A4";
  }
  return "?";
}

std::optional<SystemConfigId> parse_system_config(std::string_view text) {
  for (auto id : {SystemConfigId::A0, SystemConfigId::A1, SystemConfigId::A2, SystemConfigId::A3, SystemConfigId::A4}) {
    if (config_id_name(id) == text) return id;
  }
  return std::nullopt;
}

std::string_view resolution_rule_for(PhenotypeLabel label) {
  switch (label) {
    case PhenotypeLabel::PainDominant: return "standardized-dps-above-tau-d";
    case PhenotypeLabel::StructureDominant: return "standardized-dps-below-minus-tau-d";
    case PhenotypeLabel::ConcordantSevere: return "concordant-p-struct-at-or-above-tau-p";
    case PhenotypeLabel::ConcordantMild: return "concordant-p-struct-below-tau-p";
  }
  return "?";
}

std::string therapy_summary(const ConsultantDecision& decision) {
  switch (decision.phenotype) {
    case PhenotypeLabel::StructureDominant:
      return "Management direction (structure-dominant): prioritize monitoring of structural progression and "
             "prevention, such as weight management, joint-protective exercise, and imaging follow-up, rather "
             "than escalating symptom-focused interventions alone.";
    case PhenotypeLabel::PainDominant:
      return "Management direction (pain-dominant): symptom-focused care, with review of analgesia, "
             "physiotherapy aimed at pain and function, and assessment of pain contributors beyond joint "
             "structure.";
    case PhenotypeLabel::ConcordantSevere:
      return "Management direction (concordant severe): combine symptom management with close monitoring of "
             "structural progression and consider specialist review.";
    case PhenotypeLabel::ConcordantMild:
      return "Management direction (concordant mild): routine care with activity advice and education, and "
             "reassessment at the next scheduled visit.";
  }
  return {};
}

ConcernLevel structural_concern(const EvidenceBundle& b) {
  const auto& f = b.fields();
  if (f.p_struct >= f.thresholds.tau_p) return ConcernLevel::High;
  if (f.p_struct >= f.thresholds.tau_p / 2.0) return ConcernLevel::Moderate;
  return ConcernLevel::Low;
}

ConcernLevel symptom_concern(const EvidenceBundle& b) {
  const auto& f = b.fields();
  const double z = std::abs(f.d_ps_standardized);
  if (z > f.thresholds.tau_d) return ConcernLevel::High;
  if (z > f.thresholds.tau_d / 2.0) return ConcernLevel::Moderate;
  return ConcernLevel::Low;
}

PhenotypeLabel structuralist_view(const EvidenceBundle& b) {
  const auto& f = b.fields();
  return f.p_struct >= f.thresholds.tau_p ? PhenotypeLabel::ConcordantSevere : PhenotypeLabel::ConcordantMild;
}

PhenotypeLabel physiologist_view(const EvidenceBundle& b) { return b.rule_phenotype(); }

bool views_conflict(const SpecialistReport& a, const SpecialistReport& b) {
  return a.claimed_phenotype_view != b.claimed_phenotype_view;
}

double randomized_trigger_draw(const std::string& knee_id, std::uint64_t seed) {
  return to_unit(mix64(derive_seed(seed, "debate-coin") ^ fnv1a64(knee_id)));
}

bool trigger_debate(const EvidenceBundle& bundle, const SpecialistReport& s, const SpecialistReport& p,
                    const SystemConfig& config, std::uint64_t seed) {
  if (!config.debate_enabled) return false;
  switch (config.trigger_source) {
    case TriggerSource::None: return false;
    case TriggerSource::Discordance:
      return std::abs(bundle.fields().d_ps_standardized) > bundle.fields().thresholds.tau_d || views_conflict(s, p);
    case TriggerSource::Randomized: return randomized_trigger_draw(bundle.knee_id(), seed) < config.random_rate;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Text checks

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct LabelForm {
  std::string_view text;
  PhenotypeLabel label;
};

constexpr LabelForm kLabelForms[] = {
    {"concordant severe", PhenotypeLabel::ConcordantSevere},
    {"concordantsevere", PhenotypeLabel::ConcordantSevere},
    {"concordant mild", PhenotypeLabel::ConcordantMild},
    {"concordantmild", PhenotypeLabel::ConcordantMild},
    {"pain-dominant", PhenotypeLabel::PainDominant},
    {"pain dominant", PhenotypeLabel::PainDominant},
    {"paindominant", PhenotypeLabel::PainDominant},
    {"symptom-dominant", PhenotypeLabel::PainDominant},
    {"structure-dominant", PhenotypeLabel::StructureDominant},
    {"structure dominant", PhenotypeLabel::StructureDominant},
    {"structuredominant", PhenotypeLabel::StructureDominant},
};

std::optional<PhenotypeLabel> label_at(std::string_view s) {
  for (const auto& f : kLabelForms) {
    if (s.starts_with(f.text)) return f.label;
  }
  return std::nullopt;
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

}  // namespace

std::optional<PhenotypeLabel> parse_phenotype_mention(std::string_view raw) {
  const std::string s = lower(raw);
  for (std::string_view anchor : {"phenotype:", "phenotype view:"}) {
    auto pos = s.find(anchor);
    while (pos != std::string::npos) {
      std::size_t q = pos + anchor.size();
      while (q < s.size() && s[q] == ' ') ++q;
      if (auto l = label_at(std::string_view(s).substr(q))) return l;
      pos = s.find(anchor, pos + 1);
    }
  }
  std::optional<PhenotypeLabel> best;
  std::size_t best_pos = std::string::npos;
  for (const auto& f : kLabelForms) {
    const auto pos = s.find(f.text);
    if (pos != std::string::npos && pos < best_pos) {
      best_pos = pos;
      best = f.label;
    }
  }
  return best;
}

std::vector<std::string> numeral_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!std::isdigit(static_cast<unsigned char>(s[i])) || (i > 0 && word_char(s[i - 1]))) {
      // Skip the rest of an alphanumeric run so "K00012" or "f3" never yields a numeral.
      if (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_') {
        while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
      } else {
        ++i;
      }
      continue;
    }
    std::size_t start = i;
    if (start > 0 && s[start - 1] == '-' && (start < 2 || !word_char(s[start - 2]))) --start;
    std::size_t j = i;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    if (j + 1 < s.size() && s[j] == '.' && std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
      ++j;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    }
    const bool glued = j < s.size() && (std::isalpha(static_cast<unsigned char>(s[j])) || s[j] == '_');
    if (!glued) out.emplace_back(s.substr(start, j - start));
    i = j;
    while (glued && i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
  }
  return out;
}

GroundingCheck check_grounding(std::string_view text, std::span<const Citation> citations,
                               const EvidenceBundle& bundle) {
  GroundingCheck g;
  for (const auto& tok : numeral_tokens(text)) {
    const bool found = std::any_of(citations.begin(), citations.end(), [&](const Citation& c) { return c.rendered == tok; });
    if (!found) g.unmatched_numerals.push_back(tok);
  }
  for (const auto& c : citations) {
    const auto v = bundle.value(c.field);
    if (!v || *v != c.value || c.rendered != render_field(c.field, c.value)) g.mismatched_citations.push_back(c.field);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Case runner

namespace {

std::string_view system_prompt(AgentRole role) {
  switch (role) {
    case AgentRole::SingleAgent:
      return "You interpret deterministic knee osteoarthritis model outputs. Quote numbers exactly as rendered in "
             "the evidence list and never introduce other numbers. Name one phenotype after 'Phenotype:'.";
    case AgentRole::Structuralist:
      return "You are the Structuralist. Interpret the structural progression probability and radiographic "
             "burden. Quote numbers exactly as rendered. End with 'My phenotype view:' and one phenotype label.";
    case AgentRole::Physiologist:
      return "You are the Physiologist. Interpret observed against expected pain and the discordance score. "
             "Quote numbers exactly as rendered. End with 'My phenotype view:' and one phenotype label.";
    case AgentRole::LeadConsultant:
      return "You are the Lead Consultant. Resolve the specialists' views with the explicit decision rule over "
             "p_struct, y_pain, y_hat_pain and D_PS. Start with 'Final phenotype:'. Quote numbers exactly.";
    default: return "";
  }
}

std::string_view lead_intent(PhenotypeLabel l) {
  switch (l) {
    case PhenotypeLabel::StructureDominant: return "lead.decision.structure_dominant";
    case PhenotypeLabel::PainDominant: return "lead.decision.pain_dominant";
    case PhenotypeLabel::ConcordantSevere: return "lead.decision.concordant_severe";
    case PhenotypeLabel::ConcordantMild: return "lead.decision.concordant_mild";
  }
  return "";
}

std::string_view interpretation(PhenotypeLabel l) {
  switch (l) {
    case PhenotypeLabel::ConcordantSevere: return "High structural risk with symptom concordance.";
    case PhenotypeLabel::ConcordantMild: return "Low structural risk with symptom concordance.";
    case PhenotypeLabel::PainDominant: return "Pain exceeds what structure explains, a discordant presentation.";
    case PhenotypeLabel::StructureDominant: return "Structure exceeds the symptom burden, a discordant presentation.";
  }
  return "";
}

std::string top_feature_text(const EvidenceBundle& b) {
  const auto& top = b.fields().structure.top_features;
  if (top.empty()) return "none reported";
  std::string out;
  for (const auto& t : top) {
    if (!out.empty()) out += ", ";
    out += t.feature + " (" + b.citation(std::string(kImportancePrefix) + t.feature).rendered + ")";
  }
  return out;
}

class Conversation {
 public:
  Conversation(const EvidenceBundle& bundle, TextBackend* backend, const RunCaseOptions& options)
      : bundle_(bundle), backend_(backend), options_(options) {}

  const AgentMessage& say(AgentRole role, std::string intent, std::map<std::string, std::string> slots, int round = 0,
                          bool templated = false) {
    GenerationRequest req;
    req.role = role;
    req.intent = std::move(intent);
    req.system_prompt = std::string(system_prompt(role));
    req.slots = std::move(slots);
    req.citations = bundle_.citations();
    req.conversation = &messages_;
    std::string text;
    if (templated) {
      text = DeterministicBackend::expand(DeterministicBackend::template_for(req.intent), req);
    } else {
      if (!backend_) fail(ErrorCategory::Spec, "configuration requires a text backend");
      text = backend_->generate(req);
    }
    return record(role, req.intent, round, std::move(text));
  }

  const AgentMessage& record(AgentRole role, std::string intent, int round, std::string text) {
    AgentMessage m;
    m.tick = messages_.size();
    m.role = role;
    m.intent = std::move(intent);
    m.round = round;
    const auto tokens = numeral_tokens(text);
    for (const auto& c : bundle_.citations()) {
      if (std::find(tokens.begin(), tokens.end(), c.rendered) != tokens.end()) m.citations.push_back(c);
    }
    const auto g = check_grounding(text, m.citations, bundle_);
    violations_ += g.violations();
    if (!g.ok() && options_.enforce_grounding) {
      std::string detail;
      for (const auto& t : g.unmatched_numerals) detail += (detail.empty() ? "" : ", ") + t;
      fail(ErrorCategory::Validation, "knee '" + bundle_.knee_id() + "': " + std::string(role_name(role)) +
                                          " narrative quotes numbers absent from the evidence: " + detail);
    }
    m.text = std::move(text);
    messages_.push_back(std::move(m));
    return messages_.back();
  }

  std::vector<AgentMessage>& messages() { return messages_; }

 private:
  const EvidenceBundle& bundle_;
  TextBackend* backend_;
  RunCaseOptions options_;
  std::vector<AgentMessage> messages_;
  std::size_t violations_ = 0;
};

SpecialistReport specialist(const AgentMessage& m, ConcernLevel concern, PhenotypeLabel fallback) {
  SpecialistReport r;
  r.role = m.role;
  r.concern_level = concern;
  r.claimed_phenotype_view = parse_phenotype_mention(m.text).value_or(fallback);
  r.narrative = m.text;
  r.cited_evidence = m.citations;
  return r;
}

}  // namespace

CaseReport run_case(const EvidenceBundle& bundle, const SystemConfig& config, TextBackend* backend,
                    std::uint64_t seed, const RunCaseOptions& options) {
  const std::string hash_before = bundle.hash();
  const PhenotypeLabel rule = bundle.rule_phenotype();
  CaseReport report;
  report.knee_id = bundle.knee_id();
  report.config = config.id;
  report.evidence_hash = hash_before;
  report.evidence = to_json(bundle);
  report.backend_fingerprint = config.uses_backend() ? (backend ? backend->fingerprint() : "none") : "none";
  report.decision.phenotype = rule;
  report.decision.resolution_rule = std::string(resolution_rule_for(rule));

  Conversation conv(bundle, backend, options);
  const std::string rule_display(phenotype_display(rule));

  if (config.id == SystemConfigId::A0) {
    conv.say(AgentRole::Template, "template.report",
             {{"phenotype", rule_display}, {"rule", report.decision.resolution_rule}}, 0, true);
    report.narrative_phenotype = rule;
  } else if (config.id == SystemConfigId::A1) {
    const auto& m = conv.say(AgentRole::SingleAgent, "single.report",
                             {{"phenotype", rule_display}, {"interpretation", std::string(interpretation(rule))}});
    report.narrative_phenotype = parse_phenotype_mention(m.text);
  } else {
    const PhenotypeLabel s_view = structuralist_view(bundle);
    const PhenotypeLabel p_view = physiologist_view(bundle);
    const auto s_concern = structural_concern(bundle);
    const auto p_concern = symptom_concern(bundle);
    const auto& f = bundle.fields();
    std::string direction = "Reported pain is in line with the structural profile.";
    if (f.d_ps_standardized > f.thresholds.tau_d) {
      direction = "The patient reports more pain than the structural profile predicts.";
    } else if (f.d_ps_standardized < -f.thresholds.tau_d) {
      direction = "The patient reports less pain than the structural profile predicts.";
    }
    const auto s_msg = conv.say(AgentRole::Structuralist, "structuralist.report",
                                {{"concern", std::string(concern_name(s_concern))},
                                 {"view", std::string(phenotype_display(s_view))},
                                 {"top_features", top_feature_text(bundle)}});
    report.structuralist = specialist(s_msg, s_concern, s_view);
    const auto p_msg = conv.say(AgentRole::Physiologist, "physiologist.report",
                                {{"concern", std::string(concern_name(p_concern))},
                                 {"view", std::string(phenotype_display(p_view))},
                                 {"direction", direction}});
    report.physiologist = specialist(p_msg, p_concern, p_view);

    if (trigger_debate(bundle, *report.structuralist, *report.physiologist, config, seed)) {
      report.decision.debate_occurred = true;
      for (int round = 1; round <= config.debate_cap; ++round) {
        const auto a = conv.say(AgentRole::Structuralist, "debate.structuralist", {{"view", rule_display}}, round);
        const auto b = conv.say(AgentRole::Physiologist, "debate.physiologist", {{"view", rule_display}}, round);
        report.decision.debate_rounds = round;
        const auto va = parse_phenotype_mention(a.text);
        const auto vb = parse_phenotype_mention(b.text);
        if (va && vb && *va == *vb) break;
      }
    }
    const std::string note = report.decision.debate_occurred
                                 ? "After a structured debate the specialists converged on this reading. "
                                 : "";
    const auto& lead = conv.say(AgentRole::LeadConsultant, std::string(lead_intent(rule)), {{"debate_note", note}});
    report.narrative_phenotype = parse_phenotype_mention(lead.text);
  }

  report.decision.management_summary = therapy_summary(report.decision);
  if (config.id != SystemConfigId::A0) {
    conv.record(AgentRole::Therapy, "therapy.summary", 0, report.decision.management_summary);
  }
  report.narrative_divergence = !report.narrative_phenotype || *report.narrative_phenotype != rule;
  report.transcript = std::move(conv.messages());

  if (bundle.recompute_hash() != hash_before) {
    fail(ErrorCategory::Integrity, "evidence bundle changed during the agent run");
  }
  return report;
}

std::vector<CaseReport> run_cases(std::span<const EvidenceBundle> bundles, const SystemConfig& config,
                                  TextBackend* backend, std::uint64_t seed, unsigned max_in_flight,
                                  const RunCaseOptions& options) {
  std::vector<CaseReport> out(bundles.size());
  parallel_for(bundles.size(), std::max(1u, max_in_flight),
               [&](std::size_t i) { out[i] = run_case(bundles[i], config, backend, seed, options); });
  return out;
}

std::string CaseReport::report_id() const { return knee_id + "/" + std::string(config_id_name(config)); }

std::string CaseReport::report_text() const {
  std::string out;
  for (const auto& m : transcript) {
    if (!out.empty()) out += "\n\n";
    out += std::string(role_name(m.role)) + ": " + m.text;
  }
  return out;
}

namespace {

nlohmann::json citations_json(const std::vector<Citation>& cs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& c : cs) a.push_back({{"field", c.field}, {"value", c.value}, {"rendered", c.rendered}});
  return a;
}

std::vector<Citation> citations_from_json(const nlohmann::json& a) {
  std::vector<Citation> out;
  for (const auto& c : a) {
    out.push_back({c.at("field").get<std::string>(), c.at("value").get<double>(), c.at("rendered").get<std::string>()});
  }
  return out;
}

nlohmann::json specialist_json(const SpecialistReport& r) {
  return {{"role", role_name(r.role)},
          {"concern_level", concern_name(r.concern_level)},
          {"claimed_phenotype_view", phenotype_name(r.claimed_phenotype_view)},
          {"narrative", r.narrative},
          {"cited_evidence", citations_json(r.cited_evidence)}};
}

SpecialistReport specialist_from_json(const nlohmann::json& j) {
  SpecialistReport r;
  r.role = parse_role(j.at("role").get<std::string>()).value_or(AgentRole::Structuralist);
  const auto c = j.at("concern_level").get<std::string>();
  r.concern_level = c == "high" ? ConcernLevel::High : c == "moderate" ? ConcernLevel::Moderate : ConcernLevel::Low;
  r.claimed_phenotype_view =
      parse_phenotype(j.at("claimed_phenotype_view").get<std::string>()).value_or(PhenotypeLabel::ConcordantMild);
  r.narrative = j.at("narrative").get<std::string>();
  r.cited_evidence = citations_from_json(j.at("cited_evidence"));
  return r;
}

}  // namespace

nlohmann::json transcript_json(const CaseReport& r) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : r.transcript) {
    msgs.push_back({{"tick", m.tick},
                    {"role", role_name(m.role)},
                    {"intent", m.intent},
                    {"round", m.round},
                    {"text", m.text},
                    {"citations", citations_json(m.citations)}});
  }
  return msgs;
}

nlohmann::json to_json(const CaseReport& r) {
  return {{"format", "koa-case-report"},
          {"version", 1},
          {"knee_id", r.knee_id},
          {"config", config_id_name(r.config)},
          {"backend", r.backend_fingerprint},
          {"evidence_hash", r.evidence_hash},
          {"evidence", r.evidence},
          {"transcript", transcript_json(r)},
          {"structuralist", r.structuralist ? specialist_json(*r.structuralist) : nlohmann::json()},
          {"physiologist", r.physiologist ? specialist_json(*r.physiologist) : nlohmann::json()},
          {"decision",
           {{"phenotype", phenotype_name(r.decision.phenotype)},
            {"debate_occurred", r.decision.debate_occurred},
            {"debate_rounds", r.decision.debate_rounds},
            {"resolution_rule", r.decision.resolution_rule},
            {"management_summary", r.decision.management_summary}}},
          {"narrative_phenotype",
           r.narrative_phenotype ? nlohmann::json(phenotype_name(*r.narrative_phenotype)) : nlohmann::json()},
          {"narrative_divergence", r.narrative_divergence}};
}

CaseReport case_report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "koa-case-report") fail(ErrorCategory::Parse, "not a case report");
  CaseReport r;
  r.knee_id = j.at("knee_id").get<std::string>();
  const auto cfg = parse_system_config(j.at("config").get<std::string>());
  if (!cfg) fail(ErrorCategory::Parse, "case report has an unknown configuration");
  r.config = *cfg;
  r.backend_fingerprint = j.at("backend").get<std::string>();
  r.evidence_hash = j.at("evidence_hash").get<std::string>();
  r.evidence = j.at("evidence");
  for (const auto& m : j.at("transcript")) {
    AgentMessage msg;
    msg.tick = m.at("tick").get<std::uint64_t>();
    msg.role = parse_role(m.at("role").get<std::string>()).value_or(AgentRole::Template);
    msg.intent = m.at("intent").get<std::string>();
    msg.round = m.at("round").get<int>();
    msg.text = m.at("text").get<std::string>();
    msg.citations = citations_from_json(m.at("citations"));
    r.transcript.push_back(std::move(msg));
  }
  if (!j.at("structuralist").is_null()) r.structuralist = specialist_from_json(j.at("structuralist"));
  if (!j.at("physiologist").is_null()) r.physiologist = specialist_from_json(j.at("physiologist"));
  const auto& d = j.at("decision");
  const auto ph = parse_phenotype(d.at("phenotype").get<std::string>());
  if (!ph) fail(ErrorCategory::Parse, "case report has an unknown phenotype");
  r.decision.phenotype = *ph;
  r.decision.debate_occurred = d.at("debate_occurred").get<bool>();
  r.decision.debate_rounds = d.at("debate_rounds").get<int>();
  r.decision.resolution_rule = d.at("resolution_rule").get<std::string>();
  r.decision.management_summary = d.at("management_summary").get<std::string>();
  if (!j.at("narrative_phenotype").is_null()) {
    r.narrative_phenotype = parse_phenotype(j.at("narrative_phenotype").get<std::string>());
  }
  r.narrative_divergence = j.at("narrative_divergence").get<bool>();
  return r;
}

}  // namespace koa
