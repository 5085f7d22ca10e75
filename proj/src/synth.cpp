#include "koa/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <string>

#include "koa/error.hpp"
#include "koa/rng.hpp"

namespace koa {

namespace {

constexpr const char* kMriScalarNames[] = {
    "lateral_meniscus",       "medial_meniscus",          "femur_oa_vector",  "tibia_oa_vector",
    "patella_oa_vector",      "medial_tibial_cartilage",  "lateral_femoral_cartilage", "mp_tab",
    "mt_tab",                 "notch",                    "lateral_tibial_cartilage",  "patellar_cartilage",
};

constexpr const char* kBiomarkerNames[] = {
    "serum_comp",   "urine_ctxii", "serum_ctxi", "serum_piianp", "urine_creatinine", "serum_c2c",
    "urine_c2c",    "serum_cs846", "urine_col2_1_no2", "serum_cpii", "serum_hyaluronan", "urine_nt_sx",
};

std::string numbered(const char* const* names, std::size_t available, std::size_t i, const char* fallback) {
  if (i < available) return names[i];
  return std::string(fallback) + "_" + std::to_string(i);
}

// Largest-remainder apportionment of `size` over the mix weights.
std::array<std::size_t, 4> case_counts(std::size_t size, const std::array<double, 4>& mix) {
  const double total = std::accumulate(mix.begin(), mix.end(), 0.0);
  std::array<std::size_t, 4> counts{};
  std::array<double, 4> rem{};
  std::size_t assigned = 0;
  for (int c = 0; c < 4; ++c) {
    const double exact = static_cast<double>(size) * mix[c] / total;
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    rem[c] = exact - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  while (assigned < size) {
    int best = 0;
    for (int c = 1; c < 4; ++c) {
      if (rem[c] > rem[best]) best = c;
    }
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

double shift(const BlockSignal& s, bool structural, bool pain) {
  return (structural ? s.structural : 0.0) + (pain ? s.pain : 0.0);
}

double clamp_round(double v, double lo, double hi) { return std::clamp(std::round(v), lo, hi); }

// Per-dimension noise scale of the embedding space: a decaying spectrum so
// that the leading dimensions dominate the covariance.
double embedding_scale(std::size_t j) { return 2.0 / std::sqrt(1.0 + static_cast<double>(j) / 4.0); }

Embedding make_embedding(Rng& rng, const BlockSignal& s, std::size_t signal_dims, bool structural, bool pain) {
  Embedding e(kEmbeddingDim);
  const double delta = shift(s, structural, pain);
  for (std::size_t j = 0; j < kEmbeddingDim; ++j) {
    const double scale = embedding_scale(j);
    double z = rng.normal();
    if (j < signal_dims) z += (j % 2 == 0 ? delta : -delta);
    e[j] = scale * z;
  }
  return e;
}

}  // namespace

std::vector<PainTerm> SynthSpec::default_pain_terms() {
  return {
      {{Block::Radiographic, std::string(rad::kKlGrade)}, 0.6},
      {{Block::Radiographic, std::string(rad::kJsnMedial)}, 0.3},
      {{Block::Radiographic, std::string(rad::kJswMm)}, -0.25},
      {{Block::MriScalars, "medial_meniscus"}, 0.3},
  };
}

SynthSpec SynthSpec::null_signal() { return SynthSpec{}; }

SynthSpec SynthSpec::planted() {
  SynthSpec s;
  s.radiographic = {1.1, 0.15, 4};
  s.mri_scalars = {0.7, 0.1, 3};
  s.biomarkers = {0.6, 0.1, 3};
  s.mri_embedding = {0.45, 0.05, 8};
  s.xray_embedding = {0.55, 0.05, 8};
  s.mri_missing_rate = 0.05;
  s.xray_missing_rate = 0.03;
  return s;
}

double structural_pain_mean(const KneeRecord& record, const SynthSpec& spec) {
  double m = spec.pain_intercept;
  for (const auto& t : spec.pain_terms) {
    const double v = record.scalar(t.feature.block, t.feature.name);
    if (!is_missing(v)) m += t.coefficient * v;
  }
  return m;
}

SynthCohort synth_generate_detailed(std::uint64_t seed, const SynthSpec& spec) {
  for (double w : spec.class_mix) {
    if (!(w > 0.0) || !std::isfinite(w)) fail(ErrorCategory::Spec, "class mix proportions must all be positive");
  }
  if (spec.size == 0) fail(ErrorCategory::Spec, "cohort size must be positive");
  for (double r : {spec.mri_missing_rate, spec.xray_missing_rate, spec.scalar_missing_rate, spec.discordant_fraction}) {
    if (r < 0.0 || r > 1.0) fail(ErrorCategory::Spec, "rates and fractions must lie in [0, 1]");
  }
  if (spec.embedding_signal_dims > kEmbeddingDim) fail(ErrorCategory::Spec, "embedding_signal_dims exceeds 512");

  Rng rng(derive_seed(seed, "synth"));
  const auto counts = case_counts(spec.size, spec.class_mix);
  std::vector<CaseLabel> cases;
  for (int c = 0; c < 4; ++c) cases.insert(cases.end(), counts[c], static_cast<CaseLabel>(c + 1));
  rng.shuffle(std::span<CaseLabel>(cases));

  const std::size_t n_discordant =
      static_cast<std::size_t>(std::llround(spec.discordant_fraction * static_cast<double>(spec.size)));
  std::vector<std::size_t> order(spec.size);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<bool> discordant(spec.size, false);
  for (std::size_t i = 0; i < n_discordant; ++i) discordant[order[i]] = true;

  std::vector<KneeRecord> records;
  records.reserve(spec.size);
  SynthTruth truth;
  for (std::size_t i = 0; i < spec.size; ++i) {
    KneeRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "K%05zu", i + 1);
    r.knee_id = id;
    r.case_label = cases[i];
    const bool st = cases[i] == CaseLabel::JslAndPain || cases[i] == CaseLabel::JslOnly;
    const bool pn = cases[i] == CaseLabel::JslAndPain || cases[i] == CaseLabel::PainOnly;
    r.side = rng.bernoulli(322.0 / 600.0) ? Side::Right : Side::Left;

    // Demographics: label-independent unless a demographic signal is set.
    {
      const double d = shift(spec.demographics, st, pn);
      const auto inf = [&](std::size_t j) { return j < spec.demographics.informative ? d : 0.0; };
      r.demographics["age"] = std::clamp(61.0 + 8.0 * (rng.normal() + inf(0)), 45.0, 79.0);
      r.demographics["sex"] = (rng.normal() + inf(1) > 0.1) ? 1.0 : 0.0;
      r.demographics["race"] = (rng.normal() + inf(2) > 0.8) ? 1.0 : 0.0;
      r.demographics["bmi"] = 30.0 + 4.5 * (rng.normal() + inf(3));
    }

    // Radiographic: one latent severity drives grades and joint-space width.
    {
      const double d = shift(spec.radiographic, st, pn);
      const auto inf = [&](std::size_t j) { return j < spec.radiographic.informative ? d : 0.0; };
      const double sev = rng.normal();
      r.radiographic[std::string(rad::kKlGrade)] = clamp_round(2.2 + 0.6 * (sev + inf(0)) + 0.35 * rng.normal(), 0, 4);
      r.radiographic[std::string(rad::kJsnMedial)] =
          clamp_round(1.0 + 0.7 * (sev + inf(1)) + 0.35 * rng.normal(), 0, 3);
      r.radiographic[std::string(rad::kJsnLateral)] =
          clamp_round(-1.6 + 0.4 * (sev + inf(2)) + 0.3 * rng.normal(), 0, 3);
      r.radiographic[std::string(rad::kJswMm)] =
          std::max(0.0, 4.5 - 0.9 * (0.6 * sev + 0.8 * rng.normal() + inf(3)));
    }

    for (std::size_t j = 0; j < spec.mri_scalar_count; ++j) {
      const double d = j < spec.mri_scalars.informative ? shift(spec.mri_scalars, st, pn) : 0.0;
      r.mri_scalars[numbered(kMriScalarNames, std::size(kMriScalarNames), j, "mri_feature")] = rng.normal() + d;
    }
    for (std::size_t j = 0; j < spec.biomarker_count; ++j) {
      const double d = j < spec.biomarkers.informative ? shift(spec.biomarkers, st, pn) : 0.0;
      r.biomarkers[numbered(kBiomarkerNames, std::size(kBiomarkerNames), j, "biomarker")] = rng.normal() + d;
    }

    // Embeddings are drawn unconditionally so that missingness rates do not
    // perturb the rest of the stream.
    Embedding mri = make_embedding(rng, spec.mri_embedding, spec.embedding_signal_dims, st, pn);
    Embedding xray = make_embedding(rng, spec.xray_embedding, spec.embedding_signal_dims, st, pn);
    if (!rng.bernoulli(spec.mri_missing_rate)) r.mri_embedding = std::move(mri);
    if (!rng.bernoulli(spec.xray_missing_rate)) r.xray_embedding = std::move(xray);

    if (spec.scalar_missing_rate > 0.0) {
      for (Block b : kAllBlocks) {
        for (auto& [name, v] : r.block(b)) {
          if (rng.bernoulli(spec.scalar_missing_rate)) v = kMissing;
        }
      }
    }

    const double mean = structural_pain_mean(r, spec);
    const double noise = rng.normal(0.0, spec.pain_noise_sd);
    r.observed_pain = discordant[i] ? mean + spec.discordant_offset
                                    : mean + (pn ? spec.pain_label_effect : 0.0) + noise;
    truth.structural_pain_mean.push_back(mean);
    records.push_back(std::move(r));
  }
  truth.discordant = std::move(discordant);
  return {Cohort(std::move(records), CohortProvenance{CohortProvenance::Kind::Synthetic, seed, "synth"}),
          std::move(truth)};
}

Cohort synth_generate(std::uint64_t seed, const SynthSpec& spec) {
  return std::move(synth_generate_detailed(seed, spec).cohort);
}

}  // namespace koa
