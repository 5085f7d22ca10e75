#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "koa/dataset.hpp"

namespace koa {

// Label-correlated mean shift (in noise-SD units) planted into a block.
// `structural` applies to JSL progressors (cases 1, 2), `pain` to pain
// progressors (cases 1, 3). Only the first `informative` features of the
// block carry the shift.
struct BlockSignal {
  double structural = 0.0;
  double pain = 0.0;
  std::size_t informative = 0;
};

struct PainTerm {
  ScalarRef feature;
  double coefficient = 0.0;
};

struct SynthSpec {
  std::size_t size = 300;
  // Relative weights of cases 1..4.
  std::array<double, 4> class_mix = {194.0, 103.0, 103.0, 200.0};

  BlockSignal demographics{};
  BlockSignal radiographic{};
  BlockSignal mri_scalars{};
  BlockSignal biomarkers{};
  BlockSignal mri_embedding{};
  BlockSignal xray_embedding{};

  std::size_t mri_scalar_count = 8;
  std::size_t biomarker_count = 8;
  // Embedding dimensions (leading, highest-variance) that receive the shift.
  std::size_t embedding_signal_dims = 8;

  double mri_missing_rate = 0.0;
  double xray_missing_rate = 0.0;
  double scalar_missing_rate = 0.0;

  // observed_pain = intercept + sum(coef * feature) + residual.
  double pain_intercept = 1.0;
  std::vector<PainTerm> pain_terms = default_pain_terms();
  double pain_noise_sd = 0.5;
  double pain_label_effect = 0.0;  // added for pain progressors
  // A marked subset gets residual == discordant_offset exactly (no noise).
  double discordant_fraction = 0.0;
  double discordant_offset = 2.0;

  static std::vector<PainTerm> default_pain_terms();

  // All blocks label-independent.
  static SynthSpec null_signal();
  // Structural scalars strongly predictive of JSL-only, weakly of pain-only;
  // complementary signal spread over biomarkers and both embeddings.
  static SynthSpec planted();
};

struct SynthTruth {
  std::vector<double> structural_pain_mean;
  std::vector<bool> discordant;
};

struct SynthCohort {
  Cohort cohort;
  SynthTruth truth;
};

// Deterministic for a fixed (seed, spec); bit-reproducible across processes.
SynthCohort synth_generate_detailed(std::uint64_t seed, const SynthSpec& spec);
Cohort synth_generate(std::uint64_t seed, const SynthSpec& spec);

// Structural mean of observed pain implied by the generator parameters.
double structural_pain_mean(const KneeRecord& record, const SynthSpec& spec);

}  // namespace koa
