#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "koa/dataset.hpp"
#include "koa/error.hpp"
#include "koa/folds.hpp"
#include "koa/synth.hpp"
#include "koa/text.hpp"

using namespace koa;

namespace {

ErrorCategory category_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("no error raised");
  return ErrorCategory::Usage;
}

}  // namespace

TEST_CASE("folds: exact divisibility") {
  const std::vector<int> y = {1, 0, 1, 0, 1, 0, 1, 0, 1, 0};
  const auto plan = stratified_kfold(y, 5, 3);
  CHECK(is_partition(plan));
  for (int f = 0; f < 5; ++f) {
    int pos = 0, neg = 0;
    for (auto i : plan.test_positions(f)) (y[i] ? pos : neg)++;
    CHECK(pos == 1);
    CHECK(neg == 1);
  }
}

TEST_CASE("folds: task-shaped labels") {
  std::vector<int> y(303, 0);
  for (int i = 0; i < 103; ++i) y[i * 2] = 1;
  const auto plan = stratified_kfold(y, 5, 99);
  for (int f = 0; f < 5; ++f) {
    int pos = 0;
    const auto te = plan.test_positions(f);
    for (auto i : te) pos += y[i];
    CHECK((pos == 20 || pos == 21));
    CHECK((te.size() == 60 || te.size() == 61));
    // train and test are disjoint and cover everything
    const auto tr = plan.train_positions(f);
    std::set<std::size_t> all(tr.begin(), tr.end());
    for (auto i : te) CHECK(all.insert(i).second);
    CHECK(all.size() == 303);
  }
  const auto again = stratified_kfold(y, 5, 99);
  CHECK(again.assignment == plan.assignment);
  CHECK(again.fingerprint() == plan.fingerprint());
  CHECK(stratified_kfold(y, 5, 100).assignment != plan.assignment);
}

TEST_CASE("folds: infeasible requests") {
  CHECK(category_of([] { stratified_kfold(std::vector<int>{1, 0, 1, 0}, 1, 0); }) == ErrorCategory::Stratification);
  CHECK(category_of([] { stratified_kfold(std::vector<int>{1, 0, 0, 0, 0}, 2, 0); }) ==
        ErrorCategory::Stratification);
}

TEST_CASE("synth: 600 knees follow the class mix and build balanced tasks") {
  SynthSpec spec = SynthSpec::planted();
  spec.size = 600;
  const auto cohort = synth_generate(1, spec);
  CHECK(cohort.size() == 600);
  std::map<CaseLabel, int> counts;
  for (const auto& r : cohort.records()) counts[r.case_label]++;
  CHECK(counts[CaseLabel::JslAndPain] == 194);
  CHECK(counts[CaseLabel::JslOnly] == 103);
  CHECK(counts[CaseLabel::PainOnly] == 103);
  CHECK(counts[CaseLabel::Non] == 200);

  const auto jsl = build_task(cohort, TaskSpec{Task::JslOnlyVsNon});
  CHECK(jsl.size() == 303);
  CHECK(jsl.positives() == 103);
  CHECK(jsl.negatives() == 200);
  const auto pain = build_task(cohort, TaskSpec{Task::PainOnlyVsNon});
  CHECK(pain.size() == 303);
  CHECK(pain.positives() == 103);
  for (std::size_t i = 0; i < pain.size(); ++i) {
    CHECK(cohort[pain.cohort_rows[i]].knee_id == pain.records[i].knee_id);
  }
}

TEST_CASE("synth: deterministic bytes") {
  testing::TempDir dir("synth-bytes");
  const auto a = synth_generate(1, SynthSpec::planted());
  const auto b = synth_generate(1, SynthSpec::planted());
  write_cohort(a, {dir.path() / "a.csv", dir.path() / "a_mri.csv", dir.path() / "a_xray.csv"});
  write_cohort(b, {dir.path() / "b.csv", dir.path() / "b_mri.csv", dir.path() / "b_xray.csv"});
  CHECK(text::read_file(dir / "a.csv") == text::read_file(dir / "b.csv"));
  CHECK(text::read_file(dir / "a_mri.csv") == text::read_file(dir / "b_mri.csv"));
  const auto c = synth_generate(2, SynthSpec::planted());
  CHECK(c[0].observed_pain != a[0].observed_pain);
}

TEST_CASE("synth: planted discordance offset") {
  SynthSpec spec = SynthSpec::planted();
  spec.discordant_fraction = 0.1;
  const auto sc = synth_generate_detailed(5, spec);
  int marked = 0;
  for (std::size_t i = 0; i < sc.cohort.size(); ++i) {
    const double mean = structural_pain_mean(sc.cohort[i], spec);
    CHECK(sc.truth.structural_pain_mean[i] == doctest::Approx(mean).epsilon(1e-12));
    if (sc.truth.discordant[i]) {
      ++marked;
      CHECK(sc.cohort[i].observed_pain == doctest::Approx(mean + 2.0).epsilon(1e-12));
    }
  }
  CHECK(marked == 30);
}

TEST_CASE("cohort: write and load round-trip losslessly") {
  testing::TempDir dir("roundtrip");
  SynthSpec spec = SynthSpec::planted();
  spec.size = 40;
  spec.scalar_missing_rate = 0.1;
  const auto a = synth_generate(8, spec);
  const CohortPaths paths{dir.path() / "c.csv", dir.path() / "m.csv", dir.path() / "x.csv"};
  write_cohort(a, paths);
  const auto b = load_cohort(paths);
  REQUIRE(b.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].knee_id == b[i].knee_id);
    CHECK(a[i].case_label == b[i].case_label);
    CHECK(a[i].observed_pain == b[i].observed_pain);
    for (Block blk : kAllBlocks) {
      for (const auto& [k, v] : a[i].block(blk)) {
        const double w = b[i].scalar(blk, k);
        CHECK((is_missing(v) ? is_missing(w) : v == w));
      }
    }
    CHECK(a[i].mri_missing() == b[i].mri_missing());
    if (!a[i].mri_missing()) CHECK(*a[i].mri_embedding == *b[i].mri_embedding);
  }
}

TEST_CASE("cohort: file errors") {
  testing::TempDir dir("errors");
  text::write_file(dir / "empty.csv", "knee_id,side,case,pain,rad.kl_grade\n");
  const auto empty = load_cohort(dir.path() / "empty.csv");
  CHECK(empty.size() == 0);
  CHECK(category_of([&] { build_task(empty, TaskSpec{}); }) == ErrorCategory::Task);

  text::write_file(dir / "dup.csv", "knee_id,side,case,pain\nk1,R,2,1.0\nk1,L,4,2.0\n");
  try {
    load_cohort(dir.path() / "dup.csv");
    FAIL("expected integrity error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::Integrity);
    CHECK(std::string(e.what()).find("k1") != std::string::npos);
  }

  text::write_file(dir / "case1.csv", "knee_id,side,case,pain\na,R,1,1\nb,R,1,2\n");
  CHECK(category_of([&] { build_task(load_cohort(dir.path() / "case1.csv"), TaskSpec{}); }) == ErrorCategory::Task);

  text::write_file(dir / "bad.csv", "knee_id,side,case,pain\na,R,2,abc\n");
  CHECK(category_of([&] { load_cohort(dir.path() / "bad.csv"); }) == ErrorCategory::Parse);
  CHECK(category_of([&] { load_cohort(dir.path() / "missing.csv"); }) == ErrorCategory::Io);
  text::write_file(dir / "range.csv", "knee_id,side,case,pain,rad.kl_grade\na,R,2,1,7\n");
  CHECK(category_of([&] { load_cohort(dir.path() / "range.csv"); }) == ErrorCategory::Range);
}

TEST_CASE("cohort: explicit schema roles") {
  testing::TempDir dir("schema");
  text::write_file(dir / "s.csv", "id,side,case,womac,age,kl\nk1,R,2,3.5,61,2\nk2,L,4,1.0,70,1\n");
  text::write_file(dir / "s.json",
                   R"({"columns":{"id":"knee_id","womac":"pain","age":"demographic","kl":"radiographic"}})");
  const auto c = load_cohort(dir.path() / "s.csv", CohortSchema::from_json_file(dir.path() / "s.json"));
  REQUIRE(c.size() == 2);
  CHECK(c[0].knee_id == "k1");
  CHECK(c[0].observed_pain == 3.5);
  CHECK(c[0].scalar(Block::Demographics, "age") == 61);
  CHECK(c[1].scalar(Block::Radiographic, "kl") == 1);
}

TEST_CASE("cohort: complete-case filters") {
  std::vector<KneeRecord> rs;
  for (int i = 0; i < 4; ++i) {
    auto r = testing::knee("k" + std::to_string(i), CaseLabel::Non);
    r.radiographic["kl_grade"] = i == 1 ? kMissing : 2.0;
    r.observed_pain = i == 2 ? kMissing : 1.0;
    rs.push_back(r);
  }
  const Cohort c(rs, {});
  const std::vector<ScalarRef> req = {{Block::Radiographic, "kl_grade"}};
  CHECK(filter_complete_predictors(c, req).size() == 3);
  CHECK(filter_complete_cases(c, req).size() == 2);
  CHECK(parse_scalar_ref("rad.kl_grade") == ScalarRef{Block::Radiographic, "kl_grade"});
  CHECK(!parse_scalar_ref("kl_grade"));
  CHECK(to_string(req[0]) == "rad.kl_grade");
}

TEST_CASE("text helpers") {
  CHECK(text::split_fields(R"(a,"b,c","d""e")") == std::vector<std::string>{"a", "b,c", "d\"e"});
  CHECK(text::parse_double("1.5") == 1.5);
  CHECK(!text::parse_double("1.5x"));
  CHECK(text::is_missing_token("NA"));
  const double v = 0.1 + 0.2;
  CHECK(*text::parse_double(text::format_double17(v)) == v);
}
