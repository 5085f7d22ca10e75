#include "koa/folds.hpp"

#include <algorithm>
#include <string>

#include "koa/error.hpp"
#include "koa/rng.hpp"
#include "koa/text.hpp"

namespace koa {

std::vector<std::size_t> FoldPlan::test_positions(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::train_positions(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != fold) out.push_back(i);
  }
  return out;
}

std::string FoldPlan::fingerprint() const {
  std::string bytes = std::to_string(k) + ":" + std::to_string(seed) + ":";
  for (int a : assignment) bytes.push_back(static_cast<char>('0' + (a % 64)));
  return text::hex64(fnv1a64(bytes));
}

FoldPlan stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCategory::Stratification, "stratified_kfold: k must be >= 2, got " + std::to_string(k));
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  if (pos.size() < static_cast<std::size_t>(k) || neg.size() < static_cast<std::size_t>(k)) {
    fail(ErrorCategory::Stratification, "stratified_kfold: classes have " + std::to_string(pos.size()) + " and " +
                                            std::to_string(neg.size()) + " members; each needs at least k = " +
                                            std::to_string(k));
  }
  Rng rng(derive_seed(seed, "stratified_kfold"));
  rng.shuffle(std::span<std::size_t>(pos));
  rng.shuffle(std::span<std::size_t>(neg));

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignment.assign(labels.size(), -1);
  int cursor = 0;
  for (const auto* cls : {&pos, &neg}) {
    for (std::size_t idx : *cls) {
      plan.assignment[idx] = cursor;
      cursor = (cursor + 1) % k;
    }
  }
  return plan;
}

bool is_partition(const FoldPlan& plan) {
  return std::all_of(plan.assignment.begin(), plan.assignment.end(), [&](int a) { return a >= 0 && a < plan.k; });
}

}  // namespace koa
