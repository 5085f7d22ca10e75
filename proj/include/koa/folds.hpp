#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace koa {

struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<int> assignment;  // position -> fold id

  std::size_t size() const noexcept { return assignment.size(); }
  std::vector<std::size_t> test_positions(int fold) const;
  std::vector<std::size_t> train_positions(int fold) const;
  // Stable digest of (k, seed, assignment); embedded in model artifacts.
  std::string fingerprint() const;
};

// Stratified k-fold: each class is shuffled with the seed and dealt
// round-robin, continuing the fold cursor across classes so fold sizes differ
// by at most one. Throws Stratification when k < 2 or a class has fewer than
// k members.
FoldPlan stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed);

// Checks the plan covers every position exactly once with ids in [0, k).
bool is_partition(const FoldPlan& plan);

}  // namespace koa
