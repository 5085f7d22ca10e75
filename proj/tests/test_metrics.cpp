#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "koa/error.hpp"
#include "koa/metrics.hpp"
#include "oracles.hpp"

using namespace koa;

namespace {

// Scores on a coarse grid so ties are common.
std::vector<double> grid_scores(Rng& rng, std::size_t n) {
  std::vector<double> s(n);
  for (auto& v : s) v = static_cast<double>(rng.below(11)) / 10.0;
  return s;
}

}  // namespace

TEST_CASE("auc closed forms") {
  const std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y = {0, 0, 1, 1};
  CHECK(auc(s, y) == 1.0);
  const std::vector<double> flat(4, 0.3);
  CHECK(auc(flat, y) == 0.5);
  const std::vector<int> one_class = {1, 1, 1, 1};
  CHECK_THROWS_AS(auc(s, one_class), Error);
}

TEST_CASE("auc matches pairwise enumeration on a 40-sample vector") {
  Rng rng(40);
  std::vector<double> s(40);
  for (auto& v : s) v = rng.uniform();
  const auto y = testing::random_labels(rng, 40);
  CHECK(std::fabs(auc(s, y) - oracle::pairwise_auc(s, y)) <= 1e-12);
}

TEST_CASE("average precision closed forms") {
  const std::vector<double> s = {0.9, 0.8, 0.3, 0.2, 0.1};
  CHECK(average_precision(s, std::vector<int>{1, 1, 0, 0, 0}) == 1.0);
  CHECK(average_precision(s, std::vector<int>{0, 0, 0, 0, 1}) == doctest::Approx(1.0 / 5).epsilon(1e-15));
  CHECK_THROWS_AS(average_precision(s, std::vector<int>{0, 0, 0, 0, 0}), Error);
}

TEST_CASE("average precision matches the rank walk on a 30-sample instance") {
  Rng rng(30);
  const auto s = grid_scores(rng, 30);
  const auto y = testing::random_labels(rng, 30);
  CHECK(std::fabs(average_precision(s, y) - oracle::rank_walk_ap(s, y)) <= 1e-12);
}

TEST_CASE("thresholded metrics") {
  const std::vector<double> s = {0.9, 0.6, 0.4, 0.1};
  const std::vector<int> y = {1, 1, 0, 0};
  auto m = thresholded_metrics(s, y);
  CHECK(m.balanced_accuracy == 1.0);
  CHECK(m.f1 == 1.0);

  const std::vector<double> low(4, 0.2);
  m = thresholded_metrics(low, y);
  CHECK(m.balanced_accuracy == 0.5);
  CHECK(m.f1 == 0.0);

  // score exactly at the threshold is a positive call
  const auto c = confusion(std::vector<double>{0.5}, std::vector<int>{1});
  CHECK(c.tp == 1);
}

TEST_CASE("thresholded metrics match a confusion oracle") {
  Rng rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 10 + rng.below(60);
    const auto s = grid_scores(rng, n);
    const auto y = testing::random_labels(rng, n);
    const auto c = oracle::count(s, y, 0.5);
    const auto m = thresholded_metrics(s, y);
    CHECK(m.balanced_accuracy == oracle::balanced_accuracy(c));
    CHECK(m.f1 == oracle::f1(c));
  }
}

TEST_CASE("metric inputs are validated") {
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1}), Error);
  const std::vector<double> nan_scores = {0.1, std::nan("")};
  CHECK_THROWS_AS(auc(nan_scores, std::vector<int>{0, 1}), Error);
}

TEST_CASE("pearson") {
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {2, 4, 6, 8};
  CHECK(pearson(a, b) == doctest::Approx(1.0));
  const std::vector<double> c = {4, 3, 2, 1};
  CHECK(pearson(a, c) == doctest::Approx(-1.0));
}
