#include "koa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "koa/error.hpp"

namespace koa {

namespace {

void check_sizes(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) {
    fail(ErrorCategory::Dimension, std::string(what) + ": " + std::to_string(scores.size()) + " scores but " +
                                       std::to_string(labels.size()) + " labels");
  }
  for (double s : scores) {
    if (std::isnan(s)) fail(ErrorCategory::Numeric, std::string(what) + ": NaN score");
  }
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels, "auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]]) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorCategory::DegenerateLabel, "auc undefined: labels contain a single class");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels, "average_precision");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[order[r]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) fail(ErrorCategory::DegenerateLabel, "average precision undefined: no positive labels");
  return sum / static_cast<double>(hits);
}

ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_sizes(scores, labels, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool call = scores[i] >= threshold;
    if (labels[i]) {
      call ? ++c.tp : ++c.fn;
    } else {
      call ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

ThresholdedMetrics thresholded_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  const auto c = confusion(scores, labels, threshold);
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0) {
    fail(ErrorCategory::DegenerateLabel, "thresholded metrics undefined: labels contain a single class");
  }
  ThresholdedMetrics m;
  const double sens = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double spec = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  m.balanced_accuracy = 0.5 * (sens + spec);
  m.f1 = c.tp == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return m;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) fail(ErrorCategory::Dimension, "pearson: need two equal-length samples");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace koa
