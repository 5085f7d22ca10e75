#pragma once

#include <span>

namespace koa {

// Mann-Whitney statistic P(s_pos > s_neg) + 0.5 P(tie), computed from
// midranks. Throws DegenerateLabel unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Step-wise average precision: mean over positives of the precision at that
// positive's rank. Ranking is a stable sort on descending score, so tied
// scores keep input order. Throws DegenerateLabel without positives.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct ConfusionCounts {
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

// score >= threshold is a positive call.
ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct ThresholdedMetrics {
  double balanced_accuracy = 0.0;
  double f1 = 0.0;  // 0 when there are no true positives
};

ThresholdedMetrics thresholded_metrics(std::span<const double> scores, std::span<const int> labels,
                                       double threshold = 0.5);

double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace koa
