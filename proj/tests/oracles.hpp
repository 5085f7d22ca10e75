#pragma once

// Brute-force reference implementations. Deliberately naive and free of the
// library's own numerics so the tests compare two independent routes.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

using Dense = std::vector<std::vector<double>>;

// O(n^2) pair enumeration: ties count one half.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// For each positive, count the items ranked at or above it. An item j is
// ahead of i when its score is larger, or equal with a smaller index.
inline double rank_walk_ap(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0.0;
  int positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++positives;
    double rank = 0.0;
    double hits = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const bool ahead = s[j] > s[i] || (s[j] == s[i] && j <= i);
      if (!ahead) continue;
      rank += 1.0;
      if (y[j]) hits += 1.0;
    }
    total += hits / rank;
  }
  return total / positives;
}

struct Counts {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Counts count(const std::vector<double>& s, const std::vector<int>& y, double t) {
  Counts c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool call = !(s[i] < t);
    if (y[i] && call) c.tp += 1;
    if (y[i] && !call) c.fn += 1;
    if (!y[i] && call) c.fp += 1;
    if (!y[i] && !call) c.tn += 1;
  }
  return c;
}

inline double balanced_accuracy(const Counts& c) {
  return 0.5 * (c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp));
}

inline double f1(const Counts& c) {
  if (c.tp == 0) return 0.0;
  return 2 * c.tp / (2 * c.tp + c.fp + c.fn);
}

// Gauss-Jordan with partial pivoting on a copy.
inline std::vector<double> solve(Dense a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    if (std::fabs(a[piv][col]) < 1e-300) throw std::runtime_error("singular");
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= a[i][i];
  return b;
}

// Ridge with an unpenalised intercept via the augmented normal equations
// [X 1]'[X 1] + diag(lambda, ..., lambda, 0).
inline std::pair<std::vector<double>, double> ridge(const Dense& x, const std::vector<double>& y, double lambda) {
  const std::size_t n = x.size();
  const std::size_t d = x[0].size();
  Dense a(d + 1, std::vector<double>(d + 1, 0.0));
  std::vector<double> b(d + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row = x[i];
    row.push_back(1.0);
    for (std::size_t p = 0; p <= d; ++p) {
      b[p] += row[p] * y[i];
      for (std::size_t q = 0; q <= d; ++q) a[p][q] += row[p] * row[q];
    }
  }
  for (std::size_t p = 0; p < d; ++p) a[p][p] += lambda;
  auto w = solve(a, b);
  const double bias = w.back();
  w.pop_back();
  return {w, bias};
}

inline Dense sample_covariance(const Dense& x) {
  const std::size_t n = x.size();
  const std::size_t d = x[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : x)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j] / n;
  Dense c(d, std::vector<double>(d, 0.0));
  for (const auto& r : x)
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = 0; q < d; ++q) c[p][q] += (r[p] - mean[p]) * (r[q] - mean[q]) / (n - 1.0);
  return c;
}

// Cyclic Jacobi rotations; returns eigenvalues sorted descending.
inline std::vector<double> jacobi_eigenvalues(Dense a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (ev[j] > ev[i]) std::swap(ev[i], ev[j]);
  return ev;
}

// Mean log-loss plus (l2/2)|w|^2, written out term by term.
inline double logistic_loss(const Dense& x, const std::vector<int>& y, double l2, const std::vector<double>& w,
                            double b) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = b;
    for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * x[i][j];
    // log(1 + e^z) - y z, stable for both signs
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += softplus - y[i] * z;
  }
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return total / x.size() + 0.5 * l2 * reg;
}

}  // namespace oracle
