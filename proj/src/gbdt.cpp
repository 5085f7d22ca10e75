#include "koa/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "koa/error.hpp"
#include "koa/logistic.hpp"
#include "koa/rng.hpp"

namespace koa {

double RegressionTree::predict(std::span<const double> row) const {
  int i = 0;
  while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    const double x = row[static_cast<std::size_t>(n.feature)];
    if (std::isnan(x)) {
      i = n.missing_left ? n.left : n.right;
    } else {
      i = x <= n.threshold ? n.left : n.right;
    }
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

int RegressionTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return best;
}

double GbdtModel::predict_margin(std::span<const double> row) const {
  double m = base_score;
  for (const auto& t : trees) m += t.predict(row);
  return m;
}

double GbdtModel::predict(std::span<const double> row) const {
  const double m = predict_margin(row);
  return loss == GbdtLoss::Logistic ? sigmoid(m) : m;
}

Vector GbdtModel::predict(const Matrix& X) const {
  Vector out(X.rows());
  std::vector<double> row(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) row[static_cast<std::size_t>(j)] = X(i, j);
    out[i] = predict(row);
  }
  return out;
}

std::vector<double> GbdtModel::normalized_importance() const {
  const double total = std::accumulate(gain_importance.begin(), gain_importance.end(), 0.0);
  std::vector<double> out(gain_importance.size(), 0.0);
  if (!(total > 0.0)) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 100.0 * gain_importance[i] / total;
  return out;
}

namespace {

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool missing_left = true;
};

// Scan state for one (node, feature) pair while walking a presorted column.
struct ScanState {
  double g_left = 0.0;
  double h_left = 0.0;
  int n_left = 0;
  double last_value = 0.0;
  bool seen = false;
};

struct NodeStats {
  double g = 0.0;
  double h = 0.0;
  int n = 0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, const std::vector<std::vector<int>>& sorted, const std::vector<std::vector<int>>& missing,
              const GbdtParams& p, std::vector<double>& importance)
      : X_(X), sorted_(sorted), missing_(missing), p_(p), importance_(importance) {}

  RegressionTree build(const std::vector<double>& grad, const std::vector<double>& hess, std::vector<int>& node_of) {
    RegressionTree tree;
    tree.nodes.emplace_back();
    std::vector<int> active = {0};
    std::vector<NodeStats> stats(1);
    for (std::size_t r = 0; r < node_of.size(); ++r) {
      if (node_of[r] < 0) continue;
      stats[0].g += grad[r];
      stats[0].h += hess[r];
      ++stats[0].n;
    }
    std::vector<NodeStats> all_stats = stats;  // indexed by node id

    for (int depth = 0; depth < p_.max_depth && !active.empty(); ++depth) {
      // local index of every active node
      std::vector<int> local(tree.nodes.size(), -1);
      for (std::size_t a = 0; a < active.size(); ++a) local[static_cast<std::size_t>(active[a])] = static_cast<int>(a);
      std::vector<SplitCandidate> best(active.size());

      const auto n_features = static_cast<int>(X_.cols());
      std::vector<NodeStats> miss(active.size());
      std::vector<ScanState> scan(active.size());
      for (int f = 0; f < n_features; ++f) {
        std::fill(miss.begin(), miss.end(), NodeStats{});
        std::fill(scan.begin(), scan.end(), ScanState{});
        for (int r : missing_[static_cast<std::size_t>(f)]) {
          const int node = node_of[static_cast<std::size_t>(r)];
          if (node < 0 || local[static_cast<std::size_t>(node)] < 0) continue;
          auto& m = miss[static_cast<std::size_t>(local[static_cast<std::size_t>(node)])];
          m.g += grad[static_cast<std::size_t>(r)];
          m.h += hess[static_cast<std::size_t>(r)];
          ++m.n;
        }
        for (int r : sorted_[static_cast<std::size_t>(f)]) {
          const int node = node_of[static_cast<std::size_t>(r)];
          if (node < 0) continue;
          const int a = local[static_cast<std::size_t>(node)];
          if (a < 0) continue;
          auto& s = scan[static_cast<std::size_t>(a)];
          const double v = X_(r, f);
          if (s.seen && v > s.last_value) {
            consider(best[static_cast<std::size_t>(a)], all_stats[static_cast<std::size_t>(node)],
                     miss[static_cast<std::size_t>(a)], s, f, midpoint(s.last_value, v));
          }
          s.g_left += grad[static_cast<std::size_t>(r)];
          s.h_left += hess[static_cast<std::size_t>(r)];
          ++s.n_left;
          s.last_value = v;
          s.seen = true;
        }
        // Present-vs-missing split: every present value left, missing right.
        for (std::size_t a = 0; a < active.size(); ++a) {
          if (scan[a].seen && miss[a].n > 0) {
            consider_all_present(best[a], all_stats[static_cast<std::size_t>(active[a])], miss[a], scan[a], f);
          }
        }
      }

      std::vector<int> next;
      for (std::size_t a = 0; a < active.size(); ++a) {
        const int id = active[a];
        const auto& b = best[a];
        if (b.feature < 0 || !(b.gain > p_.min_split_gain)) continue;
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = b.feature;
        node.threshold = b.threshold;
        node.missing_left = b.missing_left;
        node.gain = b.gain;
        node.left = left;
        node.right = left + 1;
        importance_[static_cast<std::size_t>(b.feature)] += b.gain;
        next.push_back(left);
        next.push_back(left + 1);
      }
      all_stats.resize(tree.nodes.size());
      for (int id : next) all_stats[static_cast<std::size_t>(id)] = NodeStats{};
      for (std::size_t r = 0; r < node_of.size(); ++r) {
        const int node = node_of[r];
        if (node < 0) continue;
        const auto& n = tree.nodes[static_cast<std::size_t>(node)];
        if (n.feature < 0) continue;
        const double x = X_(static_cast<Eigen::Index>(r), n.feature);
        const bool go_left = std::isnan(x) ? n.missing_left : x <= n.threshold;
        const int child = go_left ? n.left : n.right;
        node_of[r] = child;
        auto& s = all_stats[static_cast<std::size_t>(child)];
        s.g += grad[r];
        s.h += hess[r];
        ++s.n;
      }
      active = std::move(next);
    }

    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      auto& n = tree.nodes[id];
      if (n.feature >= 0) continue;
      const auto& s = all_stats[id];
      n.value = s.n > 0 ? -p_.learning_rate * s.g / (s.h + p_.l2_leaf) : 0.0;
    }
    return tree;
  }

 private:
  static double midpoint(double lo, double hi) {
    const double m = lo + 0.5 * (hi - lo);
    return m < hi ? m : lo;
  }

  double score(double g, double h) const { return g * g / (h + p_.l2_leaf); }

  bool admissible(double h, int n) const { return n >= p_.min_samples_leaf && h >= p_.min_child_hessian; }

  void evaluate(SplitCandidate& best, const NodeStats& total, double gl, double hl, int nl, int f, double threshold,
                bool missing_left) const {
    const double gr = total.g - gl;
    const double hr = total.h - hl;
    const int nr = total.n - nl;
    if (!admissible(hl, nl) || !admissible(hr, nr)) return;
    const double gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(total.g, total.h));
    if (gain > best.gain) best = {gain, f, threshold, missing_left};
  }

  void consider(SplitCandidate& best, const NodeStats& total, const NodeStats& miss, const ScanState& s, int f,
                double threshold) const {
    evaluate(best, total, s.g_left, s.h_left, s.n_left, f, threshold, false);
    if (miss.n > 0) evaluate(best, total, s.g_left + miss.g, s.h_left + miss.h, s.n_left + miss.n, f, threshold, true);
  }

  void consider_all_present(SplitCandidate& best, const NodeStats& total, const NodeStats& /*miss*/, const ScanState& s,
                            int f) const {
    evaluate(best, total, s.g_left, s.h_left, s.n_left, f, s.last_value, false);
  }

  const Matrix& X_;
  const std::vector<std::vector<int>>& sorted_;
  const std::vector<std::vector<int>>& missing_;
  const GbdtParams& p_;
  std::vector<double>& importance_;
};

void check_params(const GbdtParams& p) {
  if (p.n_trees < 0 || p.max_depth < 0) fail(ErrorCategory::Spec, "gbdt: n_trees and max_depth must be >= 0");
  if (!(p.learning_rate > 0.0)) fail(ErrorCategory::Spec, "gbdt: learning_rate must be positive");
  if (!(p.subsample > 0.0 && p.subsample <= 1.0)) fail(ErrorCategory::Spec, "gbdt: subsample must lie in (0, 1]");
  if (!(p.l2_leaf >= 0.0)) fail(ErrorCategory::Spec, "gbdt: l2_leaf must be >= 0");
}

}  // namespace

GbdtModel gbdt_fit(const Matrix& X, std::span<const double> y, const GbdtParams& params) {
  check_params(params);
  const auto n = static_cast<std::size_t>(X.rows());
  if (n != y.size()) fail(ErrorCategory::Dimension, "gbdt_fit: row/label count mismatch");
  if (n == 0) fail(ErrorCategory::Dimension, "gbdt_fit: empty training set");
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    if (std::isinf(X.data()[i])) fail(ErrorCategory::Numeric, "gbdt_fit: infinite feature value");
  }

  GbdtModel model;
  model.loss = params.loss;
  model.learning_rate = params.learning_rate;
  model.max_depth = params.max_depth;
  model.gain_importance.assign(static_cast<std::size_t>(X.cols()), 0.0);

  const double y_mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  if (params.loss == GbdtLoss::Logistic) {
    for (double v : y) {
      if (v != 0.0 && v != 1.0) fail(ErrorCategory::DegenerateLabel, "gbdt_fit: logistic labels must be 0 or 1");
    }
    if (y_mean <= 0.0 || y_mean >= 1.0) fail(ErrorCategory::DegenerateLabel, "gbdt_fit: labels contain a single class");
    model.base_score = std::log(y_mean / (1.0 - y_mean));
  } else {
    model.base_score = y_mean;
  }

  // Presorted non-missing row indices per feature; stable on ties.
  std::vector<std::vector<int>> sorted(static_cast<std::size_t>(X.cols()));
  std::vector<std::vector<int>> missing(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index f = 0; f < X.cols(); ++f) {
    auto& s = sorted[static_cast<std::size_t>(f)];
    for (std::size_t r = 0; r < n; ++r) {
      if (std::isnan(X(static_cast<Eigen::Index>(r), f))) {
        missing[static_cast<std::size_t>(f)].push_back(static_cast<int>(r));
      } else {
        s.push_back(static_cast<int>(r));
      }
    }
    std::stable_sort(s.begin(), s.end(), [&](int a, int b) { return X(a, f) < X(b, f); });
  }

  std::vector<double> margin(n, model.base_score);
  std::vector<double> grad(n), hess(n);
  std::vector<int> node_of(n);
  std::vector<std::size_t> perm(n);
  const auto sample_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(params.subsample * static_cast<double>(n))));
  TreeBuilder builder(X, sorted, missing, params, model.gain_importance);
  std::vector<double> row(static_cast<std::size_t>(X.cols()));

  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t r = 0; r < n; ++r) {
      if (params.loss == GbdtLoss::Logistic) {
        const double p = sigmoid(margin[r]);
        grad[r] = p - y[r];
        hess[r] = std::max(p * (1.0 - p), 1e-16);
      } else {
        grad[r] = margin[r] - y[r];
        hess[r] = 1.0;
      }
    }
    if (sample_size < n) {
      std::fill(node_of.begin(), node_of.end(), -1);
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(t)));
      for (std::size_t i = 0; i < sample_size; ++i) {
        std::swap(perm[i], perm[i + rng.below(n - i)]);
        node_of[perm[i]] = 0;
      }
    } else {
      std::fill(node_of.begin(), node_of.end(), 0);
    }
    RegressionTree tree = builder.build(grad, hess, node_of);
    for (std::size_t r = 0; r < n; ++r) {
      for (Eigen::Index j = 0; j < X.cols(); ++j) row[static_cast<std::size_t>(j)] = X(static_cast<Eigen::Index>(r), j);
      margin[r] += tree.predict(row);
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

GbdtModel gbdt_fit(const Matrix& X, std::span<const int> y, const GbdtParams& params) {
  std::vector<double> yd(y.begin(), y.end());
  return gbdt_fit(X, std::span<const double>(yd), params);
}

double logistic_log_loss(const GbdtModel& model, const Matrix& X, std::span<const int> y) {
  std::vector<double> row(static_cast<std::size_t>(X.cols()));
  double loss = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) row[static_cast<std::size_t>(j)] = X(i, j);
    const double m = model.predict_margin(row);
    const double z = y[static_cast<std::size_t>(i)] ? -m : m;
    loss += z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  }
  return loss / static_cast<double>(X.rows());
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const GbdtModel& model) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : model.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      if (n.feature < 0) {
        nodes.push_back({{"leaf", n.value}});
      } else {
        nodes.push_back({{"f", n.feature},
                         {"t", n.threshold},
                         {"ml", n.missing_left},
                         {"l", n.left},
                         {"r", n.right},
                         {"g", n.gain}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  return {
      {"type", "gbdt"},
      {"loss", model.loss == GbdtLoss::Logistic ? "logistic" : "squared"},
      {"base_score", model.base_score},
      {"learning_rate", model.learning_rate},
      {"max_depth", model.max_depth},
      {"gain_importance", model.gain_importance},
      {"trees", std::move(trees)},
  };
}

GbdtModel gbdt_from_json(const nlohmann::json& j) {
  GbdtModel m;
  m.loss = j.at("loss").get<std::string>() == "squared" ? GbdtLoss::Squared : GbdtLoss::Logistic;
  m.base_score = j.at("base_score").get<double>();
  m.learning_rate = j.at("learning_rate").get<double>();
  m.max_depth = j.at("max_depth").get<int>();
  m.gain_importance = j.at("gain_importance").get<std::vector<double>>();
  for (const auto& tj : j.at("trees")) {
    RegressionTree t;
    for (const auto& nj : tj) {
      TreeNode n;
      if (nj.contains("leaf")) {
        n.value = nj.at("leaf").get<double>();
      } else {
        n.feature = nj.at("f").get<int>();
        n.threshold = nj.at("t").get<double>();
        n.missing_left = nj.at("ml").get<bool>();
        n.left = nj.at("l").get<int>();
        n.right = nj.at("r").get<int>();
        n.gain = nj.at("g").get<double>();
      }
      t.nodes.push_back(n);
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace koa
