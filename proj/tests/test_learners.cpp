#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "koa/error.hpp"
#include "koa/folds.hpp"
#include "koa/gbdt.hpp"
#include "koa/logistic.hpp"
#include "koa/metrics.hpp"
#include "koa/pca.hpp"
#include "koa/ridge.hpp"
#include "oracles.hpp"

using namespace koa;
using testing::dense;
using testing::random_matrix;

TEST_CASE("pca: variance on one axis gives +e1") {
  Matrix X(6, 2);
  for (int i = 0; i < 6; ++i) {
    X(i, 0) = i - 2.5;
    X(i, 1) = 3.0;
  }
  const auto m = pca_fit(X, 1);
  CHECK(m.components(0, 0) == doctest::Approx(1.0));
  CHECK(std::fabs(m.components(0, 1)) < 1e-12);
}

TEST_CASE("pca: full-rank reconstruction") {
  Rng rng(20);
  const Matrix X = random_matrix(rng, 20, 8);
  const auto m = pca_fit(X, 8);
  const Matrix back = m.inverse_transform(m.transform(X));
  CHECK((back - X).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("pca: eigenvalues match a Jacobi oracle and components are orthonormal") {
  Rng rng(50);
  const Matrix X = random_matrix(rng, 50, 10);
  const auto m = pca_fit(X, 3);
  const auto ev = oracle::jacobi_eigenvalues(oracle::sample_covariance(dense(X)));
  for (int c = 0; c < 3; ++c) CHECK(std::fabs(m.explained_variance[c] - ev[c]) < 1e-7);
  const Matrix gram = m.components * m.components.transpose();
  CHECK((gram - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);

  // per-column variance of the scores equals explained variance
  const Matrix Z = m.transform(X);
  for (int c = 0; c < 3; ++c) {
    const double mean = Z.col(c).mean();
    const double var = (Z.col(c).array() - mean).square().sum() / (Z.rows() - 1);
    CHECK(std::fabs(var - m.explained_variance[c]) < 1e-7);
  }
}

TEST_CASE("pca: wide data path is orthonormal") {
  Rng rng(3);
  const Matrix X = random_matrix(rng, 12, 40);
  const auto m = pca_fit(X, 11);
  const Matrix gram = m.components * m.components.transpose();
  CHECK((gram - Matrix::Identity(11, 11)).cwiseAbs().maxCoeff() < 1e-8);
  const auto ev = oracle::jacobi_eigenvalues(oracle::sample_covariance(dense(X)));
  for (int c = 0; c < 11; ++c) CHECK(std::fabs(m.explained_variance[c] - ev[c]) < 1e-7);
}

TEST_CASE("pca: centring and argument checks") {
  Rng rng(9);
  const Matrix X = random_matrix(rng, 10, 4);
  const auto m = pca_fit(X, 2);
  Matrix means(3, 4);
  for (int i = 0; i < 3; ++i) means.row(i) = m.mean.transpose();
  CHECK(m.transform(means).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(pca_fit(X, 0), Error);
  CHECK_THROWS_AS(pca_fit(X, 5), Error);
  CHECK_THROWS_AS(pca_fit(X.topRows(1), 1), Error);
  CHECK_THROWS_AS(m.transform(Matrix::Zero(2, 3)), Error);
  const auto round = pca_from_json(to_json(m));
  CHECK((round.components - m.components).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("logistic: zero model predicts one half") {
  LogisticModel m;
  m.weights = Vector::Zero(3);
  CHECK(m.predict_proba(Vector::Constant(3, 7.0)) == 0.5);
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("logistic: gradient matches central differences") {
  Rng rng(10);
  const Matrix X = random_matrix(rng, 10, 4);
  const auto y = testing::random_labels(rng, 10);
  const Vector w = Vector::Random(4);
  const double b = 0.3;
  const double l2 = 0.1;
  const auto obj = logistic_objective(X, y, l2, w, b);
  const auto d = dense(X);
  std::vector<double> wv(w.data(), w.data() + 4);
  CHECK(std::fabs(obj.loss - oracle::logistic_loss(d, y, l2, wv, b)) < 1e-12);
  const double h = 1e-5;
  double worst = 0.0;
  for (int j = 0; j < 4; ++j) {
    auto up = wv, dn = wv;
    up[j] += h;
    dn[j] -= h;
    const double fd = (oracle::logistic_loss(d, y, l2, up, b) - oracle::logistic_loss(d, y, l2, dn, b)) / (2 * h);
    worst = std::max(worst, std::fabs(fd - obj.grad_weights[j]));
  }
  const double fdb = (oracle::logistic_loss(d, y, l2, wv, b + h) - oracle::logistic_loss(d, y, l2, wv, b - h)) / (2 * h);
  worst = std::max(worst, std::fabs(fdb - obj.grad_bias));
  CHECK(worst < 1e-6);
}

TEST_CASE("logistic: separable data with a penalty") {
  Matrix X(8, 1);
  std::vector<int> y(8);
  for (int i = 0; i < 8; ++i) {
    X(i, 0) = i < 4 ? -1.0 - i : 1.0 + i;
    y[i] = i < 4 ? 0 : 1;
  }
  LogisticOptions opts;
  opts.record_loss_history = true;
  const auto m = logreg_fit(X, y, 0.01, opts);
  CHECK(std::isfinite(m.weights[0]));
  const Vector p = m.predict_proba_rows(X);
  for (int i = 0; i < 8; ++i) CHECK((p[i] >= 0.5) == (y[i] == 1));
  for (std::size_t i = 1; i < m.loss_history.size(); ++i) CHECK(m.loss_history[i] <= m.loss_history[i - 1] + 1e-15);
  CHECK_THROWS_AS(logreg_fit(X, std::vector<int>(8, 1), 0.01), Error);
}

TEST_CASE("logistic: optimum has a vanishing gradient") {
  Rng rng(5);
  const Matrix X = random_matrix(rng, 60, 3);
  const auto y = testing::random_labels(rng, 60);
  const auto m = logreg_fit(X, y, 0.05);
  const auto obj = logistic_objective(X, y, 0.05, m.weights, m.bias);
  CHECK(obj.grad_weights.cwiseAbs().maxCoeff() < 1e-6);
  CHECK(std::fabs(obj.grad_bias) < 1e-6);
}

TEST_CASE("ridge: exact line") {
  Matrix X(5, 1);
  std::vector<double> y(5);
  for (int i = 0; i < 5; ++i) {
    X(i, 0) = i;
    y[i] = 3.0 * i + 1.0;
  }
  const auto m = ridge_fit(X, y, 0.0);
  CHECK(std::fabs(m.weights[0] - 3.0) < 1e-9);
  CHECK(std::fabs(m.bias - 1.0) < 1e-9);
}

TEST_CASE("ridge: huge penalty shrinks to the mean") {
  Matrix X(5, 2);
  std::vector<double> y = {1, 2, 4, 8, 10};
  for (int i = 0; i < 5; ++i) {
    X(i, 0) = i;
    X(i, 1) = i * i;
  }
  const auto m = ridge_fit(X, y, 1e14);
  CHECK(m.weights.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(m.bias == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("ridge: matches the normal-equations oracle") {
  Rng rng(30);
  const Matrix X = random_matrix(rng, 30, 5);
  std::vector<double> y(30);
  for (auto& v : y) v = rng.normal();
  const auto m = ridge_fit(X, y, 0.1);
  const auto [w, b] = oracle::ridge(dense(X), y, 0.1);
  for (int j = 0; j < 5; ++j) CHECK(std::fabs(m.weights[j] - w[j]) < 1e-8);
  CHECK(std::fabs(m.bias - b) < 1e-8);
}

TEST_CASE("ridge: singular system without a penalty") {
  Matrix X(4, 2);
  X << 1, 2, 2, 4, 3, 6, 4, 8;
  CHECK_THROWS_AS(ridge_fit(X, std::vector<double>{1, 2, 3, 4}, 0.0), Error);
}

TEST_CASE("gbdt: one perfect split") {
  Matrix X(20, 1);
  std::vector<int> y(20);
  for (int i = 0; i < 20; ++i) {
    y[i] = i % 2;
    X(i, 0) = y[i];
  }
  GbdtParams p;
  p.n_trees = 10;
  p.subsample = 1.0;
  const auto m = gbdt_fit(X, y, p);
  const Vector pred = m.predict(X);
  std::vector<double> s(pred.data(), pred.data() + pred.size());
  CHECK(auc(s, y) == 1.0);
  double sum = 0.0;
  for (double v : m.normalized_importance()) sum += v;
  CHECK(std::fabs(sum - 100.0) < 1e-6);
}

TEST_CASE("gbdt: importances sum to 100 and json round-trips") {
  Rng rng(12);
  const Matrix X = random_matrix(rng, 80, 5);
  std::vector<int> y(80);
  for (int i = 0; i < 80; ++i) y[i] = X(i, 2) + 0.3 * rng.normal() > 0;
  GbdtParams p;
  p.n_trees = 40;
  p.seed = 4;
  const auto m = gbdt_fit(X, y, p);
  const auto imp = m.normalized_importance();
  CHECK(std::fabs(std::accumulate(imp.begin(), imp.end(), 0.0) - 100.0) < 1e-6);
  CHECK(std::max_element(imp.begin(), imp.end()) - imp.begin() == 2);
  const auto back = gbdt_from_json(to_json(m));
  CHECK((back.predict(X) - m.predict(X)).cwiseAbs().maxCoeff() == 0.0);
  for (const auto& t : m.trees) CHECK(t.depth() <= p.max_depth);
  // same seed, same model
  const auto again = gbdt_fit(X, y, p);
  CHECK((again.predict(X) - m.predict(X)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gbdt: missing values learn a direction") {
  Matrix X(40, 1);
  std::vector<int> y(40);
  for (int i = 0; i < 40; ++i) {
    y[i] = i < 20;
    X(i, 0) = y[i] ? std::nan("") : static_cast<double>(i);
  }
  GbdtParams p;
  p.n_trees = 20;
  p.subsample = 1.0;
  const auto m = gbdt_fit(X, y, p);
  const double miss = std::nan("");
  const double present = 30.0;
  CHECK(m.predict(std::span<const double>(&miss, 1)) > 0.5);
  CHECK(m.predict(std::span<const double>(&present, 1)) < 0.5);
}

TEST_CASE("gbdt: label-independent features give null OOF AUC") {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    const Matrix X = random_matrix(rng, 150, 6);
    const auto y = testing::random_labels(rng, 150);
    const auto plan = stratified_kfold(y, 5, seed);
    std::vector<double> oof(150);
    for (int f = 0; f < 5; ++f) {
      const auto tr = plan.train_positions(f);
      const auto te = plan.test_positions(f);
      GbdtParams p;
      p.n_trees = 50;
      p.seed = seed;
      const auto m = gbdt_fit(gather_rows(X, tr), gather<int>(y, tr), p);
      for (auto r : te) {
        Vector v = X.row(r).transpose();
        oof[r] = m.predict(std::span<const double>(v.data(), v.size()));
      }
    }
    total += auc(oof, y);
  }
  CHECK(std::fabs(total / 10 - 0.5) <= 0.08);
}

TEST_CASE("gbdt: squared loss fits a step") {
  Matrix X(30, 1);
  std::vector<double> y(30);
  for (int i = 0; i < 30; ++i) {
    X(i, 0) = i;
    y[i] = i < 15 ? 1.0 : 3.0;
  }
  GbdtParams p;
  p.loss = GbdtLoss::Squared;
  p.n_trees = 200;
  p.learning_rate = 0.1;
  p.subsample = 1.0;
  const auto m = gbdt_fit(X, y, p);
  const double a = 2.0, b = 25.0;
  CHECK(m.predict(std::span<const double>(&a, 1)) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(m.predict(std::span<const double>(&b, 1)) == doctest::Approx(3.0).epsilon(1e-3));
}
