#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "koa/dataset.hpp"
#include "koa/linalg.hpp"
#include "koa/rng.hpp"
#include "oracles.hpp"

namespace testing {

inline koa::Matrix random_matrix(koa::Rng& rng, int rows, int cols) {
  koa::Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline oracle::Dense dense(const koa::Matrix& m) {
  oracle::Dense d(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) d[i][j] = m(i, j);
  return d;
}

inline std::vector<int> random_labels(koa::Rng& rng, std::size_t n) {
  std::vector<int> y(n);
  for (;;) {
    int pos = 0;
    for (auto& v : y) pos += (v = rng.bernoulli(0.4) ? 1 : 0);
    if (pos > 0 && pos < static_cast<int>(n)) return y;
  }
}

// Scratch directory unique to a test, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() /
            ("koa-test-" + name + "-" + std::to_string(koa::fnv1a64(name) ^ static_cast<unsigned long long>(::getpid())));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

inline koa::KneeRecord knee(const std::string& id, koa::CaseLabel c) {
  koa::KneeRecord r;
  r.knee_id = id;
  r.case_label = c;
  return r;
}

}  // namespace testing
