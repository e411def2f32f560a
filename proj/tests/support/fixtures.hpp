#pragma once

#include <atomic>
#include <functional>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <gtest/gtest.h>

#include "emutriage/error.hpp"
#include "emutriage/features.hpp"
#include "emutriage/io.hpp"
#include "emutriage/rng.hpp"

namespace emutriage::testing {

inline std::filesystem::path data_path(const std::string& relative) {
  return std::filesystem::path(EMUTRIAGE_TEST_DATA) / relative;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("emutriage-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// The ErrorCode `fn` throws; records a test failure when it throws nothing.
inline ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no Error thrown";
  return ErrorCode::IoError;
}

struct Labeled {
  SparseMatrix x;
  LabelVector y;
};

/// 400 rows x 100 uniform {0..4} columns; the label is sum(cols 0..4) > 10,
/// so only the first five columns carry signal.
inline Labeled boruta_fixture(std::uint64_t seed, std::size_t n_rows = 400, std::size_t n_noise = 95) {
  Rng rng(derive_seed(seed, 0xf1));
  const std::size_t n_cols = 5 + n_noise;
  std::vector<std::vector<double>> dense(n_rows, std::vector<double>(n_cols));
  std::vector<std::string> names;
  for (auto& row : dense) {
    double sum = 0.0;
    for (std::size_t c = 0; c < n_cols; ++c) {
      row[c] = static_cast<double>(rng.uniform_index(5));
      if (c < 5) sum += row[c];
    }
    names.push_back(sum > 10.0 ? "malicious" : "benign");
  }
  return {SparseMatrix::from_dense(dense), LabelVector::from_names(names)};
}

/// Small integer-valued matrix with ties and zeros, for split oracles.
inline Labeled random_small(std::uint64_t seed, std::size_t rows, std::size_t cols, std::size_t classes) {
  Rng rng(seed);
  std::vector<std::vector<double>> dense(rows, std::vector<double>(cols));
  std::vector<std::string> names;
  for (auto& row : dense) {
    for (auto& v : row) v = static_cast<double>(rng.uniform_index(4));
    names.push_back("c" + std::to_string(rng.uniform_index(classes)));
  }
  return {SparseMatrix::from_dense(dense), LabelVector::from_names(names)};
}

}  // namespace emutriage::testing
