// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <unistd.h>

#include "nbsep/tensor.hpp"

namespace nbsep::testing {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed,
                                    double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed * 7919 + 17);
  std::uniform_real_distribution<double> uni(lo, hi);
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = uni(rng);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed,
                                         double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed * 104729 + 3);
  std::uniform_real_distribution<double> uni(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = uni(rng);
  return v;
}

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("nbsep_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace nbsep::testing
