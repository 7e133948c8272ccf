#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "oracles.hpp"
#include "tcc/tensor.hpp"

namespace testing_support {

inline tcc::Tensor to_tensor(const oracle::Matrix& m) {
  tcc::Tensor t(tcc::Shape{m.size(), m.front().size()});
  for (std::size_t r = 0; r < m.size(); ++r)
    for (std::size_t c = 0; c < m[r].size(); ++c) t(r, c) = m[r][c];
  return t;
}

inline oracle::Matrix to_matrix(const tcc::Tensor& t) {
  oracle::Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tcc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
