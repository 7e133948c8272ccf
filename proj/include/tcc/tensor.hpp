#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tcc/error.hpp"

namespace tcc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. A rank-0 tensor holds one scalar.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  /// Builds a matrix from nested rows, e.g. `Tensor::from_rows({{1, 2}, {3, 4}})`.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t n = rows.size();
    const std::size_t m = n == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(n * m);
    for (const auto& r : rows) {
      if (r.size() != m) throw ShapeError("ragged rows");
      values.insert(values.end(), r.begin(), r.end());
    }
    return matrix(n, m, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rows() const { return rank() == 2 ? shape_[0] : throw ShapeError("rows() on " + shape_str(shape_)); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : throw ShapeError("cols() on " + shape_str(shape_)); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
  }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * shape_[1], shape_[1]); }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace tcc
