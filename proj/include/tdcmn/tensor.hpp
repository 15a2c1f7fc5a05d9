#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tdcmn/error.hpp"

namespace tdcmn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Plain value type; differentiation
/// lives on the tape (see autodiff.hpp).
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(shape_numel(shape), fill) {
    check_dims();
  }

  Tensor(Shape s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    check_dims();
    if (data.size() != shape_numel(shape)) {
      throw DimensionError("tensor of shape " + shape_str(shape) +
                           " needs " + std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    }
  }

  /// Row-major matrix literal: Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data[r * shape[1] + c];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  std::span<const double> values() const { return data; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_dims() const {
    for (std::size_t d : shape) {
      if (d == 0) {
        throw DimensionError("tensor dimensions must be positive, got " +
                             shape_str(shape));
      }
    }
  }
};

/// Splits `shape` around `axis` into (outer, length, inner) strides so that
/// element (o, k, i) lives at (o * length + k) * inner + i.
struct AxisView {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;

  AxisView(const Shape& shape, std::size_t axis) {
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    length = shape[axis];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  }

  std::size_t index(std::size_t o, std::size_t k, std::size_t i) const {
    return (o * length + k) * inner + i;
  }
};

}  // namespace tdcmn
