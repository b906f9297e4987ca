#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dsnerv/common.hpp"

namespace dsnerv {

inline std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major tensor. Scalar is float for the command-line artifacts and
// double where tests need tight numeric tolerances.
template <typename Scalar>
struct Tensor {
  std::vector<int> shape;
  std::vector<Scalar> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(count(shape)), Scalar(0));
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw ShapeMismatch("negative dimension in " + shape_to_string(s));
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  int rank() const { return static_cast<int>(shape.size()); }

  Scalar* ptr() { return data.data(); }
  const Scalar* ptr() const { return data.data(); }

  Scalar& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const Scalar& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  void fill(Scalar v) { std::fill(data.begin(), data.end(), v); }

  void zero() { fill(Scalar(0)); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  // 3-d accessor (c, y, x) for feature maps.
  Scalar& at(int c, int y, int x) {
    return data[(static_cast<int64_t>(c) * shape[1] + y) * shape[2] + x];
  }
  const Scalar& at(int c, int y, int x) const {
    return data[(static_cast<int64_t>(c) * shape[1] + y) * shape[2] + x];
  }

  // 4-d accessor (a, b, y, x) for code grids and conv weights.
  Scalar& at(int a, int b, int y, int x) {
    return data[((static_cast<int64_t>(a) * shape[1] + b) * shape[2] + y) * shape[3] + x];
  }
  const Scalar& at(int a, int b, int y, int x) const {
    return data[((static_cast<int64_t>(a) * shape[1] + b) * shape[2] + y) * shape[3] + x];
  }

  bool all_finite() const {
    for (const Scalar& v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

template <typename Scalar>
void check_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(where) + ": " + shape_to_string(a.shape) +
                        " vs " + shape_to_string(b.shape));
  }
}

}  // namespace dsnerv
