#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fusedet/core/error.hpp"
#include "fusedet/core/rng.hpp"

namespace fusedet {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor with value semantics. Scalar type T is float for
// training and double for oracle/gradient-check precision.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
  Tensor(Shape s, T fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }
  static Tensor scalar(T v) { return Tensor(Shape{}, v); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // 4D accessor (B, C, H, W); hot loops index manually.
  T& at4(int64_t b, int64_t c, int64_t h, int64_t w) {
    return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at4(int64_t b, int64_t c, int64_t h, int64_t w) const {
    return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T& at2(int64_t i, int64_t j) { return data[i * shape[1] + j]; }
  const T& at2(int64_t i, int64_t j) const { return data[i * shape[1] + j]; }
  T& at3(int64_t i, int64_t j, int64_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  const T& at3(int64_t i, int64_t j, int64_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data[static_cast<size_t>(i)]);
    return out;
  }

  T abs_max() const {
    T m = 0;
    for (T v : data) m = std::max(m, std::abs(v));
    return m;
  }
  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <class T>
Tensor<T> random_normal(const Shape& s, Rng& rng, double mean = 0.0, double std = 1.0) {
  Tensor<T> t(s);
  for (auto& v : t.data) v = static_cast<T>(rng.normal(mean, std));
  return t;
}

template <class T>
Tensor<T> random_uniform(const Shape& s, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(s);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape == b.shape, "max_abs_diff: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace fusedet
