#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hanerf/errors.hpp"
#include "hanerf/rng.hpp"

namespace hanerf {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw ConfigError("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major array. All intermediate activations, parameters and
// gradients live in these; float for training, double for gradient checks.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape)) {}
  Tensor(Shape s, T fill)
      : shape(std::move(s)), data(shape_numel(shape), fill) {}

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

  static Tensor from(Shape s, std::initializer_list<T> vals) {
    Tensor t(std::move(s));
    if (static_cast<int64_t>(vals.size()) != t.numel())
      throw ConfigError("initializer size does not match shape");
    std::copy(vals.begin(), vals.end(), t.data.begin());
    return t;
  }

  static Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(Shape s, Rng& rng, double stddev) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  T& at2(int64_t r, int64_t c) { return data[r * shape[1] + c]; }
  const T& at2(int64_t r, int64_t c) const { return data[r * shape[1] + c]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (int64_t i = 0; i < numel(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <class T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape;
}

}  // namespace hanerf
