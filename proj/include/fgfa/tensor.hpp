#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

#include "fgfa/errors.hpp"
#include "fgfa/rng.hpp"

namespace fgfa {

// Dense row-major numeric array of rank 1..4. Feature maps are [C,H,W],
// flow fields [2,H,W], weight maps [H,W], conv kernels [C_out,C_in,kh,kw].
// Storage is float in the production pipeline; the double instantiation
// backs the gradient-check harness.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> dims) : dims_(std::move(dims)) {
    validate_dims();
    data_.assign(numel(), T(0));
  }

  TensorT(std::vector<int> dims, std::vector<T> values)
      : dims_(std::move(dims)), data_(std::move(values)) {
    validate_dims();
    if (data_.size() != numel())
      throw ConfigError("Tensor: value count does not match dims");
  }

  static TensorT full(std::vector<int> dims, T value) {
    TensorT t(std::move(dims));
    for (auto& v : t.data_) v = value;
    return t;
  }

  static TensorT random_normal(std::vector<int> dims, Rng& rng,
                               double mean = 0.0, double stddev = 1.0) {
    TensorT t(std::move(dims));
    for (auto& v : t.data_) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }

  static TensorT random_uniform(std::vector<int> dims, Rng& rng,
                                double lo = 0.0, double hi = 1.0) {
    TensorT t(std::move(dims));
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& dims() const { return dims_; }
  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : dims_) n *= static_cast<std::size_t>(d);
    return n;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // Rank-specific accessors; indices are not bounds-checked in release builds.
  T& at2(int y, int x) { return data_[idx2(y, x)]; }
  T at2(int y, int x) const { return data_[idx2(y, x)]; }
  T& at3(int c, int y, int x) { return data_[idx3(c, y, x)]; }
  T at3(int c, int y, int x) const { return data_[idx3(c, y, x)]; }
  T& at4(int a, int b, int c, int d) { return data_[idx4(a, b, c, d)]; }
  T at4(int a, int b, int c, int d) const { return data_[idx4(a, b, c, d)]; }

  std::size_t idx2(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(dims_[1]) +
           static_cast<std::size_t>(x);
  }
  std::size_t idx3(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(dims_[1]) +
            static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(dims_[2]) +
           static_cast<std::size_t>(x);
  }
  std::size_t idx4(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * static_cast<std::size_t>(dims_[1]) +
             static_cast<std::size_t>(b)) *
                static_cast<std::size_t>(dims_[2]) +
            static_cast<std::size_t>(c)) *
               static_cast<std::size_t>(dims_[3]) +
           static_cast<std::size_t>(d);
  }

  bool same_shape(const TensorT& other) const { return dims_ == other.dims_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  void validate_dims() const {
    if (dims_.empty() || dims_.size() > 4)
      throw ConfigError("Tensor: rank must be between 1 and 4");
    for (int d : dims_)
      if (d < 1) throw ConfigError("Tensor: all extents must be >= 1");
  }

  std::vector<int> dims_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Exact bit-level equality (distinguishes -0.0 from 0.0, compares NaN bits).
template <typename T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), a.numel() * sizeof(T)) == 0;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) throw ConfigError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename Dst, typename Src>
TensorT<Dst> cast_tensor(const TensorT<Src>& t) {
  std::vector<Dst> v(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) v[i] = static_cast<Dst>(t[i]);
  return TensorT<Dst>(t.dims(), std::move(v));
}

}  // namespace fgfa
