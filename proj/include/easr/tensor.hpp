#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "easr/rng.hpp"

namespace easr {

// Error type for operand shape violations. Messages always name both shapes.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major array of 64-bit reals. Rank is dynamic but almost all of
// the model code works with rank-2 tensors (rank-1 vectors are carried as
// 1 x n rows).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), values_(count(shape_), 0.0) {
    check_extents();
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (values_.size() != count(shape_)) {
      throw ShapeError("value count " + std::to_string(values_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }

  static Tensor full(std::size_t r, std::size_t c, double v) {
    Tensor t({r, c});
    for (auto& x : t.values_) x = v;
    return t;
  }

  static Tensor row(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi,
                        Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& x : t.values_) x = rng.uniform(lo, hi);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  std::size_t rows() const {
    require_rank2("rows()");
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2("cols()");
    return shape_[1];
  }

  double& at(std::size_t i) { return values_[i]; }
  double at(std::size_t i) const { return values_[i]; }
  double& at(std::size_t i, std::size_t j) { return values_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return values_[i * shape_[1] + j];
  }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool is_scalar() const { return size() == 1; }
  double scalar() const {
    if (!is_scalar()) {
      throw ShapeError("expected scalar, got shape " + shape_string(shape_));
    }
    return values_[0];
  }

  std::string shape_str() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << "x";
      os << s[i];
    }
    os << "]";
    return os.str();
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return s.empty() ? 0 : n;
  }

  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) {
        throw ShapeError("zero extent in shape " + shape_string(shape_));
      }
    }
  }

  void require_rank2(const char* what) const {
    if (shape_.size() != 2) {
      throw ShapeError(std::string(what) + " needs rank 2, got " +
                       shape_string(shape_));
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

}  // namespace easr
