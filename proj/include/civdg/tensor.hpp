#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "civdg/errors.hpp"

// Debug-mode invariant checking (finiteness after ops, bounds).  On by
// default; defining NDEBUG turns it off.
#ifndef NDEBUG
#define CIVDG_DEBUG_CHECKS 1
#else
#define CIVDG_DEBUG_CHECKS 0
#endif

namespace civdg {

// Dense row-major f64 array.  All numeric state in the project lives in
// these: batches, weights, gradients, moment matrices.
class DenseArray {
 public:
  DenseArray() = default;

  explicit DenseArray(std::vector<std::int64_t> shape);
  DenseArray(std::vector<std::int64_t> shape, std::vector<double> data);

  static DenseArray zeros(std::vector<std::int64_t> shape) {
    return DenseArray(std::move(shape));
  }
  static DenseArray row(std::vector<double> values);

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::size_t i) const { return shape_[i]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // 2-D helpers; throw on rank mismatch.
  std::int64_t rows() const;
  std::int64_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }
  double& at(std::int64_t r, std::int64_t c);
  double at(std::int64_t r, std::int64_t c) const;

  double* row_ptr(std::int64_t r) { return data_.data() + r * cols(); }
  const double* row_ptr(std::int64_t r) const {
    return data_.data() + r * cols();
  }

  bool same_shape(const DenseArray& other) const {
    return shape_ == other.shape_;
  }
  void fill(double v);
  void require_shape(const std::vector<std::int64_t>& shape,
                     const std::string& context) const;

  // Throws NumericalError if any entry is NaN/Inf.
  void check_finite(const std::string& context) const;

  bool bitwise_equal(const DenseArray& other) const;

  std::string shape_str() const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

// Post-op finiteness hook; compiled out of hot paths when NDEBUG is set.
inline void debug_check_finite(const DenseArray& a, const char* context) {
#if CIVDG_DEBUG_CHECKS
  a.check_finite(context);
#else
  (void)a;
  (void)context;
#endif
}

}  // namespace civdg
