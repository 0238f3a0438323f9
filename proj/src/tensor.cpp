#include "civdg/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace civdg {
namespace {

std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw ValidationError("DenseArray: nonpositive dimension");
    n *= d;
  }
  return n;
}

}  // namespace

DenseArray::DenseArray(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(checked_numel(shape_)), 0.0) {}

DenseArray::DenseArray(std::vector<std::int64_t> shape,
                       std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw DimensionError("DenseArray: data length " +
                         std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
  }
  check_finite("DenseArray construction");
}

DenseArray DenseArray::row(std::vector<double> values) {
  const auto n = static_cast<std::int64_t>(values.size());
  return DenseArray({1, n}, std::move(values));
}

std::int64_t DenseArray::rows() const {
  if (ndim() != 2) throw DimensionError("rows(): array is not 2-D");
  return shape_[0];
}

std::int64_t DenseArray::cols() const {
  if (ndim() != 2) throw DimensionError("cols(): array is not 2-D");
  return shape_[1];
}

double& DenseArray::at(std::int64_t r, std::int64_t c) {
#if CIVDG_DEBUG_CHECKS
  if (r < 0 || r >= rows() || c < 0 || c >= cols())
    throw DimensionError("at(): index out of range");
#endif
  return data_[static_cast<std::size_t>(r * cols() + c)];
}

double DenseArray::at(std::int64_t r, std::int64_t c) const {
  return const_cast<DenseArray*>(this)->at(r, c);
}

void DenseArray::fill(double v) {
  for (double& x : data_) x = v;
}

void DenseArray::require_shape(const std::vector<std::int64_t>& shape,
                               const std::string& context) const {
  if (shape_ != shape) {
    DenseArray expected;
    expected.shape_ = shape;
    throw DimensionError(context + ": expected shape " + expected.shape_str() +
                         ", got " + shape_str());
  }
}

void DenseArray::check_finite(const std::string& context) const {
  for (double x : data_) {
    if (!std::isfinite(x)) {
      throw NumericalError(context + ": non-finite value in array of shape " +
                           shape_str());
    }
  }
}

bool DenseArray::bitwise_equal(const DenseArray& other) const {
  if (shape_ != other.shape_) return false;
  if (data_.empty()) return true;
  return std::memcmp(data_.data(), other.data_.data(),
                     data_.size() * sizeof(double)) == 0;
}

std::string DenseArray::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i > 0) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

}  // namespace civdg
