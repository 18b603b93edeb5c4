#include "cardiofuse/tensor/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cardiofuse {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("NdArray: shape must have at least one axis");
  for (auto d : shape)
    if (d == 0) throw std::invalid_argument("NdArray: dimensions must be positive, got " + shape_str(shape));
}

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

NdArray::NdArray(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw std::invalid_argument("NdArray: " + std::to_string(data_.size()) + " values do not fill shape " +
                                shape_str(shape_));
}

NdArray NdArray::scalar(double v) { return NdArray({1}, std::vector<double>{v}); }

NdArray NdArray::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return NdArray({n}, std::move(values));
}

NdArray NdArray::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  if (m == 0) throw std::invalid_argument("NdArray::matrix: no rows");
  const std::size_t n = rows.begin()->size();
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw std::invalid_argument("NdArray::matrix: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return NdArray({m, n}, std::move(data));
}

std::size_t NdArray::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw std::out_of_range("NdArray::dim: axis out of range");
  return shape_[axis];
}

std::size_t NdArray::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw std::invalid_argument("NdArray: expected a matrix, got " + shape_str(shape_));
  return shape_[0];
}

std::size_t NdArray::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() != 2) throw std::invalid_argument("NdArray: expected a matrix, got " + shape_str(shape_));
  return shape_[1];
}

double NdArray::item() const {
  if (data_.size() != 1) throw std::invalid_argument("NdArray::item: array has " + std::to_string(size()) + " entries");
  return data_[0];
}

NdArray NdArray::reshaped(Shape shape) const {
  if (shape_size(shape) != size())
    throw std::invalid_argument("NdArray::reshaped: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  return NdArray(std::move(shape), data_);
}

bool NdArray::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void NdArray::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

NdArray& NdArray::operator+=(const NdArray& other) {
  if (other.shape_ != shape_)
    throw std::invalid_argument("NdArray +=: shape " + shape_str(other.shape_) + " vs " + shape_str(shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

NdArray& NdArray::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

double max_abs_diff(const NdArray& a, const NdArray& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace cardiofuse
