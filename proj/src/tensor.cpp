#include "lgcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace lgcn {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

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

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (shape_[i] == 0) {
      throw ShapeError("tensor axis " + std::to_string(i) + " has zero extent");
    }
  }
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " needs " + std::to_string(product(shape_)) +
                     " scalars, got " + std::to_string(data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (product(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::axpy(double alpha, const Tensor& other) {
  expect_same_shape(*this, other, "axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
}

void expect_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

void expect_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.rank() != shape.size()) {
    throw ShapeError(std::string(what) + ": expected shape " + shape_str(shape) + ", got " + shape_str(t.shape()));
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (t.shape()[i] != shape[i]) {
      throw ShapeError(std::string(what) + ": axis " + std::to_string(i) + " is " + std::to_string(t.shape()[i]) +
                       ", expected " + std::to_string(shape[i]));
    }
  }
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* what) { expect_shape(b, a.shape(), what); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace lgcn
