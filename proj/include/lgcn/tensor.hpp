#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgcn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

/// Raised whenever operand shapes disagree. The message names the axis.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles with an explicit shape.
///
/// Spatial feature maps are rank-3 tensors laid out H x W x C, so a map
/// reinterpreted as a (H*W) x C matrix needs no copy. Token sequences and
/// weight matrices are rank 2.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // rank-2 and rank-3 element access; no bounds checks
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t h, std::size_t w, std::size_t c) {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }
  double at(std::size_t h, std::size_t w, std::size_t c) const {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }

  /// Same data, new shape. Element counts must agree.
  Tensor reshaped(Shape shape) const;

  void fill(double v);
  bool all_finite() const;
  /// Elementwise this += alpha * other.
  void axpy(double alpha, const Tensor& other);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Real/imaginary planes of a complex H x W x C grid.
struct ComplexGrid {
  Tensor re;
  Tensor im;
};

void expect_shape(const Tensor& t, const Shape& shape, const char* what);
void expect_rank(const Tensor& t, std::size_t rank, const char* what);
void expect_same_shape(const Tensor& a, const Tensor& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace lgcn
