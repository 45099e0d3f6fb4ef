#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace batman {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand extents do not fit an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation meets NaN or infinite values it cannot order.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles.
///
/// Tensors are immutable once built: the payload is shared between copies and
/// every kernel returns a fresh tensor. Build a std::vector<double>, then move
/// it in.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_list(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_->size(); }

  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  const double* raw() const { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  /// Same payload viewed under a new shape with the same element count.
  Tensor reshape(Shape shape) const;

  bool requires_grad() const { return requires_grad_; }
  Tensor with_requires_grad(bool flag) const;

  std::vector<double> to_vector() const { return *data_; }
  bool all_finite() const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  bool requires_grad_ = false;
};

/// Exact bitwise equality of shape and payload.
bool identical(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

void require_shape(const Tensor& t, const Shape& expected, const char* what);
void require_ndim(const Tensor& t, std::size_t ndim, const char* what);

}  // namespace batman
