#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dvae {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles. Rank 0 is a scalar, rank 2 a matrix.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor row(std::vector<double> values);  // 1 x n
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

  // Rank-2 accessors. A rank-1 tensor is viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::span<const double> row_span(std::size_t r) const;
  std::span<double> row_span(std::size_t r);
  std::vector<double> row_vector(std::size_t r) const;

  Tensor reshaped(Shape shape) const;
  Tensor transposed() const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Plain (non-recorded) kernels shared by the autodiff ops and the value-level code.
Tensor matmul(const Tensor& a, const Tensor& b);     // a * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T

double log_sum_exp(std::span<const double> values);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Determinant of a square matrix (partial-pivot LU).
double determinant(const Tensor& a);

/// Solves a x = b for square a; throws NumericError when a is singular.
std::vector<double> solve(const Tensor& a, std::span<const double> b);

}  // namespace dvae
