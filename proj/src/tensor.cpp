#include "dvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "dvae/error.hpp"

namespace dvae {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " holds " +
                     std::to_string(shape_size(shape_)) + " values but " +
                     std::to_string(data_.size()) + " were given");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{1, n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("tensor: ragged row list");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() <= 1) return 1;
  throw ShapeError("tensor: rows() on rank " + std::to_string(shape_.size()));
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  if (shape_.empty()) return 1;
  throw ShapeError("tensor: cols() on rank " + std::to_string(shape_.size()));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("tensor: item() on shape " + shape_string(shape_));
  return data_[0];
}

std::span<const double> Tensor::row_span(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row_span(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::vector<double> Tensor::row_vector(std::size_t r) const {
  auto s = row_span(r);
  return {s.begin(), s.end()};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::transposed() const {
  const std::size_t r = rows(), c = cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data_[j * r + i] = data_[i * c + j];
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected matrix, got " + shape_string(t.shape()));
}

}  // namespace

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
Eigen::Map<RowMat> view(Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out(Shape{n, m});
  if (n && m && k) view(out).noalias() = view(a) * view(b);
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  if (b.rows() != k) throw ShapeError("matmul_tn: " + shape_string(a.shape()) + "^T x " + shape_string(b.shape()));
  Tensor out(Shape{n, m});
  if (n && m && k) view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) throw ShapeError("matmul_nt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  Tensor out(Shape{n, m});
  if (n && m && k) view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double determinant(const Tensor& a) {
  require_matrix(a, "determinant");
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("determinant: non-square " + shape_string(a.shape()));
  Tensor lu = a;
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(lu(r, col)) > std::abs(lu(pivot, col))) pivot = r;
    if (lu(pivot, col) == 0.0) return 0.0;
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(lu(pivot, c), lu(col, c));
      det = -det;
    }
    det *= lu(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu(r, col) / lu(col, col);
      for (std::size_t c = col; c < n; ++c) lu(r, c) -= f * lu(col, c);
    }
  }
  return det;
}

std::vector<double> solve(const Tensor& a, std::span<const double> b) {
  require_matrix(a, "solve");
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw ShapeError("solve: " + shape_string(a.shape()) + " with rhs " + std::to_string(b.size()));
  Tensor lu = a;
  std::vector<double> x(b.begin(), b.end());
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(lu(r, col)) > std::abs(lu(pivot, col))) pivot = r;
    if (lu(pivot, col) == 0.0) throw NumericError("solve: singular matrix");
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(lu(pivot, c), lu(col, c));
      std::swap(x[pivot], x[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu(r, col) / lu(col, col);
      for (std::size_t c = col; c < n; ++c) lu(r, c) -= f * lu(col, c);
      x[r] -= f * x[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double acc = x[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= lu(i, c) * x[c];
    x[i] = acc / lu(i, i);
  }
  return x;
}

}  // namespace dvae
