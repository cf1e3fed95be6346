#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mqvr {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. All arithmetic in the library runs on this type.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  /// Builds a matrix from equally sized rows. Throws ShapeError on ragged input.
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  /// Copy of the rows listed in `indices`, in that order.
  Matrix gather_rows(std::span<const std::size_t> indices) const;
  Matrix transpose() const;
  void fill(double value);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// a (r×n) · b (n×c)
Matrix matmul(const Matrix& a, const Matrix& b);
/// a (r×n) · bᵀ where b is (c×n)
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// aᵀ · b where a is (n×r), b is (n×c)
Matrix matmul_at(const Matrix& a, const Matrix& b);

/// out += scale * in, element-wise; shapes must match.
void axpy(double scale, std::span<const double> in, std::span<double> out);

}  // namespace mqvr
