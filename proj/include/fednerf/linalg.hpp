#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fednerf {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix transposed() const;
  double frobenius_norm() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);

/// Throws std::invalid_argument naming the first non-finite entry.
void require_finite(const Matrix& m, const std::string& what);

/// Thin SVD W = U diag(s) Vᵀ with k = min(rows, cols).
struct SvdResult {
  Matrix left;                  // u×k, orthonormal columns
  std::vector<double> singular; // k, non-increasing, ≥ 0
  Matrix right;                 // v×k, orthonormal columns
};

/// One-sided Jacobi SVD. Each left singular vector is signed so that its
/// largest-magnitude entry is non-negative.
SvdResult svd(const Matrix& w);

/// Smallest r with (s_1 + ... + s_r) / (s_1 + ... + s_n) >= alpha.
std::size_t select_rank(std::span<const double> singular, double alpha);

struct LowRankFactors {
  Matrix left;  // u×r, U_r diag(s_r)
  Matrix right; // r×v, V_rᵀ
};

LowRankFactors truncate(const SvdResult& decomposition, std::size_t rank);

/// argmin_Γ ‖merged − Γ·right‖_F via Householder QR of rightᵀ.
/// Throws std::invalid_argument when `right` lacks full row rank.
Matrix refactor_lstsq(const Matrix& merged, const Matrix& right);

}  // namespace fednerf
