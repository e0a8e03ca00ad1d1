#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "cg3/errors.hpp"

namespace cg3 {

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(rows_, cols_));
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged initializer for Matrix");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape() const { return shape_str(rows_, cols_); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }

  // this += alpha * o
  void add_scaled(const Matrix& o, double alpha) {
    require_same_shape(o, "add_scaled");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += alpha * o.data_[k];
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

  static std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

 private:
  void require_same_shape(const Matrix& o, const char* what) const {
    if (!same_shape(o))
      throw DimensionError(std::string(what) + ": shape " + shape() + " vs " + o.shape());
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("max_abs_diff: " + a.shape() + " vs " + b.shape());
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    d = std::max(d, std::abs(a.values()[k] - b.values()[k]));
  return d;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

namespace kernels {

// out = a * b. Row i of the result accumulates a(i,k) * b(k,:) for k ascending,
// skipping zero a(i,k); the CSR kernel below follows the same order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + a.shape() + " x " + b.shape());
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    const double* ar = a.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double v = ar[k];
      if (v == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += v * br[j];
    }
  }
  return out;
}

// out = a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: " + a.shape() + "^T x " + b.shape());
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    const double* br = b.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double v = ar[k];
      if (v == 0.0) continue;
      double* o = out.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += v * br[j];
    }
  }
  return out;
}

// out = a * b^T, accumulated in the same k-ascending order as matmul.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + a.shape() + " x " + b.shape() + "^T");
  return matmul(a, transpose(b));
}

}  // namespace kernels

/// Compressed sparse row matrix. Column indices are strictly increasing within a row.
class SparseMatrix {
 public:
  struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
  };

  SparseMatrix() : offsets_(1, 0) {}

  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> offsets,
               std::vector<std::size_t> indices, std::vector<double> values)
      : rows_(rows),
        cols_(cols),
        offsets_(std::move(offsets)),
        indices_(std::move(indices)),
        values_(std::move(values)) {
    validate();
  }

  // Duplicate coordinates are summed.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<Triplet> triplets) {
    for (const auto& t : triplets)
      if (t.row >= rows || t.col >= cols)
        throw DimensionError("triplet (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                             ") outside " + Matrix::shape_str(rows, cols));
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    std::vector<std::size_t> offsets(rows + 1, 0);
    std::vector<std::size_t> indices;
    std::vector<double> values;
    indices.reserve(triplets.size());
    values.reserve(triplets.size());
    for (std::size_t k = 0; k < triplets.size(); ++k) {
      const auto& t = triplets[k];
      if (k > 0 && triplets[k - 1].row == t.row && triplets[k - 1].col == t.col) {
        values.back() += t.value;
        continue;
      }
      indices.push_back(t.col);
      values.push_back(t.value);
      ++offsets[t.row + 1];
    }
    for (std::size_t i = 0; i < rows; ++i) offsets[i + 1] += offsets[i];
    return SparseMatrix(rows, cols, std::move(offsets), std::move(indices), std::move(values));
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<std::size_t> offsets(n + 1);
    std::vector<std::size_t> indices(n);
    for (std::size_t i = 0; i <= n; ++i) offsets[i] = i;
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;
    return SparseMatrix(n, n, std::move(offsets), std::move(indices), std::vector<double>(n, 1.0));
  }

  static SparseMatrix from_dense(const Matrix& m) {
    std::vector<Triplet> t;
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j)
        if (m(i, j) != 0.0) t.push_back({i, j, m(i, j)});
    return from_triplets(m.rows(), m.cols(), std::move(t));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return indices_.size(); }
  std::string shape() const { return Matrix::shape_str(rows_, cols_); }

  std::span<const std::size_t> offsets() const noexcept { return offsets_; }
  std::span<const std::size_t> indices() const noexcept { return indices_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<const std::size_t> row_indices(std::size_t i) const noexcept {
    return {indices_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::span<const double> row_values(std::size_t i) const noexcept {
    return {values_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  // Stored value at (i, j), 0 when absent.
  double at(std::size_t i, std::size_t j) const {
    auto idx = row_indices(i);
    auto it = std::lower_bound(idx.begin(), idx.end(), j);
    if (it == idx.end() || *it != j) return 0.0;
    return row_values(i)[static_cast<std::size_t>(it - idx.begin())];
  }
  bool contains(std::size_t i, std::size_t j) const {
    auto idx = row_indices(i);
    return std::binary_search(idx.begin(), idx.end(), j);
  }

  Matrix densify() const {
    Matrix d(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) d(i, indices_[p]) = values_[p];
    return d;
  }

  SparseMatrix transposed() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p)
        t.push_back({indices_[p], i, values_[p]});
    return from_triplets(cols_, rows_, std::move(t));
  }

  // out = this * b
  Matrix multiply(const Matrix& b) const {
    if (cols_ != b.rows()) throw DimensionError("spmm: " + shape() + " x " + b.shape());
    Matrix out(rows_, b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < rows_; ++i) {
      double* o = out.row(i).data();
      for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) {
        const double v = values_[p];
        if (v == 0.0) continue;
        const double* br = b.row(indices_[p]).data();
        for (std::size_t j = 0; j < n; ++j) o[j] += v * br[j];
      }
    }
    return out;
  }

  // out = this^T * g, scattered row by row.
  Matrix multiply_transposed(const Matrix& g) const {
    if (rows_ != g.rows()) throw DimensionError("spmm^T: " + shape() + "^T x " + g.shape());
    Matrix out(cols_, g.cols());
    const std::size_t n = g.cols();
    for (std::size_t i = 0; i < rows_; ++i) {
      const double* gr = g.row(i).data();
      for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) {
        const double v = values_[p];
        double* o = out.row(indices_[p]).data();
        for (std::size_t j = 0; j < n; ++j) o[j] += v * gr[j];
      }
    }
    return out;
  }

  // Returns the first (i, j) with at(i,j) != at(j,i), if any.
  std::optional<std::pair<std::size_t, std::size_t>> first_asymmetry(double tol = 0.0) const {
    if (rows_ != cols_) return std::pair<std::size_t, std::size_t>{rows_, cols_};
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) {
        const std::size_t j = indices_[p];
        if (std::abs(values_[p] - at(j, i)) > tol) return std::pair{i, j};
      }
    return std::nullopt;
  }

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  void validate() const {
    if (offsets_.size() != rows_ + 1 || offsets_.front() != 0 || offsets_.back() != indices_.size() ||
        indices_.size() != values_.size())
      throw ValidationError("malformed CSR structure for " + shape());
    for (std::size_t i = 0; i < rows_; ++i) {
      if (offsets_[i] > offsets_[i + 1])
        throw ValidationError("CSR offsets decrease at row " + std::to_string(i));
      for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) {
        if (indices_[p] >= cols_)
          throw ValidationError("CSR column " + std::to_string(indices_[p]) + " out of range");
        if (p > offsets_[i] && indices_[p] <= indices_[p - 1])
          throw ValidationError("CSR columns not strictly increasing in row " + std::to_string(i));
      }
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> indices_;
  std::vector<double> values_;
};

}  // namespace cg3
