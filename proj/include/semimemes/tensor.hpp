#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "semimemes/errors.hpp"

namespace semimemes {

/// Dense row-major matrix. Batches are stored one sample per row.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + shape_string(rows_, cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape() const { return shape_string(rows_, cols_); }

  bool operator==(const Matrix&) const = default;

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.values().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// Throws NumericalError naming `what` if any entry is NaN or infinite.
template <typename T>
const Matrix<T>& require_finite(const Matrix<T>& m, const char* what) {
  if (!all_finite(m.values())) {
    throw NumericalError(std::string("non-finite value produced by ") + what);
  }
  return m;
}

namespace detail {

template <typename T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

// out(n x q) += a(n x p) * b(p x q), ikj order so the inner loop is contiguous.
template <typename T>
void gemm_accumulate(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  const T* bd = b.data();
  T* od = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    T* orow = od + i * q;
    const T* arow = a.data() + i * p;
    for (std::size_t k = 0; k < p; ++k) {
      const T aik = arow[k];
      if (aik == T(0)) continue;
      const T* brow = bd + k * q;
      for (std::size_t j = 0; j < q; ++j) orow[j] += aik * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape() + " x " + b.shape());
  }
  Matrix<T> out(a.rows(), b.cols());
  detail::gemm_accumulate(a, b, out);
  return require_finite(out, "matmul");
}

/// aᵀ·b without materializing the transpose. Used for weight gradients.
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row counts differ, " + a.shape() + " vs " + b.shape());
  }
  const std::size_t p = a.cols(), q = b.cols();
  Matrix<T> out(p, q);
  T* od = out.data();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const T* arow = a.data() + r * p;
    const T* brow = b.data() + r * q;
    for (std::size_t i = 0; i < p; ++i) {
      const T ai = arow[i];
      if (ai == T(0)) continue;
      T* orow = od + i * q;
      for (std::size_t j = 0; j < q; ++j) orow[j] += ai * brow[j];
    }
  }
  return require_finite(out, "matmul_tn");
}

/// a·bᵀ. Used for input gradients through a Linear layer.
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ, " + a.shape() + " vs " + b.shape());
  }
  return matmul(a, transpose(b));
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  detail::require_same_shape(a, b, "add");
  Matrix<T> out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return require_finite(out, "add");
}

template <typename T>
Matrix<T> sub(const Matrix<T>& a, const Matrix<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Matrix<T> out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return require_finite(out, "sub");
}

/// Hadamard product.
template <typename T>
Matrix<T> mul(const Matrix<T>& a, const Matrix<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Matrix<T> out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return require_finite(out, "mul");
}

template <typename T>
Matrix<T> scale(const Matrix<T>& a, T s) {
  Matrix<T> out = a;
  for (auto& v : out.values()) v *= s;
  return require_finite(out, "scale");
}

template <typename T, typename F>
Matrix<T> map(const Matrix<T>& a, F&& f) {
  Matrix<T> out = a;
  for (auto& v : out.values()) v = f(v);
  return require_finite(out, "map");
}

/// Adds a 1 x cols row vector to every row.
template <typename T>
void add_row_inplace(Matrix<T>& a, const Matrix<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " + row.shape());
  }
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = a.row(r);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += row(0, j);
  }
}

template <typename T>
Matrix<T> column_sums(const Matrix<T>& a) {
  Matrix<T> out(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto src = a.row(r);
    for (std::size_t j = 0; j < src.size(); ++j) out(0, j) += src[j];
  }
  return out;
}

/// Column-wise concatenation of equally tall blocks.
template <typename T>
Matrix<T> hconcat(std::span<const Matrix<T>* const> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front()->rows();
  std::size_t cols = 0;
  for (const auto* p : parts) {
    if (p->rows() != rows) throw ShapeError("hconcat: row counts differ");
    cols += p->cols();
  }
  Matrix<T> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.row(r).data();
    for (const auto* p : parts) {
      auto src = p->row(r);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

/// Columns [first, first + count) as a new matrix.
template <typename T>
Matrix<T> column_block(const Matrix<T>& a, std::size_t first, std::size_t count) {
  if (first + count > a.cols()) throw ShapeError("column_block out of range for " + a.shape());
  Matrix<T> out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto src = a.row(r).subspan(first, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace semimemes
