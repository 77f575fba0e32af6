#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gph2/error.hpp"

namespace gph2 {

// Row-major dense matrix of doubles. Plain storage for features and
// frozen embeddings; anything that needs gradients lives in a Tensor.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) {
      throw DimensionError("matrix data has " + std::to_string(data.size()) + " values, expected " +
                           std::to_string(r) + "x" + std::to_string(c));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool empty() const { return data.empty(); }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  Matrix transposed() const {
    Matrix t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix select_rows(std::span<const std::size_t> ids) const {
    Matrix out(ids.size(), cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto src = row(ids[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// out = a * b, cache-friendly i-k-j order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw DimensionError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " by " +
                         std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.data.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = a(i, k);
      if (av == 0.0) continue;
      const double* br = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// out = a^T * b without materialising a^T.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) {
    throw DimensionError("matmul_tn: row counts " + std::to_string(a.rows) + " and " + std::to_string(b.rows));
  }
  Matrix out(a.cols, b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* ar = a.data.data() + r * a.cols;
    const double* br = b.data.data() + r * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

}  // namespace gph2
