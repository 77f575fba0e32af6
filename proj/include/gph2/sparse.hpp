#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gph2/dense.hpp"
#include "gph2/error.hpp"

namespace gph2 {

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value = 1.0;
};

enum class Duplicates {
  sum,   // add values of repeated coordinates
  keep,  // keep one entry (first after a stable sort), used for binary edges
};

// Compressed sparse row matrix in canonical form: column indices strictly
// increasing within each row, all in range.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_offsets{0};
  std::vector<std::size_t> col_indices;
  std::vector<double> values;

  SparseMatrix() = default;
  SparseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), row_offsets(r + 1, 0) {}

  std::size_t nnz() const { return col_indices.size(); }

  static SparseMatrix identity(std::size_t n) {
    SparseMatrix m(n, n);
    m.col_indices.resize(n);
    m.values.assign(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      m.row_offsets[i + 1] = i + 1;
      m.col_indices[i] = i;
    }
    return m;
  }

  static SparseMatrix from_triplets(std::size_t r, std::size_t c, std::vector<Triplet> entries,
                                    Duplicates policy = Duplicates::sum) {
    for (const auto& t : entries) {
      if (t.row >= r || t.col >= c) {
        throw DimensionError("triplet (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                             ") outside " + std::to_string(r) + "x" + std::to_string(c));
      }
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    SparseMatrix m(r, c);
    m.col_indices.reserve(entries.size());
    m.values.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& t = entries[i];
      if (i > 0 && entries[i - 1].row == t.row && entries[i - 1].col == t.col) {
        if (policy == Duplicates::sum) m.values.back() += t.value;
        continue;
      }
      m.col_indices.push_back(t.col);
      m.values.push_back(t.value);
      ++m.row_offsets[t.row + 1];
    }
    for (std::size_t i = 0; i < r; ++i) m.row_offsets[i + 1] += m.row_offsets[i];
    return m;
  }

  static SparseMatrix from_dense(const Matrix& d) {
    SparseMatrix m(d.rows, d.cols);
    for (std::size_t i = 0; i < d.rows; ++i) {
      for (std::size_t j = 0; j < d.cols; ++j) {
        if (d(i, j) != 0.0) {
          m.col_indices.push_back(j);
          m.values.push_back(d(i, j));
        }
      }
      m.row_offsets[i + 1] = m.col_indices.size();
    }
    return m;
  }

  Matrix dense() const {
    Matrix d(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k) d(i, col_indices[k]) = values[k];
    return d;
  }

  double at(std::size_t r, std::size_t c) const {
    const auto b = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[r]);
    const auto e = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[r + 1]);
    const auto it = std::lower_bound(b, e, c);
    return (it != e && *it == c) ? values[static_cast<std::size_t>(it - col_indices.begin())] : 0.0;
  }

  SparseMatrix transposed() const {
    SparseMatrix t(cols, rows);
    for (std::size_t c : col_indices) ++t.row_offsets[c + 1];
    for (std::size_t i = 0; i < cols; ++i) t.row_offsets[i + 1] += t.row_offsets[i];
    t.col_indices.resize(nnz());
    t.values.resize(nnz());
    std::vector<std::size_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
    // Rows visited in increasing order keep the output canonical.
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k) {
        const std::size_t pos = cursor[col_indices[k]]++;
        t.col_indices[pos] = i;
        t.values[pos] = values[k];
      }
    }
    return t;
  }

  // Throws if the CSR arrays are not in canonical form.
  void validate() const {
    if (row_offsets.size() != rows + 1 || row_offsets.front() != 0 || row_offsets.back() != nnz() ||
        values.size() != nnz()) {
      throw DimensionError("sparse matrix: inconsistent CSR array lengths");
    }
    for (std::size_t i = 0; i < rows; ++i) {
      if (row_offsets[i] > row_offsets[i + 1]) throw DimensionError("sparse matrix: row offsets decrease");
      for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k) {
        if (col_indices[k] >= cols) throw DimensionError("sparse matrix: column index out of range");
        if (k > row_offsets[i] && col_indices[k] <= col_indices[k - 1]) {
          throw DimensionError("sparse matrix: row " + std::to_string(i) + " not strictly increasing");
        }
      }
    }
  }

  bool is_symmetric() const {
    if (rows != cols) return false;
    const SparseMatrix t = transposed();
    return t.col_indices == col_indices && t.values == values && t.row_offsets == row_offsets;
  }

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;
};

// out = a * x for dense x.
inline Matrix spmm(const SparseMatrix& a, const Matrix& x) {
  if (a.cols != x.rows) {
    throw DimensionError("spmm: adjacency " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                         " against " + std::to_string(x.rows) + "x" + std::to_string(x.cols));
  }
  Matrix out(a.rows, x.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.data.data() + i * x.cols;
    for (std::size_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
      const double v = a.values[k];
      const double* xr = x.data.data() + a.col_indices[k] * x.cols;
      for (std::size_t j = 0; j < x.cols; ++j) o[j] += v * xr[j];
    }
  }
  return out;
}

// Binary product: entry (i, j) is 1 iff some k has a(i,k) != 0 and b(k,j) != 0.
// Computed row by row with a marker array, so memory stays O(output).
inline SparseMatrix boolean_product(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.cols != b.rows) {
    throw DimensionError("boolean_product: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " by " +
                         std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  SparseMatrix out(a.rows, b.cols);
  std::vector<std::size_t> marker(b.cols, SIZE_MAX);
  std::vector<std::size_t> row_cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    row_cols.clear();
    for (std::size_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
      if (a.values[k] == 0.0) continue;
      const std::size_t mid = a.col_indices[k];
      for (std::size_t q = b.row_offsets[mid]; q < b.row_offsets[mid + 1]; ++q) {
        const std::size_t j = b.col_indices[q];
        if (b.values[q] == 0.0 || marker[j] == i) continue;
        marker[j] = i;
        row_cols.push_back(j);
      }
    }
    std::sort(row_cols.begin(), row_cols.end());
    out.col_indices.insert(out.col_indices.end(), row_cols.begin(), row_cols.end());
    out.row_offsets[i + 1] = out.col_indices.size();
  }
  out.values.assign(out.nnz(), 1.0);
  return out;
}

// Binary union of a and a^T with the diagonal removed.
inline SparseMatrix symmetrize_binary(const SparseMatrix& a) {
  if (a.rows != a.cols) throw DimensionError("symmetrize_binary: matrix is not square");
  std::vector<Triplet> entries;
  entries.reserve(2 * a.nnz());
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
      const std::size_t j = a.col_indices[k];
      if (i == j || a.values[k] == 0.0) continue;
      entries.push_back({i, j, 1.0});
      entries.push_back({j, i, 1.0});
    }
  }
  return SparseMatrix::from_triplets(a.rows, a.cols, std::move(entries), Duplicates::keep);
}

}  // namespace gph2
