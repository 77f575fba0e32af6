#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "gph2/dense.hpp"
#include "gph2/error.hpp"
#include "gph2/rng.hpp"

namespace gph2 {

struct SvdOptions {
  std::size_t oversample = 10;
  int power_iterations = 4;
};

// Rank-k factorisation a ~= u * diag(s) * v^T, singular values descending.
struct TruncatedSvd {
  Matrix u;                    // n x k, orthonormal columns
  std::vector<double> s;       // k
  Matrix v;                    // d x k, orthonormal columns
};

namespace detail {

// Orthonormalises the rows of m in place (classical Gram-Schmidt, applied
// twice). Rows that vanish numerically are set to zero rather than filled
// with noise.
inline void orthonormalize_rows(Matrix& m) {
  double max_norm = 0.0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (double v : m.row(i)) s += v * v;
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  const double tiny = 1e-12 * max_norm;
  for (std::size_t j = 0; j < m.rows; ++j) {
    auto rj = m.row(j);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < j; ++i) {
        const auto ri = m.row(i);
        double dot = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) dot += ri[c] * rj[c];
        for (std::size_t c = 0; c < m.cols; ++c) rj[c] -= dot * ri[c];
      }
    }
    double norm = 0.0;
    for (double v : rj) norm += v * v;
    norm = std::sqrt(norm);
    if (norm <= tiny || norm == 0.0) {
      std::fill(rj.begin(), rj.end(), 0.0);
    } else {
      for (double& v : rj) v /= norm;
    }
  }
}

inline Matrix orthonormal_columns(const Matrix& m) {
  Matrix t = m.transposed();
  orthonormalize_rows(t);
  return t.transposed();
}

// One-sided Jacobi on the rows of b (l x d, l <= d). On return the rows of b
// are mutually orthogonal and rot (l x l) holds the accumulated rotation, so
// that b_in = rot * b_out.
inline void jacobi_orthogonalize_rows(Matrix& b, Matrix& rot) {
  const std::size_t l = b.rows;
  rot = Matrix::identity(l);
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < l; ++p) {
      for (std::size_t q = p + 1; q < l; ++q) {
        auto bp = b.row(p);
        auto bq = b.row(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t c = 0; c < b.cols; ++c) {
          alpha += bp[c] * bp[c];
          beta += bq[c] * bq[c];
          gamma += bp[c] * bq[c];
        }
        if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t c = 0; c < b.cols; ++c) {
          const double x = bp[c], y = bq[c];
          bp[c] = cs * x - sn * y;
          bq[c] = sn * x + cs * y;
        }
        for (std::size_t r = 0; r < l; ++r) {
          const double x = rot(r, p), y = rot(r, q);
          rot(r, p) = cs * x - sn * y;
          rot(r, q) = sn * x + cs * y;
        }
      }
    }
    if (!rotated) break;
  }
}

}  // namespace detail

// Randomised truncated SVD with a seeded Gaussian test matrix and power
// iterations. k is clamped to min(rows, cols).
inline TruncatedSvd randomized_svd(const Matrix& a, std::size_t k, std::uint64_t seed, SvdOptions opts = {}) {
  if (!a.all_finite()) throw NumericError("randomized_svd: non-finite input");
  const std::size_t n = a.rows, d = a.cols;
  k = std::min({k, n, d});
  TruncatedSvd out{Matrix(n, k), std::vector<double>(k, 0.0), Matrix(d, k)};
  if (k == 0) return out;
  const std::size_t l = std::min(k + opts.oversample, std::min(n, d));

  Rng rng(seed);
  Matrix omega(d, l);
  for (double& v : omega.data) v = rng.normal();

  Matrix q = detail::orthonormal_columns(matmul(a, omega));
  for (int it = 0; it < opts.power_iterations; ++it) {
    const Matrix z = detail::orthonormal_columns(matmul_tn(a, q));
    q = detail::orthonormal_columns(matmul(a, z));
  }

  Matrix b = matmul_tn(q, a);  // l x d
  Matrix rot;
  detail::jacobi_orthogonalize_rows(b, rot);

  std::vector<double> sigma(l);
  for (std::size_t i = 0; i < l; ++i) {
    double s = 0.0;
    for (double v : b.row(i)) s += v * v;
    sigma[i] = std::sqrt(s);
  }
  std::vector<std::size_t> order(l);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const Matrix qrot = matmul(q, rot);  // n x l, left singular vectors
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t src = order[c];
    const double s = sigma[src];
    out.s[c] = s;
    // Sign convention: largest-magnitude entry of each left vector is positive.
    double big = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(qrot(i, src)) > std::abs(big)) big = qrot(i, src);
    }
    const double sign = big < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out.u(i, c) = sign * qrot(i, src);
    if (s > 0) {
      for (std::size_t j = 0; j < d; ++j) out.v(j, c) = sign * b(src, j) / s;
    }
  }
  return out;
}

// Projects features onto target_dim columns as U*Sigma of a truncated SVD.
// Inputs already at or below target_dim are zero-padded instead; when fewer
// than target_dim components exist (n < target_dim) the tail is zero.
inline Matrix svd_project(const Matrix& features, std::size_t target_dim, std::uint64_t seed, SvdOptions opts = {}) {
  if (!features.all_finite()) throw NumericError("svd_project: non-finite features");
  Matrix out(features.rows, target_dim);
  if (features.cols <= target_dim) {
    for (std::size_t i = 0; i < features.rows; ++i)
      for (std::size_t j = 0; j < features.cols; ++j) out(i, j) = features(i, j);
    return out;
  }
  const TruncatedSvd svd = randomized_svd(features, target_dim, seed, opts);
  for (std::size_t i = 0; i < features.rows; ++i)
    for (std::size_t c = 0; c < svd.s.size(); ++c) out(i, c) = svd.u(i, c) * svd.s[c];
  return out;
}

}  // namespace gph2
