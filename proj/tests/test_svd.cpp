#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "gph2/graph.hpp"
#include "gph2/svd.hpp"
#include "support/synthetic.hpp"

using namespace gph2;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
  return e;
}

// Singular values from the eigenvalues of the Gram matrix, descending.
std::vector<double> gram_singular_values(const Matrix& a) {
  const Eigen::MatrixXd e = to_eigen(a);
  const Eigen::MatrixXd gram = e.rows() <= e.cols() ? Eigen::MatrixXd(e * e.transpose())
                                                    : Eigen::MatrixXd(e.transpose() * e);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  std::vector<double> s;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) s.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
  std::sort(s.rbegin(), s.rend());
  return s;
}

}  // namespace

TEST(Svd, RankOneReconstruction) {
  const std::vector<double> a{1, -2, 0.5, 3}, b{0.3, 1, -1, 2, 0.25};
  Matrix m(4, 5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) m(i, j) = a[i] * b[j];
  const auto svd = randomized_svd(m, 1, 7);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(svd.u(i, 0) * svd.s[0] * svd.v(j, 0), m(i, j), 1e-8);
}

TEST(Svd, TopValuesOfWideMatrixMatchGramOracle) {
  // A 50x200 matrix has at most 50 non-zero singular values; asking for 128
  // components yields those 50 followed by zero columns.
  Rng rng(11);
  const Matrix m = testing_support::random_matrix(50, 200, rng);
  const auto oracle = gram_singular_values(m);
  const auto svd = randomized_svd(m, 128, 3);
  ASSERT_EQ(svd.s.size(), 50u);
  for (std::size_t k = 0; k < 50; ++k) EXPECT_NEAR(svd.s[k], oracle[k], 1e-6) << "k=" << k;

  const Matrix proj = svd_project(m, 128, 3);
  ASSERT_EQ(proj.cols, 128u);
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t c = 50; c < 128; ++c) EXPECT_EQ(proj(i, c), 0.0);
}

TEST(Svd, TallMatrixTruncationMatchesGramOracle) {
  Rng rng(12);
  Matrix m = testing_support::random_matrix(300, 40, rng);
  // Give the spectrum a decaying shape so truncation is meaningful.
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) *= std::pow(0.85, static_cast<double>(j));
  const auto oracle = gram_singular_values(m);
  const auto svd = randomized_svd(m, 16, 5);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(svd.s[k], oracle[k], 1e-6 * oracle[0]);
}

TEST(Svd, FactorsAreOrthonormalAndSignFixed) {
  Rng rng(13);
  const Matrix m = testing_support::random_matrix(30, 20, rng);
  const auto svd = randomized_svd(m, 10, 9);
  const Matrix utu = matmul_tn(svd.u, svd.u), vtv = matmul_tn(svd.v, svd.v);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) {
      EXPECT_NEAR(utu(i, j), i == j ? 1.0 : 0.0, 1e-10);
      EXPECT_NEAR(vtv(i, j), i == j ? 1.0 : 0.0, 1e-10);
    }
  for (std::size_t c = 0; c < 10; ++c) {
    double big = 0;
    for (std::size_t i = 0; i < 30; ++i)
      if (std::abs(svd.u(i, c)) > std::abs(big)) big = svd.u(i, c);
    EXPECT_GT(big, 0.0);
  }
}

TEST(Svd, ProjectionPreservesGramMatrixOfRetainedSubspace) {
  // U*Sigma = A*V, so the projected rows have the same inner products as A
  // restricted to the leading right singular subspace; at full rank that is A*A^T.
  Rng rng(14);
  const Matrix m = testing_support::random_matrix(12, 20, rng);
  const Matrix p = svd_project(m, 12, 4);
  const Matrix g1 = matmul(p, p.transposed()), g2 = matmul(m, m.transposed());
  for (std::size_t i = 0; i < g1.data.size(); ++i) EXPECT_NEAR(g1.data[i], g2.data[i], 1e-8);
}

TEST(Svd, NarrowInputIsZeroPadded) {
  Matrix m(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Matrix p = svd_project(m, 4, 1);
  ASSERT_EQ(p.cols, 4u);
  EXPECT_EQ(p(1, 0), 3.0);
  EXPECT_EQ(p(1, 1), 4.0);
  EXPECT_EQ(p(1, 3), 0.0);
}

TEST(Svd, ReproducibleUnderFixedSeed) {
  Rng rng(15);
  const Matrix m = testing_support::random_matrix(40, 60, rng);
  EXPECT_EQ(svd_project(m, 16, 99), svd_project(m, 16, 99));
}

TEST(Svd, NonFiniteInputIsRejected) {
  Matrix m(2, 3, 1.0);
  m(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(svd_project(m, 2, 0), NumericError);
}

TEST(FeaturelessFallback, SmallTypeIsIdentity) {
  const Matrix f = featureless_fallback(3, 3, 0);
  EXPECT_EQ(f, Matrix::identity(3));
}

TEST(FeaturelessFallback, TruncatedIdentityHasOrthonormalColumns) {
  // Every singular value of I_5 is 1, so two components give a 5x2 matrix
  // with orthonormal columns.
  const Matrix f = featureless_fallback(5, 2, 0);
  ASSERT_EQ(f.rows, 5u);
  ASSERT_EQ(f.cols, 2u);
  const Matrix g = matmul_tn(f, f);
  EXPECT_NEAR(g(0, 0), 1.0, 1e-10);
  EXPECT_NEAR(g(1, 1), 1.0, 1e-10);
  EXPECT_NEAR(g(0, 1), 0.0, 1e-10);
}

TEST(FeaturelessFallback, EmptyTypeGivesEmptyMatrix) {
  const Matrix f = featureless_fallback(0, 8, 0);
  EXPECT_EQ(f.rows, 0u);
  EXPECT_TRUE(f.empty());
}
