#include <gtest/gtest.h>

#include <cmath>

#include "gph2/encoder.hpp"
#include "support/gradcheck.hpp"
#include "support/synthetic.hpp"

using namespace gph2;

namespace {

MultiViewGraph small_multiview(std::size_t n, std::size_t d, int n_views, std::uint64_t seed) {
  auto g = testing_support::community_graph("mv", n, 2, d, 0.4, 0.1, 1.0, seed);
  return homo_views(g, n_views, 0.3, seed + 1);
}

ExpertEncoder hand_encoder(std::size_t d) {
  ExpertEncoder e = ExpertEncoder::init(d, 1, "hand", 0);
  e.weight = Tensor::from(Matrix::identity(d), true);
  std::vector<double> q(d, 0.0);
  q[0] = 1.0;
  e.view_query = Tensor::from({d, 1}, q, true);
  return e;
}

MultiViewGraph permuted(const MultiViewGraph& mv, const std::vector<std::size_t>& perm) {
  // perm[new] = old
  const std::size_t n = mv.n_nodes;
  std::vector<std::size_t> inv(n);
  for (std::size_t i = 0; i < n; ++i) inv[perm[i]] = i;
  MultiViewGraph out = mv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < mv.features.cols; ++j) out.features(i, j) = mv.features(perm[i], j);
  for (std::size_t p = 0; p < mv.n_views(); ++p) {
    std::vector<Triplet> t;
    const auto& v = mv.views[p];
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = v.row_offsets[r]; k < v.row_offsets[r + 1]; ++k)
        t.push_back({inv[r], inv[v.col_indices[k]], v.values[k]});
    out.views[p] = SparseMatrix::from_triplets(n, n, std::move(t));
  }
  return out;
}

}  // namespace

TEST(Encoder, InitShapesAndSlope) {
  const auto e = ExpertEncoder::init(6, 2, "x", 3);
  EXPECT_EQ(e.weight.shape(), (Shape{6, 6}));
  EXPECT_EQ(e.view_query.shape(), (Shape{6, 1}));
  EXPECT_DOUBLE_EQ(e.prelu_slope.item(), 0.25);
  const double r = std::sqrt(6.0 / 12.0);
  for (double w : e.weight.data()) EXPECT_LE(std::abs(w), r);
  EXPECT_THROW(ExpertEncoder::init(0, 2, "x", 0), ConfigError);
  EXPECT_THROW(ExpertEncoder::init(4, 0, "x", 0), ConfigError);
}

TEST(Encoder, IdentityViewWithUnitWeightIsPrelu) {
  MultiViewGraph mv;
  mv.name = "id";
  mv.n_nodes = 3;
  mv.features = Matrix(3, 2, std::vector<double>{1, -2, -0.5, 3, 0, -1});
  mv.views = {SparseMatrix::from_dense(Matrix::identity(3))};
  mv.edge_sets = {SparseMatrix(3, 3)};
  mv.view_names = {"v"};
  const auto out = encode(mv, hand_encoder(2));
  const std::vector<double> expect{1, -0.5, -0.125, 3, 0, -0.25};
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_DOUBLE_EQ(out.fused.data()[i], expect[i]);
  for (double a : out.view_attention.data()) EXPECT_DOUBLE_EQ(a, 1.0);
}

TEST(Encoder, HandComputedTwoViewAttention) {
  // Two nodes, two views. View 0 is the identity, view 1 averages both nodes.
  MultiViewGraph mv;
  mv.name = "hand";
  mv.n_nodes = 2;
  mv.features = Matrix(2, 2, std::vector<double>{2, 1, -1, 4});
  mv.views = {SparseMatrix::from_dense(Matrix::identity(2)), SparseMatrix::from_dense(Matrix(2, 2, 0.5))};
  mv.edge_sets = {SparseMatrix(2, 2), SparseMatrix(2, 2)};
  mv.view_names = {"a", "b"};
  const auto out = encode(mv, hand_encoder(2));

  // View 0: prelu of raw rows -> (2,1), (-0.25,4). View 1: both rows (0.5,2.5).
  const double h0[2][2] = {{2, 1}, {-0.25, 4}};
  const double h1[2] = {0.5, 2.5};
  for (std::size_t v = 0; v < 2; ++v) {
    const double s0 = h0[v][0], s1 = h1[0];
    const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
    EXPECT_NEAR(out.view_attention.at(v, 0), a0, 1e-12);
    EXPECT_NEAR(out.view_attention.at(v, 1), 1 - a0, 1e-12);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out.fused.at(v, j), a0 * h0[v][j] + (1 - a0) * h1[j], 1e-12);
  }
}

TEST(Encoder, AttentionRowsAreDistributions) {
  const auto mv = small_multiview(30, 5, 3, 1);
  const auto e = ExpertEncoder::init(5, 2, "e", 9);
  const auto out = encode(mv, e);
  ASSERT_EQ(out.view_attention.shape(), (Shape{30, 3}));
  for (std::size_t v = 0; v < 30; ++v) {
    double s = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      EXPECT_GE(out.view_attention.at(v, p), 0.0);
      s += out.view_attention.at(v, p);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Encoder, IdenticalViewsGetUniformAttention) {
  auto mv = small_multiview(20, 4, 1, 2);
  mv.views = {mv.views[0], mv.views[0], mv.views[0], mv.views[0]};
  mv.edge_sets = {mv.edge_sets[0], mv.edge_sets[0], mv.edge_sets[0], mv.edge_sets[0]};
  mv.view_names = {"a", "b", "c", "d"};
  const auto out = encode(mv, ExpertEncoder::init(4, 2, "e", 1));
  for (double a : out.view_attention.data()) EXPECT_NEAR(a, 0.25, 1e-15);
  for (std::size_t i = 0; i < out.fused.numel(); ++i) EXPECT_NEAR(out.fused.data()[i], out.per_view[0].data()[i], 1e-12);
}

TEST(Encoder, SingleViewPassesThrough) {
  const auto mv = small_multiview(15, 3, 1, 3);
  const auto out = encode(mv, ExpertEncoder::init(3, 2, "e", 4));
  EXPECT_EQ(out.fused.to_matrix(), out.per_view[0].to_matrix());
}

TEST(Encoder, PermutationEquivariant) {
  const auto mv = small_multiview(12, 4, 2, 5);
  const auto e = ExpertEncoder::init(4, 2, "e", 6);
  Rng rng(8);
  const auto perm = rng.permutation(12);
  const auto a = encode(mv, e), b = encode(permuted(mv, perm), e);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(b.fused.at(i, j), a.fused.at(perm[i], j), 1e-12);
}

TEST(Encoder, CacheGivesBitIdenticalOutput) {
  const auto mv = small_multiview(25, 4, 3, 6);
  const auto e = ExpertEncoder::init(4, 2, "e", 7);
  PropagationCache cache(mv);
  const auto a = encode(mv, e), b = encode(mv, e, &cache), c = encode(mv, e, &cache);
  EXPECT_EQ(cache.size(), 3u);
  EXPECT_EQ(a.fused.to_matrix(), b.fused.to_matrix());
  EXPECT_EQ(b.fused.to_matrix(), c.fused.to_matrix());
  encode(mv, e, &cache, 3);
  EXPECT_EQ(cache.size(), 6u);
}

TEST(Encoder, PropagationMatchesRepeatedDenseProducts) {
  const auto mv = small_multiview(10, 3, 1, 7);
  const Matrix s = mv.views[0].dense();
  const Matrix ref = matmul(s, matmul(s, matmul(s, mv.features)));
  const Matrix got = propagate(mv.views[0], mv.features, 3);
  for (std::size_t i = 0; i < ref.data.size(); ++i) EXPECT_NEAR(got.data[i], ref.data[i], 1e-12);
}

TEST(Encoder, DimensionMismatchRejected) {
  const auto mv = small_multiview(10, 3, 1, 8);
  EXPECT_THROW(encode(mv, ExpertEncoder::init(4, 2, "e", 0)), DimensionError);
}

TEST(Encoder, GradientsOfEveryParameterMatchFiniteDifferences) {
  const auto mv = small_multiview(8, 3, 2, 9);
  const auto e = ExpertEncoder::init(3, 2, "e", 10);
  const auto r = testing_support::check_gradients(e.params(), [&] {
    const auto out = encode(mv, e);
    return sum(mul(out.fused, out.fused));
  });
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
  EXPECT_EQ(r.checked, 9u + 1u + 3u);
}

TEST(Encoder, FrozenCopyCarriesNoGradient) {
  const auto e = ExpertEncoder::init(3, 2, "e", 11);
  const auto f = e.frozen();
  EXPECT_FALSE(f.weight.requires_grad());
  EXPECT_EQ(f.weight.to_matrix(), e.weight.to_matrix());
  const auto mv = small_multiview(6, 3, 2, 12);
  EXPECT_FALSE(encode(mv, f).fused.requires_grad());
}

TEST(ExpertFile, RoundTripIsByteIdentical) {
  const auto e = ExpertEncoder::init(5, 3, "cora+citeseer", 12);
  const auto bytes = serialize_expert(e);
  const auto back = deserialize_expert(bytes, "mem");
  EXPECT_EQ(serialize_expert(back), bytes);
  EXPECT_EQ(back.k_hops, 3);
  EXPECT_EQ(back.expert_id, "cora+citeseer");
  EXPECT_EQ(back.weight.to_matrix(), e.weight.to_matrix());

  const auto dir = testing_support::fresh_dir("expert_file");
  save_expert(e, dir / "sub" / "e.gph2exp");
  EXPECT_EQ(serialize_expert(load_expert(dir / "sub" / "e.gph2exp")), bytes);
}

TEST(ExpertFile, TruncationAndCorruptionAreReported) {
  const auto bytes = serialize_expert(ExpertEncoder::init(4, 2, "e", 0));
  for (std::size_t cut : {std::size_t{3}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    try {
      deserialize_expert(bytes.substr(0, cut), "e.gph2exp");
      FAIL() << "accepted truncated file at " << cut;
    } catch (const IngestError& err) {
      const std::string msg = err.what();
      EXPECT_TRUE(msg.find("corrupt length") != std::string::npos || msg.find("bad magic") != std::string::npos)
          << msg;
    }
  }
  std::string wrong = bytes;
  wrong[7] = '9';
  EXPECT_THROW(deserialize_expert(wrong, "x"), IngestError);
  EXPECT_THROW(deserialize_expert(bytes + "z", "x"), IngestError);
  EXPECT_THROW(load_expert("/nonexistent/e.gph2exp"), IngestError);
}
