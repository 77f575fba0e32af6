#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "gph2/dense.hpp"
#include "gph2/error.hpp"
#include "gph2/graph.hpp"
#include "gph2/rng.hpp"
#include "gph2/sparse.hpp"
#include "gph2/svd.hpp"

namespace gph2 {

enum class SourceKind { homo, hetero };

// One shared feature matrix over a fixed node set, plus P views that differ
// only in their edges.
struct MultiViewGraph {
  std::string name;
  SourceKind source_kind = SourceKind::homo;
  std::size_t n_nodes = 0;
  Matrix features;
  std::vector<SparseMatrix> edge_sets;  // binary, symmetric, no self-loops
  std::vector<SparseMatrix> views;      // normalised propagation operators
  std::vector<std::string> view_names;
  std::vector<int> labels;
  int n_classes = 0;

  std::size_t n_views() const { return views.size(); }

  void validate() const {
    if (views.empty()) throw ConfigError("multi-view graph '" + name + "' has no views");
    if (features.rows != n_nodes) throw DimensionError("multi-view graph: feature rows differ from node count");
    if (edge_sets.size() != views.size() || view_names.size() != views.size()) {
      throw DimensionError("multi-view graph: view bookkeeping out of sync");
    }
    for (const auto& v : views) {
      if (v.rows != n_nodes || v.cols != n_nodes) throw DimensionError("multi-view graph: view is not n x n");
    }
  }
};

struct ViewConfig {
  std::size_t feature_dim = 128;
  int n_views = 3;
  double drop_ratio = 0.3;
  std::uint64_t seed = 0;
};

// D^-1/2 (A + I) D^-1/2 over binary A; D counts the self-loop.
inline SparseMatrix normalize_view(const SparseMatrix& a) {
  if (a.rows != a.cols) throw DimensionError("normalize_view: adjacency is not square");
  const std::size_t n = a.rows;
  SparseMatrix out(n, n);
  out.col_indices.reserve(a.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) {
    bool diag_done = false;
    for (std::size_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
      const std::size_t j = a.col_indices[k];
      if (a.values[k] == 0.0) continue;
      if (!diag_done && j >= i) {
        out.col_indices.push_back(i);
        diag_done = true;
        if (j == i) continue;
      }
      out.col_indices.push_back(j);
    }
    if (!diag_done) out.col_indices.push_back(i);
    out.row_offsets[i + 1] = out.col_indices.size();
  }
  std::vector<double> deg(n);
  for (std::size_t i = 0; i < n; ++i) deg[i] = static_cast<double>(out.row_offsets[i + 1] - out.row_offsets[i]);
  out.values.resize(out.nnz());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = out.row_offsets[i]; k < out.row_offsets[i + 1]; ++k) {
      out.values[k] = 1.0 / std::sqrt(deg[i] * deg[out.col_indices[k]]);
    }
  return out;
}

// Independently drops each undirected edge with probability ratio; both
// directions go together.
inline SparseMatrix drop_edges(const SparseMatrix& sym, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("drop_ratio must lie in [0, 1), got " + std::to_string(ratio));
  Rng rng(seed);
  std::vector<Triplet> kept;
  kept.reserve(sym.nnz());
  for (std::size_t i = 0; i < sym.rows; ++i)
    for (std::size_t k = sym.row_offsets[i]; k < sym.row_offsets[i + 1]; ++k) {
      const std::size_t j = sym.col_indices[k];
      if (j <= i) continue;
      if (ratio > 0.0 && rng.bernoulli(ratio)) continue;
      kept.push_back({i, j, 1.0});
      kept.push_back({j, i, 1.0});
    }
  return SparseMatrix::from_triplets(sym.rows, sym.cols, std::move(kept), Duplicates::keep);
}

inline std::size_t undirected_edge_count(const SparseMatrix& sym) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < sym.rows; ++i)
    for (std::size_t k = sym.row_offsets[i]; k < sym.row_offsets[i + 1]; ++k) n += sym.col_indices[k] > i;
  return n;
}

// Views from independent edge dropping; view p uses derive_seed(seed, p).
// Features are carried over unchanged.
inline MultiViewGraph homo_views(const HomoGraph& g, int n_views, double drop_ratio, std::uint64_t seed) {
  if (n_views < 1) throw ConfigError("n_views must be at least 1");
  if (!(drop_ratio >= 0.0 && drop_ratio < 1.0)) {
    throw ConfigError("drop_ratio must lie in [0, 1), got " + std::to_string(drop_ratio));
  }
  MultiViewGraph mv;
  mv.name = g.name;
  mv.source_kind = SourceKind::homo;
  mv.n_nodes = g.n_nodes;
  mv.features = g.features;
  mv.labels = g.labels;
  mv.n_classes = g.n_classes;
  for (int p = 0; p < n_views; ++p) {
    auto edges = drop_edges(g.edges, drop_ratio, derive_seed(seed, static_cast<std::uint64_t>(p)));
    mv.views.push_back(normalize_view(edges));
    mv.edge_sets.push_back(std::move(edges));
    mv.view_names.push_back("drop" + std::to_string(p));
  }
  return mv;
}

namespace detail {

// Union of a and a^T without the diagonal; a must be square and canonical.
inline SparseMatrix symmetric_closure(const SparseMatrix& a) {
  const SparseMatrix t = a.transposed();
  SparseMatrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    std::size_t x = a.row_offsets[i], xe = a.row_offsets[i + 1];
    std::size_t y = t.row_offsets[i], ye = t.row_offsets[i + 1];
    while (x < xe || y < ye) {
      std::size_t j;
      if (y == ye || (x < xe && a.col_indices[x] < t.col_indices[y])) {
        j = a.col_indices[x++];
      } else if (x == xe || t.col_indices[y] < a.col_indices[x]) {
        j = t.col_indices[y++];
      } else {
        j = a.col_indices[x++];
        ++y;
      }
      if (j != i) out.col_indices.push_back(j);
    }
    out.row_offsets[i + 1] = out.col_indices.size();
  }
  out.values.assign(out.nnz(), 1.0);
  return out;
}

}  // namespace detail

// Target x target reachability along one meta-path, computed one source row
// at a time so no intermediate type x type matrix is materialised. Diagonal
// removed, result symmetrised and binary.
inline SparseMatrix metapath_adjacency(const HeteroGraph& g, const MetaPath& mp) {
  validate_metapath(g, mp);
  std::vector<SparseMatrix> steps;
  for (const auto& s : mp.steps) {
    const auto& adj = g.relation(s.relation).adjacency;
    steps.push_back(s.reverse ? adj.transposed() : adj);
  }
  const std::size_t n = g.target_count();
  std::vector<std::vector<std::size_t>> stamp;
  for (const auto& s : steps) stamp.emplace_back(s.cols, SIZE_MAX);

  SparseMatrix reach(n, n);
  std::vector<std::size_t> frontier, next;
  for (std::size_t u = 0; u < n; ++u) {
    frontier.assign(1, u);
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const auto& s = steps[t];
      next.clear();
      for (std::size_t v : frontier)
        for (std::size_t k = s.row_offsets[v]; k < s.row_offsets[v + 1]; ++k) {
          const std::size_t w = s.col_indices[k];
          if (stamp[t][w] == u) continue;
          stamp[t][w] = u;
          next.push_back(w);
        }
      frontier.swap(next);
      if (frontier.empty()) break;
    }
    std::sort(frontier.begin(), frontier.end());
    reach.col_indices.insert(reach.col_indices.end(), frontier.begin(), frontier.end());
    reach.row_offsets[u + 1] = reach.col_indices.size();
  }
  reach.values.assign(reach.nnz(), 1.0);
  return detail::symmetric_closure(reach);
}

// One view per declared meta-path; only target-type nodes take part. The raw
// target features are kept (an empty n x 0 matrix for featureless targets).
inline MultiViewGraph metapath_views(const HeteroGraph& g) {
  if (g.metapaths.empty()) throw ConfigError("heterogeneous graph '" + g.name + "' declares no meta-paths");
  MultiViewGraph mv;
  mv.name = g.name;
  mv.source_kind = SourceKind::hetero;
  mv.n_nodes = g.target_count();
  const auto& target = g.type(g.target_type);
  mv.features = target.features ? *target.features : Matrix(mv.n_nodes, 0);
  mv.labels = g.labels;
  mv.n_classes = g.n_classes;
  for (const auto& mp : g.metapaths) {
    auto edges = metapath_adjacency(g, mp);
    mv.views.push_back(normalize_view(edges));
    mv.edge_sets.push_back(std::move(edges));
    mv.view_names.push_back(mp.name);
  }
  return mv;
}

// Replaces the features with their projection to the unified dimension, or
// with the one-hot fallback when the node set has none.
inline void project_features(MultiViewGraph& mv, std::size_t dim, std::uint64_t seed) {
  mv.features = mv.features.cols == 0 ? featureless_fallback(mv.n_nodes, dim, seed)
                                      : svd_project(mv.features, dim, seed);
}

// Full construction: views for either graph kind, then feature projection.
inline MultiViewGraph build_multiview(const Graph& graph, const ViewConfig& cfg) {
  MultiViewGraph mv = std::visit(
      [&](const auto& g) -> MultiViewGraph {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, HomoGraph>) {
          return homo_views(g, cfg.n_views, cfg.drop_ratio, derive_seed(cfg.seed, 1));
        } else {
          return metapath_views(g);
        }
      },
      graph);
  project_features(mv, cfg.feature_dim, derive_seed(cfg.seed, 2));
  mv.validate();
  return mv;
}

// Debug dump of view k's edge set in the graph CSV schema (each undirected
// edge once, src <= dst).
inline void dump_view_csv(const MultiViewGraph& mv, std::size_t k, const std::filesystem::path& dir) {
  if (k >= mv.n_views()) throw ConfigError("dump_view_csv: no view " + std::to_string(k));
  std::filesystem::create_directories(dir);
  io::write_edges(dir / ("edges.view" + std::to_string(k) + ".csv"), mv.edge_sets[k], true);
}

}  // namespace gph2
