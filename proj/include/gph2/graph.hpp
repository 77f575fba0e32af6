#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gph2/dense.hpp"
#include "gph2/error.hpp"
#include "gph2/rng.hpp"
#include "gph2/sparse.hpp"
#include "gph2/svd.hpp"

namespace gph2 {

namespace fs = std::filesystem;

// Single node and edge type. Adjacency is binary, symmetric, loop-free.
struct HomoGraph {
  std::string name;
  std::string node_type = "node";
  std::string relation = "edge";
  std::size_t n_nodes = 0;
  SparseMatrix edges;
  Matrix features;          // n x d0
  std::vector<int> labels;  // -1 for unlabeled; empty when no labels file
  int n_classes = 0;
};

struct NodeType {
  std::string name;
  std::size_t count = 0;
  std::optional<Matrix> features;  // absent for featureless types
};

struct RelationKey {
  std::string src;
  std::string name;
  std::string dst;
  friend auto operator<=>(const RelationKey&, const RelationKey&) = default;
};

// Directed bipartite relation, src_count x dst_count.
struct Relation {
  RelationKey key;
  SparseMatrix adjacency;
};

struct MetaPathStep {
  std::string relation;  // relation name
  bool reverse = false;  // traverse dst -> src
};

struct MetaPath {
  std::string name;
  std::vector<MetaPathStep> steps;
};

struct HeteroGraph {
  std::string name;
  std::vector<NodeType> node_types;
  std::vector<Relation> relations;
  std::string target_type;
  std::vector<int> labels;  // over target nodes; -1 unlabeled
  int n_classes = 0;
  std::vector<MetaPath> metapaths;

  const NodeType& type(const std::string& t) const {
    for (const auto& nt : node_types)
      if (nt.name == t) return nt;
    throw IngestError("unknown node type '" + t + "'");
  }
  bool has_type(const std::string& t) const {
    for (const auto& nt : node_types)
      if (nt.name == t) return true;
    return false;
  }
  const Relation& relation(const std::string& r) const {
    for (const auto& rel : relations)
      if (rel.key.name == r) return rel;
    throw IngestError("unknown relation '" + r + "'");
  }
  std::size_t target_count() const { return type(target_type).count; }
};

using Graph = std::variant<HomoGraph, HeteroGraph>;

inline const std::string& graph_name(const Graph& g) {
  return std::visit([](const auto& x) -> const std::string& { return x.name; }, g);
}

// Source/destination node types of one meta-path step.
inline std::pair<std::string, std::string> step_endpoints(const HeteroGraph& g, const MetaPathStep& s) {
  const auto& key = g.relation(s.relation).key;
  return s.reverse ? std::pair{key.dst, key.src} : std::pair{key.src, key.dst};
}

inline void validate_metapath(const HeteroGraph& g, const MetaPath& mp) {
  if (mp.steps.empty()) throw IngestError("meta-path '" + mp.name + "' has no steps");
  std::string at = g.target_type;
  for (std::size_t i = 0; i < mp.steps.size(); ++i) {
    const auto [src, dst] = step_endpoints(g, mp.steps[i]);
    if (src != at) {
      throw IngestError("meta-path '" + mp.name + "' step " + std::to_string(i) + " (" + mp.steps[i].relation +
                        ") starts at '" + src + "' but the path is at '" + at + "'");
    }
    at = dst;
  }
  if (at != g.target_type) {
    throw IngestError("meta-path '" + mp.name + "' ends at '" + at + "', not the target type '" + g.target_type + "'");
  }
}

inline void validate(const HeteroGraph& g) {
  if (g.node_types.size() + g.relations.size() <= 1) {
    throw IngestError("heterogeneous graph needs more than one node or relation type");
  }
  std::set<std::string> names;
  for (const auto& nt : g.node_types) {
    if (!names.insert(nt.name).second) throw IngestError("duplicate node type '" + nt.name + "'");
    if (nt.features && nt.features->rows != nt.count) {
      throw IngestError("features of '" + nt.name + "' have " + std::to_string(nt.features->rows) + " rows, count is " +
                        std::to_string(nt.count));
    }
  }
  std::set<std::string> rel_names;
  for (const auto& r : g.relations) {
    if (!rel_names.insert(r.key.name).second) throw IngestError("duplicate relation name '" + r.key.name + "'");
    if (!g.has_type(r.key.src) || !g.has_type(r.key.dst)) {
      throw IngestError("relation '" + r.key.name + "' references an unknown node type");
    }
    if (r.adjacency.rows != g.type(r.key.src).count || r.adjacency.cols != g.type(r.key.dst).count) {
      throw IngestError("relation '" + r.key.name + "' has the wrong dimensions");
    }
    r.adjacency.validate();
  }
  if (!g.has_type(g.target_type)) throw IngestError("target type '" + g.target_type + "' is not a node type");
  if (!g.labels.empty() && g.labels.size() != g.target_count()) {
    throw IngestError("label vector does not cover the target type");
  }
  for (const auto& mp : g.metapaths) validate_metapath(g, mp);
}

inline void validate(const HomoGraph& g) {
  if (g.edges.rows != g.n_nodes || g.edges.cols != g.n_nodes) throw IngestError("adjacency is not n x n");
  g.edges.validate();
  if (!g.edges.is_symmetric()) throw IngestError("homogeneous adjacency is not symmetric");
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    if (g.edges.at(i, i) != 0.0) throw IngestError("self-loop stored on node " + std::to_string(i));
  }
  if (g.features.rows != g.n_nodes) throw IngestError("feature rows do not match node count");
  if (!g.labels.empty() && g.labels.size() != g.n_nodes) throw IngestError("label vector does not cover all nodes");
}

// One-hot identity features projected to target_dim; for types that ship
// without a feature file.
inline Matrix featureless_fallback(std::size_t count, std::size_t target_dim, std::uint64_t seed) {
  if (count == 0) return Matrix(0, target_dim);
  return svd_project(Matrix::identity(count), target_dim, seed);
}

inline Matrix featureless_fallback(const HeteroGraph& g, const std::string& type, std::size_t target_dim,
                                   std::uint64_t seed) {
  return featureless_fallback(g.type(type).count, target_dim, seed);
}

// ---------------------------------------------------------------------------
// On-disk format
//
//   meta.json                     kind, node_types, relations, target_type,
//                                 n_classes, metapaths
//   features.<type>.bin           little-endian f64, row-major count x dim
//   edges.<src>.<name>.<dst>.csv  header "src,dst", 0-based ids
//   labels.<target>.csv           header "node,label"
// ---------------------------------------------------------------------------

namespace io {

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IngestError("missing file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline bool little_endian_host() {
  const std::uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

template <typename T>
void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if (!little_endian_host()) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, p, sizeof(T));
  if (!little_endian_host()) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

inline Matrix read_features(const fs::path& p, std::size_t count, std::size_t dim) {
  const std::string raw = read_text(p);
  if (raw.size() != count * dim * sizeof(double)) {
    throw IngestError(p.string() + ": expected " + std::to_string(count * dim * sizeof(double)) + " bytes (" +
                      std::to_string(count) + "x" + std::to_string(dim) + " f64), found " + std::to_string(raw.size()));
  }
  Matrix m(count, dim);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = get_le<double>(raw.data() + i * sizeof(double));
  if (!m.all_finite()) throw IngestError(p.string() + ": non-finite feature value");
  return m;
}

inline void write_features(const fs::path& p, const Matrix& m) {
  std::string out;
  out.reserve(m.data.size() * sizeof(double));
  for (double v : m.data) put_le(out, v);
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IngestError("cannot write " + p.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline std::size_t parse_index(const std::string& tok, const fs::path& p, std::size_t line) {
  std::size_t pos = 0;
  long long v = -1;
  try {
    v = std::stoll(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != tok.size() || v < 0) {
    throw IngestError(p.string() + ":" + std::to_string(line) + ": '" + tok + "' is not a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

// Two-column integer CSV with a fixed header.
inline std::vector<std::pair<std::size_t, std::size_t>> read_pairs(const fs::path& p, const std::string& header) {
  std::ifstream in(p);
  if (!in) throw IngestError("missing file: " + p.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw IngestError(p.string() + ": empty file, expected header '" + header + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw IngestError(p.string() + ":1: expected header '" + header + "', found '" + line + "'");
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw IngestError(p.string() + ":" + std::to_string(lineno) + ": expected two comma-separated fields");
    }
    rows.emplace_back(parse_index(line.substr(0, comma), p, lineno), parse_index(line.substr(comma + 1), p, lineno));
  }
  return rows;
}

inline SparseMatrix read_edges(const fs::path& p, std::size_t src_count, std::size_t dst_count) {
  const auto pairs = read_pairs(p, "src,dst");
  std::vector<Triplet> t;
  t.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [s, d] = pairs[i];
    if (s >= src_count || d >= dst_count) {
      throw IngestError(p.string() + ": row " + std::to_string(i + 1) + " (" + std::to_string(s) + "," +
                        std::to_string(d) + ") references a node id beyond the declared counts (" +
                        std::to_string(src_count) + "," + std::to_string(dst_count) + ")");
    }
    t.push_back({s, d, 1.0});
  }
  return SparseMatrix::from_triplets(src_count, dst_count, std::move(t), Duplicates::keep);
}

inline void write_edges(const fs::path& p, const SparseMatrix& a, bool upper_only) {
  std::ofstream f(p);
  if (!f) throw IngestError("cannot write " + p.string());
  f << "src,dst\n";
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
      if (upper_only && a.col_indices[k] < i) continue;
      f << i << ',' << a.col_indices[k] << '\n';
    }
}

inline std::vector<int> read_labels(const fs::path& p, std::size_t count, int n_classes) {
  std::vector<int> labels(count, -1);
  const auto pairs = read_pairs(p, "node,label");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [node, label] = pairs[i];
    const std::string where = p.string() + ": row " + std::to_string(i + 1);
    if (node >= count) throw IngestError(where + ": node " + std::to_string(node) + " beyond count " + std::to_string(count));
    if (label >= static_cast<std::size_t>(n_classes)) {
      throw IngestError(where + ": label " + std::to_string(label) + " outside [0, " + std::to_string(n_classes) + ")");
    }
    if (labels[node] != -1) throw IngestError(where + ": node " + std::to_string(node) + " labelled twice");
    labels[node] = static_cast<int>(label);
  }
  return labels;
}

inline void write_labels(const fs::path& p, const std::vector<int>& labels) {
  std::ofstream f(p);
  if (!f) throw IngestError("cannot write " + p.string());
  f << "node,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) f << i << ',' << labels[i] << '\n';
}

inline std::string edges_file(const RelationKey& k) { return "edges." + k.src + "." + k.name + "." + k.dst + ".csv"; }

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw IngestError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(where + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace io

inline Graph load_graph(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IngestError("graph directory not found: " + dir.string());
  const fs::path meta_path = dir / "meta.json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_text(meta_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestError(meta_path.string() + ": parse error: " + e.what());
  }
  const std::string where = meta_path.string();
  const auto kind = io::field<std::string>(meta, "kind", where);
  if (kind != "homo" && kind != "hetero") throw IngestError(where + ": kind must be 'homo' or 'hetero'");

  std::string name = dir.filename().string();
  if (name.empty()) name = dir.parent_path().filename().string();

  std::vector<NodeType> types;
  for (const auto& t : io::field<nlohmann::json>(meta, "node_types", where)) {
    NodeType nt;
    nt.name = io::field<std::string>(t, "name", where);
    nt.count = io::field<std::size_t>(t, "count", where);
    if (t.contains("feature_dim") && !t.at("feature_dim").is_null()) {
      const auto dim = io::field<std::size_t>(t, "feature_dim", where);
      nt.features = io::read_features(dir / ("features." + nt.name + ".bin"), nt.count, dim);
    }
    types.push_back(std::move(nt));
  }
  auto find_type = [&](const std::string& tn) -> const NodeType& {
    for (const auto& nt : types)
      if (nt.name == tn) return nt;
    throw IngestError(where + ": relation endpoint '" + tn + "' is not a declared node type");
  };

  std::vector<Relation> relations;
  for (const auto& r : io::field<nlohmann::json>(meta, "relations", where)) {
    RelationKey key{io::field<std::string>(r, "src", where), io::field<std::string>(r, "name", where),
                    io::field<std::string>(r, "dst", where)};
    const auto& s = find_type(key.src);
    const auto& d = find_type(key.dst);
    relations.push_back({key, io::read_edges(dir / io::edges_file(key), s.count, d.count)});
  }

  const int n_classes = meta.contains("n_classes") && !meta.at("n_classes").is_null()
                            ? io::field<int>(meta, "n_classes", where)
                            : 0;

  if (kind == "homo") {
    if (types.size() != 1) throw IngestError(where + ": homogeneous graph must declare exactly one node type");
    if (relations.size() != 1) throw IngestError(where + ": homogeneous graph must declare exactly one relation");
    HomoGraph g;
    g.name = name;
    g.node_type = types[0].name;
    g.relation = relations[0].key.name;
    g.n_nodes = types[0].count;
    g.edges = symmetrize_binary(relations[0].adjacency);
    g.features = types[0].features ? *types[0].features : Matrix(g.n_nodes, 0);
    g.n_classes = n_classes;
    const fs::path lp = dir / ("labels." + g.node_type + ".csv");
    if (fs::exists(lp)) g.labels = io::read_labels(lp, g.n_nodes, n_classes);
    validate(g);
    return g;
  }

  HeteroGraph g;
  g.name = name;
  g.node_types = std::move(types);
  g.relations = std::move(relations);
  g.target_type = io::field<std::string>(meta, "target_type", where);
  g.n_classes = n_classes;
  if (meta.contains("metapaths")) {
    for (const auto& m : meta.at("metapaths")) {
      MetaPath mp;
      mp.name = io::field<std::string>(m, "name", where);
      for (const auto& s : io::field<nlohmann::json>(m, "steps", where)) {
        mp.steps.push_back({io::field<std::string>(s, "relation", where),
                            s.contains("reverse") ? io::field<bool>(s, "reverse", where) : false});
      }
      g.metapaths.push_back(std::move(mp));
    }
  }
  if (!g.has_type(g.target_type)) throw IngestError(where + ": target_type '" + g.target_type + "' not declared");
  const fs::path lp = dir / ("labels." + g.target_type + ".csv");
  if (fs::exists(lp)) g.labels = io::read_labels(lp, g.target_count(), n_classes);
  for (const auto& mp : g.metapaths) {
    for (const auto& s : mp.steps) {
      bool known = false;
      for (const auto& r : g.relations) known = known || r.key.name == s.relation;
      if (!known) throw IngestError(where + ": meta-path '" + mp.name + "' uses unknown relation '" + s.relation + "'");
    }
  }
  validate(g);
  return g;
}

inline void save_graph(const Graph& graph, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::ordered_json meta;
  auto write_meta = [&] {
    std::ofstream f(dir / "meta.json");
    if (!f) throw IngestError("cannot write " + (dir / "meta.json").string());
    f << meta.dump(2) << '\n';
  };
  if (const auto* h = std::get_if<HomoGraph>(&graph)) {
    meta["kind"] = "homo";
    nlohmann::ordered_json nt{{"name", h->node_type}, {"count", h->n_nodes}};
    if (h->features.cols > 0) {
      nt["feature_dim"] = h->features.cols;
      io::write_features(dir / ("features." + h->node_type + ".bin"), h->features);
    } else {
      nt["feature_dim"] = nullptr;
    }
    meta["node_types"] = nlohmann::ordered_json::array({nt});
    const RelationKey key{h->node_type, h->relation, h->node_type};
    meta["relations"] = nlohmann::ordered_json::array({{{"src", key.src}, {"name", key.name}, {"dst", key.dst}}});
    meta["target_type"] = h->node_type;
    meta["n_classes"] = h->n_classes;
    meta["metapaths"] = nlohmann::ordered_json::array();
    io::write_edges(dir / io::edges_file(key), h->edges, true);
    if (!h->labels.empty()) io::write_labels(dir / ("labels." + h->node_type + ".csv"), h->labels);
    write_meta();
    return;
  }
  const auto& g = std::get<HeteroGraph>(graph);
  meta["kind"] = "hetero";
  meta["node_types"] = nlohmann::ordered_json::array();
  for (const auto& t : g.node_types) {
    nlohmann::ordered_json nt{{"name", t.name}, {"count", t.count}};
    if (t.features) {
      nt["feature_dim"] = t.features->cols;
      io::write_features(dir / ("features." + t.name + ".bin"), *t.features);
    } else {
      nt["feature_dim"] = nullptr;
    }
    meta["node_types"].push_back(nt);
  }
  meta["relations"] = nlohmann::ordered_json::array();
  for (const auto& r : g.relations) {
    meta["relations"].push_back({{"src", r.key.src}, {"name", r.key.name}, {"dst", r.key.dst}});
    io::write_edges(dir / io::edges_file(r.key), r.adjacency, false);
  }
  meta["target_type"] = g.target_type;
  meta["n_classes"] = g.n_classes;
  meta["metapaths"] = nlohmann::ordered_json::array();
  for (const auto& mp : g.metapaths) {
    nlohmann::ordered_json steps = nlohmann::ordered_json::array();
    for (const auto& s : mp.steps) steps.push_back({{"relation", s.relation}, {"reverse", s.reverse}});
    meta["metapaths"].push_back({{"name", mp.name}, {"steps", steps}});
  }
  if (!g.labels.empty()) io::write_labels(dir / ("labels." + g.target_type + ".csv"), g.labels);
  write_meta();
}

// Content hash of a loaded graph (name, structure, features, labels).
inline std::uint64_t graph_hash(const Graph& graph) {
  Hasher h;
  auto sparse = [&](const SparseMatrix& m) {
    h.pod(m.rows).pod(m.cols);
    h.pods(std::span<const std::size_t>(m.row_offsets));
    h.pods(std::span<const std::size_t>(m.col_indices));
    h.pods(std::span<const double>(m.values));
  };
  auto dense = [&](const Matrix& m) {
    h.pod(m.rows).pod(m.cols);
    h.pods(std::span<const double>(m.data));
  };
  if (const auto* g = std::get_if<HomoGraph>(&graph)) {
    h.str("homo").str(g->name);
    sparse(g->edges);
    dense(g->features);
    h.pods(std::span<const int>(g->labels)).pod(g->n_classes);
  } else {
    const auto& hg = std::get<HeteroGraph>(graph);
    h.str("hetero").str(hg.name).str(hg.target_type);
    for (const auto& t : hg.node_types) {
      h.str(t.name).pod(t.count).pod(t.features.has_value());
      if (t.features) dense(*t.features);
    }
    for (const auto& r : hg.relations) {
      h.str(r.key.src).str(r.key.name).str(r.key.dst);
      sparse(r.adjacency);
    }
    for (const auto& mp : hg.metapaths) {
      h.str(mp.name);
      for (const auto& s : mp.steps) h.str(s.relation).pod(s.reverse);
    }
    h.pods(std::span<const int>(hg.labels)).pod(hg.n_classes);
  }
  return h.digest();
}

}  // namespace gph2
