#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gph2/dense.hpp"
#include "gph2/error.hpp"
#include "gph2/graph.hpp"
#include "gph2/multiview.hpp"
#include "gph2/rng.hpp"
#include "gph2/sparse.hpp"
#include "gph2/tensor.hpp"

namespace gph2 {

namespace io {

inline void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IngestError("cannot write " + p.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IngestError("short write to " + p.string());
}

// Bounds-checked little-endian reader; every overrun is reported as corruption.
class ByteReader {
 public:
  ByteReader(std::string bytes, std::string what) : bytes_(std::move(bytes)), what_(std::move(what)) {}

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    if (std::string_view(bytes_).substr(pos_, magic.size()) != magic) {
      throw IngestError(what_ + ": bad magic or unsupported version (expected " + std::string(magic) + ")");
    }
    pos_ += magic.size();
  }

  std::int32_t i32(const char* field) {
    need(4, field);
    const auto v = get_le<std::int32_t>(bytes_.data() + pos_);
    pos_ += 4;
    return v;
  }

  std::vector<double> f64s(std::size_t count, const char* field) {
    need(count * 8, field);
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = get_le<double>(bytes_.data() + pos_ + 8 * i);
    pos_ += count * 8;
    return out;
  }

  std::string str(const char* field) {
    need(4, field);
    const auto len = get_le<std::uint32_t>(bytes_.data() + pos_);
    pos_ += 4;
    need(len, field);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw IngestError(what_ + ": corrupt length, " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
    }
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) {
      throw IngestError(what_ + ": corrupt length, truncated while reading " + field);
    }
  }

  std::string bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline void put_f64s(std::string& out, std::span<const double> v) {
  for (double x : v) put_le<double>(out, x);
}

inline void put_str(std::string& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

}  // namespace io

// Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = rng.uniform(-r, r);
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

struct ExpertEncoder {
  Tensor weight;       // d x d
  Tensor prelu_slope;  // scalar
  Tensor view_query;   // d x 1
  int k_hops = 2;
  std::string expert_id;

  std::size_t dim() const { return weight.rows(); }

  static ExpertEncoder init(std::size_t d, int k_hops, std::string id, std::uint64_t seed) {
    if (d == 0) throw ConfigError("encoder dimension must be positive");
    if (k_hops < 1) throw ConfigError("k_hops must be at least 1, got " + std::to_string(k_hops));
    Rng rng(seed);
    ExpertEncoder e;
    e.weight = glorot(d, d, rng);
    e.prelu_slope = Tensor::scalar(0.25, true);
    e.view_query = glorot(d, 1, rng);
    e.k_hops = k_hops;
    e.expert_id = std::move(id);
    return e;
  }

  std::vector<Tensor> params() const { return {weight, prelu_slope, view_query}; }

  ExpertEncoder clone() const { return {weight.clone(), prelu_slope.clone(), view_query.clone(), k_hops, expert_id}; }

  // Same values, no gradient tracking.
  ExpertEncoder frozen() const {
    return {weight.detach(), prelu_slope.detach(), view_query.detach(), k_hops, expert_id};
  }
};

struct EncodedViews {
  std::vector<Tensor> per_view;  // P tensors, n x d
  Tensor fused;                  // n x d
  Tensor view_attention;         // n x P
};

// S^k X through k differentiable spmm calls.
inline Tensor propagate(const SparseMatrix& view, const Tensor& x, int k) {
  if (k < 1) throw ConfigError("propagate: k must be at least 1");
  Tensor h = x;
  for (int i = 0; i < k; ++i) h = spmm(view, h);
  return h;
}

inline Matrix propagate(const SparseMatrix& view, const Matrix& x, int k) {
  if (k < 1) throw ConfigError("propagate: k must be at least 1");
  if (view.cols != x.rows) throw DimensionError("propagate: view and feature rows disagree");
  Matrix h = x;
  for (int i = 0; i < k; ++i) h = spmm(view, h);
  return h;
}

// Parameter-free propagation results of one multi-view graph, keyed by
// (view index, k). Safe to share between threads.
class PropagationCache {
 public:
  explicit PropagationCache(const MultiViewGraph& mv) : mv_(&mv) {}

  std::shared_ptr<const Matrix> get(std::size_t view, int k) {
    const auto key = std::make_pair(view, k);
    {
      std::lock_guard lock(mu_);
      if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    if (view >= mv_->n_views()) throw DimensionError("PropagationCache: no view " + std::to_string(view));
    auto value = std::make_shared<const Matrix>(propagate(mv_->views[view], mv_->features, k));
    std::lock_guard lock(mu_);
    return entries_.try_emplace(key, std::move(value)).first->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  const MultiViewGraph* mv_;
  mutable std::mutex mu_;
  std::map<std::pair<std::size_t, int>, std::shared_ptr<const Matrix>> entries_;
};

// Shared linear map + PReLU on each propagated view, then per-node softmax
// attention over views with score q^T h_v.
inline EncodedViews encode_propagated(const std::vector<Tensor>& propagated, const ExpertEncoder& enc) {
  if (propagated.empty()) throw DimensionError("encode: no views");
  const std::size_t d = enc.dim();
  EncodedViews out;
  std::vector<Tensor> scores;
  for (const auto& x : propagated) {
    if (x.cols() != d) {
      throw DimensionError("encode: feature dim " + std::to_string(x.cols()) + " against encoder dim " +
                           std::to_string(d));
    }
    out.per_view.push_back(prelu(matmul(x, enc.weight), enc.prelu_slope));
    scores.push_back(matmul(out.per_view.back(), enc.view_query));
  }
  out.view_attention = softmax_rows(concat_cols(scores));
  out.fused = mul_rows(out.per_view[0], column(out.view_attention, 0));
  for (std::size_t p = 1; p < out.per_view.size(); ++p) {
    out.fused = add(out.fused, mul_rows(out.per_view[p], column(out.view_attention, p)));
  }
  return out;
}

// k_override > 0 replaces the encoder's own propagation depth.
inline EncodedViews encode(const MultiViewGraph& mv, const ExpertEncoder& enc, PropagationCache* cache = nullptr,
                           int k_override = 0) {
  if (mv.features.cols != enc.dim()) {
    throw DimensionError("encode: graph '" + mv.name + "' has feature dim " + std::to_string(mv.features.cols) +
                         ", encoder expects " + std::to_string(enc.dim()));
  }
  const int k = k_override > 0 ? k_override : enc.k_hops;
  std::vector<Tensor> propagated;
  for (std::size_t p = 0; p < mv.n_views(); ++p) {
    propagated.push_back(Tensor::from(cache ? *cache->get(p, k) : propagate(mv.views[p], mv.features, k)));
  }
  return encode_propagated(propagated, enc);
}

inline constexpr std::string_view kExpertMagic = "GPH2EXP1";

inline std::string serialize_expert(const ExpertEncoder& e) {
  std::string out(kExpertMagic);
  io::put_le<std::int32_t>(out, static_cast<std::int32_t>(e.dim()));
  io::put_le<std::int32_t>(out, e.k_hops);
  io::put_f64s(out, e.weight.data());
  io::put_f64s(out, e.prelu_slope.data());
  io::put_f64s(out, e.view_query.data());
  io::put_str(out, e.expert_id);
  return out;
}

inline ExpertEncoder deserialize_expert(std::string bytes, const std::string& what) {
  io::ByteReader r(std::move(bytes), what);
  r.expect_magic(kExpertMagic);
  const std::int32_t d = r.i32("dimension");
  const std::int32_t k = r.i32("k_hops");
  if (d <= 0 || d > (1 << 16) || k < 1) throw IngestError(what + ": corrupt header (d=" + std::to_string(d) +
                                                          ", k_hops=" + std::to_string(k) + ")");
  const auto ud = static_cast<std::size_t>(d);
  ExpertEncoder e;
  e.weight = Tensor::from({ud, ud}, r.f64s(ud * ud, "weight"), true);
  e.prelu_slope = Tensor::from({}, r.f64s(1, "prelu slope"), true);
  e.view_query = Tensor::from({ud, 1}, r.f64s(ud, "view query"), true);
  e.k_hops = k;
  e.expert_id = r.str("expert id");
  r.expect_end();
  return e;
}

inline void save_expert(const ExpertEncoder& e, const fs::path& p) { io::write_file(p, serialize_expert(e)); }

inline ExpertEncoder load_expert(const fs::path& p) {
  if (!fs::exists(p)) throw IngestError("expert file not found: " + p.string());
  return deserialize_expert(io::read_text(p), p.string());
}

}  // namespace gph2
