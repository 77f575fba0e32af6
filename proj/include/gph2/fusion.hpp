#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gph2/adam.hpp"
#include "gph2/encoder.hpp"
#include "gph2/error.hpp"
#include "gph2/multiview.hpp"
#include "gph2/pretrain.hpp"
#include "gph2/rng.hpp"
#include "gph2/tensor.hpp"

namespace gph2 {

enum class FusionMode { attention, uniform };

struct FusionConfig {
  int epochs = 200;
  int patience = 20;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  double dropout = 0.0;
  int k_hops = 2;  // propagation depth used by the frozen experts downstream
  FusionMode mode = FusionMode::attention;
  bool align = true;
  bool ortho = true;
  double aligner_noise = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("downstream.epochs must be positive");
    if (patience < 1) throw ConfigError("downstream.patience must be positive");
    if (!(lr > 0)) throw ConfigError("downstream.lr must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("downstream.weight_decay must be non-negative");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("downstream.dropout must lie in [0, 1)");
    if (k_hops < 1) throw ConfigError("downstream.nb_layers must be at least 1");
  }
};

struct FusionHead {
  std::vector<Tensor> aligners;  // M, each d x d
  Tensor classifier;             // d x C
  Tensor bias;                   // 1 x C
  Tensor class_queries;          // d x C

  std::size_t n_experts() const { return aligners.size(); }
  std::size_t dim() const { return classifier.rows(); }
  std::size_t n_classes() const { return classifier.cols(); }

  static FusionHead init(std::size_t n_experts, std::size_t d, std::size_t n_classes, std::uint64_t seed,
                         double aligner_noise = 0.01) {
    if (n_experts == 0) throw ConfigError("fusion needs at least one expert");
    if (n_classes == 0) throw ConfigError("fusion needs at least one class");
    Rng rng(seed);
    FusionHead h;
    for (std::size_t i = 0; i < n_experts; ++i) {
      std::vector<double> w(d * d);
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) w[r * d + c] = (r == c ? 1.0 : 0.0) + aligner_noise * rng.normal();
      h.aligners.push_back(Tensor::from({d, d}, std::move(w), true));
    }
    h.classifier = glorot(d, n_classes, rng);
    h.bias = Tensor::zeros({1, n_classes}, true);
    h.class_queries = glorot(d, n_classes, rng);
    return h;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> p = aligners;
    p.push_back(classifier);
    p.push_back(bias);
    p.push_back(class_queries);
    return p;
  }

  FusionHead clone() const {
    FusionHead h;
    for (const auto& w : aligners) h.aligners.push_back(w.clone());
    h.classifier = classifier.clone();
    h.bias = bias.clone();
    h.class_queries = class_queries.clone();
    return h;
  }
};

struct FusionOutput {
  Tensor fused_logits;                   // n x C
  std::vector<Tensor> per_expert_logits; // M, each n x C
  std::vector<Tensor> attention;         // C, each n x M (softmax over experts)
  Matrix mean_attention;                 // M x C, averaged over nodes

  // attention weight of expert i for node v and class c
  double attention_at(std::size_t v, std::size_t i, std::size_t c) const { return attention[c].at(v, i); }
};

inline Tensor align(const Tensor& h, const Tensor& w) {
  if (h.cols() != w.rows() || w.rows() != w.cols()) {
    throw DimensionError("align: embedding " + shape_str(h.shape()) + " against aligner " + shape_str(w.shape()));
  }
  return matmul(h, w);
}

// ||Q^T Q - I||_F^2
inline Tensor ortho_penalty(const Tensor& q) {
  const std::size_t c = q.cols();
  return frobenius_sq(sub(matmul(transpose(q), q), Tensor::from(Matrix::identity(c))));
}

// Per-expert logits from the shared classifier, fused per node and class
// with weights softmax_i(z_{i,v}^T q_c). Uniform mode replaces the weights
// with 1/M.
inline FusionOutput fuse(const std::vector<Tensor>& z, const FusionHead& head,
                         FusionMode mode = FusionMode::attention) {
  if (z.empty()) throw DimensionError("fuse: no experts");
  if (z.size() != head.n_experts()) {
    throw DimensionError("fuse: " + std::to_string(z.size()) + " embeddings for " +
                         std::to_string(head.n_experts()) + " experts");
  }
  const std::size_t m = z.size(), n = z[0].rows(), nc = head.n_classes();
  FusionOutput out;
  std::vector<Tensor> scores;
  for (const auto& zi : z) {
    if (zi.rows() != n || zi.cols() != head.dim()) throw DimensionError("fuse: aligned embedding shape mismatch");
    out.per_expert_logits.push_back(add_row(matmul(zi, head.classifier), head.bias));
    if (mode == FusionMode::attention) scores.push_back(matmul(zi, head.class_queries));
  }
  std::vector<Tensor> fused_cols;
  out.mean_attention = Matrix(m, nc);
  for (std::size_t c = 0; c < nc; ++c) {
    Tensor alpha;
    if (mode == FusionMode::attention) {
      std::vector<Tensor> sc;
      for (std::size_t i = 0; i < m; ++i) sc.push_back(column(scores[i], c));
      alpha = softmax_rows(concat_cols(sc));
    } else {
      alpha = Tensor::from({n, m}, std::vector<double>(n * m, 1.0 / static_cast<double>(m)));
    }
    Tensor col = mul(column(alpha, 0), column(out.per_expert_logits[0], c));
    for (std::size_t i = 1; i < m; ++i) col = add(col, mul(column(alpha, i), column(out.per_expert_logits[i], c)));
    fused_cols.push_back(col);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t i = 0; i < m; ++i) out.mean_attention(i, c) += alpha.at(v, i);
    out.attention.push_back(alpha);
  }
  if (n > 0) {
    for (double& x : out.mean_attention.data) x /= static_cast<double>(n);
  }
  out.fused_logits = concat_cols(fused_cols);
  return out;
}

// Frozen experts encode the downstream graph once; returns each expert's
// fused node representations as plain matrices.
inline std::vector<Matrix> embed_with_experts(const MultiViewGraph& mv, const std::vector<ExpertEncoder>& experts,
                                              int k_hops, PropagationCache* cache = nullptr) {
  std::vector<Matrix> out;
  for (const auto& e : experts) out.push_back(encode(mv, e.frozen(), cache, k_hops).fused.to_matrix());
  return out;
}

struct DownstreamResult {
  FusionHead head;  // parameters at the best training-loss epoch
  std::vector<double> losses;
  int best_epoch = 0;
  double best_loss = 0;
};

namespace detail {

inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> rows,
                            std::span<const std::size_t> classes) {
  const Tensor lp = log_softmax_rows(select_rows(logits, rows));
  std::vector<std::size_t> idx(rows.size());
  for (std::size_t t = 0; t < idx.size(); ++t) idx[t] = t;
  return neg(mean(gather(lp, idx, classes)));
}

}  // namespace detail

// Loss used for training: softmax cross-entropy of the fused logits on the
// given rows, plus the orthogonality penalty (coefficient 1) when enabled.
inline Tensor downstream_loss(const FusionOutput& out, const FusionHead& head, std::span<const std::size_t> rows,
                              std::span<const std::size_t> classes, const FusionConfig& cfg) {
  Tensor loss = detail::cross_entropy(out.fused_logits, rows, classes);
  if (cfg.ortho && cfg.mode == FusionMode::attention) loss = add(loss, ortho_penalty(head.class_queries));
  return loss;
}

inline std::vector<Tensor> aligned(const std::vector<Tensor>& h, const FusionHead& head, const FusionConfig& cfg) {
  std::vector<Tensor> z;
  for (std::size_t i = 0; i < h.size(); ++i) z.push_back(cfg.align ? align(h[i], head.aligners[i]) : h[i]);
  return z;
}

// Trains a fresh head on the labelled rows; the experts' embeddings are
// constants here.
inline DownstreamResult train_downstream(const std::vector<Matrix>& embeddings, const std::vector<int>& labels,
                                         int n_classes, std::span<const std::size_t> train_ids,
                                         const FusionConfig& cfg) {
  cfg.validate();
  if (embeddings.empty()) throw ConfigError("train_downstream: no experts");
  if (n_classes < 1) throw ConfigError("train_downstream: no classes");
  const std::size_t n = embeddings[0].rows, d = embeddings[0].cols;
  for (const auto& e : embeddings) {
    if (e.rows != n || e.cols != d) throw DimensionError("train_downstream: expert embeddings differ in shape");
  }
  if (labels.size() != n) throw DimensionError("train_downstream: label count differs from node count");
  std::vector<std::size_t> classes;
  std::vector<int> per_class(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t id : train_ids) {
    if (id >= n) throw DimensionError("train_downstream: train node " + std::to_string(id) + " out of range");
    const int y = labels[id];
    if (y < 0 || y >= n_classes) throw ConfigError("train_downstream: train node " + std::to_string(id) + " is unlabeled");
    classes.push_back(static_cast<std::size_t>(y));
    ++per_class[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < n_classes; ++c) {
    if (per_class[static_cast<std::size_t>(c)] == 0) {
      throw ConfigError("train_downstream: class " + std::to_string(c) + " has no labeled training nodes");
    }
  }

  FusionHead head = FusionHead::init(embeddings.size(), d, static_cast<std::size_t>(n_classes),
                                     derive_seed(cfg.seed, 0), cfg.aligner_noise);
  std::vector<Tensor> params;
  if (cfg.align) params = head.aligners;
  params.push_back(head.classifier);
  params.push_back(head.bias);
  if (cfg.mode == FusionMode::attention) params.push_back(head.class_queries);
  AdamState opt(AdamOptions{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng(derive_seed(cfg.seed, 1));

  // Only the training rows feed the loss, so the forward pass is restricted to them.
  std::vector<Tensor> h;
  for (const auto& e : embeddings) h.push_back(Tensor::from(e.select_rows(train_ids)));
  std::vector<std::size_t> rows(train_ids.size());
  for (std::size_t t = 0; t < rows.size(); ++t) rows[t] = t;

  DownstreamResult res;
  res.best_loss = std::numeric_limits<double>::infinity();
  int wait = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Tensor> z = aligned(h, head, cfg);
    if (cfg.dropout > 0) {
      for (auto& zi : z) zi = mask(zi, dropout_mask(zi.numel(), cfg.dropout, rng));
    }
    const FusionOutput out = fuse(z, head, cfg.mode);
    const Tensor loss = downstream_loss(out, head, rows, classes, cfg);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("downstream training: non-finite loss at epoch " + std::to_string(epoch));
    }
    res.losses.push_back(value);
    if (value < res.best_loss) {
      res.best_loss = value;
      res.best_epoch = epoch;
      res.head = head.clone();
      wait = 0;
    } else if (++wait >= cfg.patience) {
      break;
    }
    zero_grads(params);
    backward(loss);
    adam_step(params, opt);
  }
  return res;
}

inline DownstreamResult train_downstream(const MultiViewGraph& mv, const std::vector<ExpertEncoder>& experts,
                                         std::span<const std::size_t> train_ids, const FusionConfig& cfg,
                                         PropagationCache* cache = nullptr) {
  return train_downstream(embed_with_experts(mv, experts, cfg.k_hops, cache), mv.labels, mv.n_classes, train_ids,
                          cfg);
}

// Highest fused logit per row; ties go to the lower class id.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t v = 0; v < logits.rows(); ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits.at(v, c) > logits.at(v, best)) best = c;
    }
    out[v] = static_cast<int>(best);
  }
  return out;
}

struct Prediction {
  std::vector<int> classes;
  FusionOutput output;
};

inline Prediction predict(const std::vector<Matrix>& embeddings, const FusionHead& head,
                          const FusionConfig& cfg = {}) {
  std::vector<Tensor> h;
  for (const auto& e : embeddings) h.push_back(Tensor::from(e));
  Prediction p{{}, fuse(aligned(h, head, cfg), head, cfg.mode)};
  p.classes = argmax_rows(p.output.fused_logits);
  return p;
}

inline Prediction predict(const MultiViewGraph& mv, const std::vector<ExpertEncoder>& experts, const FusionHead& head,
                          const FusionConfig& cfg = {}, PropagationCache* cache = nullptr) {
  return predict(embed_with_experts(mv, experts, cfg.k_hops, cache), head, cfg);
}

inline constexpr std::string_view kHeadMagic = "GPH2FUS1";

inline std::string serialize_head(const FusionHead& h) {
  std::string out(kHeadMagic);
  io::put_le<std::int32_t>(out, static_cast<std::int32_t>(h.n_experts()));
  io::put_le<std::int32_t>(out, static_cast<std::int32_t>(h.dim()));
  io::put_le<std::int32_t>(out, static_cast<std::int32_t>(h.n_classes()));
  for (const auto& w : h.aligners) io::put_f64s(out, w.data());
  io::put_f64s(out, h.classifier.data());
  io::put_f64s(out, h.bias.data());
  io::put_f64s(out, h.class_queries.data());
  return out;
}

inline FusionHead deserialize_head(std::string bytes, const std::string& what) {
  io::ByteReader r(std::move(bytes), what);
  r.expect_magic(kHeadMagic);
  const std::int32_t m = r.i32("expert count"), d = r.i32("dimension"), c = r.i32("class count");
  if (m <= 0 || d <= 0 || c <= 0 || m > 4096 || d > (1 << 16) || c > (1 << 16)) {
    throw IngestError(what + ": corrupt header");
  }
  const auto um = static_cast<std::size_t>(m), ud = static_cast<std::size_t>(d), uc = static_cast<std::size_t>(c);
  FusionHead h;
  for (std::size_t i = 0; i < um; ++i) h.aligners.push_back(Tensor::from({ud, ud}, r.f64s(ud * ud, "aligner"), true));
  h.classifier = Tensor::from({ud, uc}, r.f64s(ud * uc, "classifier"), true);
  h.bias = Tensor::from({1, uc}, r.f64s(uc, "bias"), true);
  h.class_queries = Tensor::from({ud, uc}, r.f64s(ud * uc, "class queries"), true);
  r.expect_end();
  return h;
}

inline void save_head(const FusionHead& h, const fs::path& p) { io::write_file(p, serialize_head(h)); }

inline FusionHead load_head(const fs::path& p) {
  if (!fs::exists(p)) throw IngestError("head file not found: " + p.string());
  return deserialize_head(io::read_text(p), p.string());
}

inline void write_attention_csv(const Matrix& mean_attention, const std::vector<std::string>& expert_names,
                                const fs::path& p) {
  std::ostringstream os;
  os.precision(17);
  os << "expert,class,mean_attention\n";
  for (std::size_t i = 0; i < mean_attention.rows; ++i)
    for (std::size_t c = 0; c < mean_attention.cols; ++c) {
      os << (i < expert_names.size() ? expert_names[i] : std::to_string(i)) << ',' << c << ','
         << mean_attention(i, c) << '\n';
    }
  io::write_file(p, os.str());
}

}  // namespace gph2
