#pragma once

#include <chrono>
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
#include "gph2/rng.hpp"
#include "gph2/tensor.hpp"

namespace gph2 {

struct PretrainConfig {
  int epochs = 1000;
  int patience = 50;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  double dropout = 0.3;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 128;
  int k_hops = 2;
  double min_delta = 1e-5;

  void validate() const {
    if (epochs < 1) throw ConfigError("pretraining.epochs must be positive");
    if (patience < 1) throw ConfigError("pretraining.patience must be positive");
    if (!(lr > 0)) throw ConfigError("pretraining.lr must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("pretraining.weight_decay must be non-negative");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("pretraining.dropout must lie in [0, 1)");
    if (hidden_dim == 0) throw ConfigError("encoder.hidden_dim must be positive");
    if (k_hops < 1) throw ConfigError("encoder.k_hops must be at least 1");
  }
};

struct CorruptedBatch {
  Matrix shuffled_features;
  std::vector<std::size_t> permutation;  // row i of the result is row permutation[i] of the input
};

inline CorruptedBatch corrupt(const Matrix& x, Rng& rng) {
  CorruptedBatch c{Matrix(), rng.permutation(x.rows)};
  c.shuffled_features = x.select_rows(c.permutation);
  return c;
}

// Summary vector: sigmoid of the column means, 1 x d.
inline Tensor readout(const Tensor& h) {
  if (h.rows() == 0) throw DimensionError("readout: empty input");
  return sigmoid(mean_rows(h));
}

// Discriminator loss on the scores h_v^T s, averaged over the 2n terms.
// log(1 - sigmoid(x)) is evaluated as log_sigmoid(-x).
inline Tensor infomax_loss(const Tensor& h, const Tensor& h_tilde, const Tensor& s) {
  if (h.shape() != h_tilde.shape()) throw DimensionError("infomax_loss: real and corrupted shapes differ");
  if (s.numel() != h.cols()) throw DimensionError("infomax_loss: summary length differs from embedding dim");
  const Tensor st = s.rank() == 2 && s.rows() == 1 ? transpose(s) : s;
  const Tensor pos = matmul(h, st);
  const Tensor negs = matmul(h_tilde, st);
  const Tensor total = add(sum(log_sigmoid(pos)), sum(log_sigmoid(neg(negs))));
  return scale(total, -1.0 / (2.0 * static_cast<double>(h.rows())));
}

inline std::vector<double> dropout_mask(std::size_t count, double rate, Rng& rng) {
  std::vector<double> m(count, 1.0);
  if (rate <= 0) return m;
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : m) v = rng.bernoulli(rate) ? 0.0 : keep;
  return m;
}

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  double elapsed_ms = 0;
};

struct PretrainResult {
  ExpertEncoder encoder;  // parameters at the best-loss epoch
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_loss = 0;
  bool early_stopped = false;
};

namespace detail {

inline Tensor infomax_for_graph(const MultiViewGraph& mv, const ExpertEncoder& enc, double dropout, Rng& rng) {
  const CorruptedBatch bad = corrupt(mv.features, rng);
  const auto m = dropout_mask(mv.features.data.size(), dropout, rng);
  Matrix clean = mv.features, shuffled = bad.shuffled_features;
  for (std::size_t i = 0; i < m.size(); ++i) {
    clean.data[i] *= m[i];
    shuffled.data[i] *= m[i];
  }
  std::vector<Tensor> real, fake;
  for (const auto& v : mv.views) {
    real.push_back(Tensor::from(propagate(v, clean, enc.k_hops)));
    fake.push_back(Tensor::from(propagate(v, shuffled, enc.k_hops)));
  }
  const EncodedViews hr = encode_propagated(real, enc);
  const EncodedViews hf = encode_propagated(fake, enc);
  return infomax_loss(hr.fused, hf.fused, readout(hr.fused));
}

inline std::string history_tail(const std::vector<EpochRecord>& log) {
  std::ostringstream os;
  const std::size_t from = log.size() > 10 ? log.size() - 10 : 0;
  for (std::size_t i = from; i < log.size(); ++i) os << (i > from ? ", " : "") << log[i].loss;
  return os.str();
}

}  // namespace detail

// Trains one expert on a domain group (usually a single graph); per-graph
// losses are summed each epoch. Deterministic in cfg.seed.
inline PretrainResult train_expert(std::span<const MultiViewGraph* const> group, const PretrainConfig& cfg,
                                   const std::string& expert_id) {
  cfg.validate();
  if (group.empty()) throw ConfigError("train_expert: expert '" + expert_id + "' has no graphs");
  for (const auto* g : group) {
    g->validate();
    if (g->features.cols != cfg.hidden_dim) {
      throw DimensionError("train_expert: graph '" + g->name + "' has feature dim " +
                           std::to_string(g->features.cols) + ", expected " + std::to_string(cfg.hidden_dim));
    }
  }
  ExpertEncoder enc = ExpertEncoder::init(cfg.hidden_dim, cfg.k_hops, expert_id, derive_seed(cfg.seed, 0));
  Rng rng(derive_seed(cfg.seed, 1));
  AdamState opt(AdamOptions{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  std::vector<Tensor> params = enc.params();

  PretrainResult res;
  res.best_loss = std::numeric_limits<double>::infinity();
  double plateau_ref = std::numeric_limits<double>::infinity();
  int wait = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tensor loss;
    try {
      for (const auto* g : group) {
        Tensor part = detail::infomax_for_graph(*g, enc, cfg.dropout, rng);
        loss = loss.defined() ? add(loss, part) : part;
      }
    } catch (const NumericError& e) {
      throw NumericError("expert '" + expert_id + "' epoch " + std::to_string(epoch) + ": " + e.what() +
                         "; recent losses [" + detail::history_tail(res.log) + "]");
    }
    const double value = loss.item();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back({epoch, value, ms});
    if (!std::isfinite(value)) {
      throw NumericError("expert '" + expert_id + "' epoch " + std::to_string(epoch) + ": non-finite loss; " +
                         "recent losses [" + detail::history_tail(res.log) + "]");
    }
    if (value < res.best_loss) {
      res.best_loss = value;
      res.best_epoch = epoch;
      res.encoder = enc.clone();
    }
    if (value < plateau_ref - cfg.min_delta) {
      plateau_ref = value;
      wait = 0;
    } else if (++wait >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
    zero_grads(params);
    backward(loss);
    adam_step(params, opt);
  }
  return res;
}

inline PretrainResult train_expert(const MultiViewGraph& mv, const PretrainConfig& cfg, const std::string& expert_id) {
  const MultiViewGraph* one[] = {&mv};
  return train_expert(std::span<const MultiViewGraph* const>(one), cfg, expert_id);
}

inline void write_loss_csv(const std::vector<EpochRecord>& log, const fs::path& p) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,elapsed_ms\n";
  for (const auto& r : log) os << r.epoch << ',' << r.loss << ',' << r.elapsed_ms << '\n';
  io::write_file(p, os.str());
}

}  // namespace gph2
