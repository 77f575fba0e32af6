#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gph2/encoder.hpp"
#include "gph2/error.hpp"
#include "gph2/fusion.hpp"
#include "gph2/graph.hpp"
#include "gph2/multiview.hpp"
#include "gph2/pretrain.hpp"
#include "gph2/rng.hpp"

namespace gph2 {

struct FewShotTask {
  int shots_per_class = 0;
  std::vector<std::vector<std::size_t>> train_ids;  // one list per class
  std::vector<std::size_t> test_ids;
  std::uint64_t seed = 0;

  std::vector<std::size_t> flat_train() const {
    std::vector<std::size_t> out;
    for (const auto& c : train_ids) out.insert(out.end(), c.begin(), c.end());
    return out;
  }
};

// Task t draws m train nodes per class and then a test pool of
// min(floor(test_frac * n_labeled), remaining) labeled nodes, all from
// Rng(derive_seed(seed, t)).
inline std::vector<FewShotTask> sample_tasks(const std::vector<int>& labels, int n_classes, int m, int n_tasks,
                                             double test_frac, std::uint64_t seed) {
  if (m < 1) throw ConfigError("m (shots per class) must be positive");
  if (n_tasks < 1) throw ConfigError("n_tasks must be positive");
  if (!(test_frac > 0 && test_frac <= 1)) throw ConfigError("test_frac must lie in (0, 1]");
  if (n_classes < 1) throw ConfigError("graph has no classes");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  std::size_t n_labeled = 0;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (labels[v] < 0) continue;
    if (labels[v] >= n_classes) throw ConfigError("label " + std::to_string(labels[v]) + " out of range");
    by_class[static_cast<std::size_t>(labels[v])].push_back(v);
    ++n_labeled;
  }
  for (int c = 0; c < n_classes; ++c) {
    const auto have = by_class[static_cast<std::size_t>(c)].size();
    if (have < static_cast<std::size_t>(m)) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(have) + " labeled nodes, fewer than m=" +
                        std::to_string(m));
    }
  }
  const auto want_test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(n_labeled)));

  std::vector<FewShotTask> tasks;
  for (int t = 0; t < n_tasks; ++t) {
    FewShotTask task;
    task.shots_per_class = m;
    task.seed = derive_seed(seed, static_cast<std::uint64_t>(t));
    Rng rng(task.seed);
    std::vector<char> taken(labels.size(), 0);
    for (const auto& members : by_class) {
      std::vector<std::size_t> pool = members;
      rng.shuffle(std::span<std::size_t>(pool));
      pool.resize(static_cast<std::size_t>(m));
      std::sort(pool.begin(), pool.end());
      for (std::size_t v : pool) taken[v] = 1;
      task.train_ids.push_back(std::move(pool));
    }
    std::vector<std::size_t> rest;
    for (std::size_t v = 0; v < labels.size(); ++v) {
      if (labels[v] >= 0 && !taken[v]) rest.push_back(v);
    }
    rng.shuffle(std::span<std::size_t>(rest));
    rest.resize(std::min(want_test, rest.size()));
    std::sort(rest.begin(), rest.end());
    task.test_ids = std::move(rest);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

// Micro F1 pools TP/FP/FN over classes (equal to accuracy here). Macro F1
// averages per-class F1 over all n_classes; a class with no predictions and
// no true members scores 0.
inline std::pair<double, double> micro_macro_f1(const std::vector<int>& pred, const std::vector<int>& truth,
                                                int n_classes) {
  if (pred.size() != truth.size()) throw DimensionError("micro_macro_f1: prediction and truth lengths differ");
  if (pred.empty()) throw DimensionError("micro_macro_f1: empty input");
  if (n_classes < 1) throw ConfigError("micro_macro_f1: no classes");
  const auto nc = static_cast<std::size_t>(n_classes);
  std::vector<double> tp(nc, 0), fp(nc, 0), fn(nc, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= n_classes || truth[i] < 0 || truth[i] >= n_classes) {
      throw DimensionError("micro_macro_f1: class id out of range");
    }
    const auto p = static_cast<std::size_t>(pred[i]), t = static_cast<std::size_t>(truth[i]);
    if (p == t) {
      tp[p] += 1;
    } else {
      fp[p] += 1;
      fn[t] += 1;
    }
  }
  double stp = 0, sfp = 0, sfn = 0, macro = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    stp += tp[c];
    sfp += fp[c];
    sfn += fn[c];
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    macro += denom > 0 ? 2 * tp[c] / denom : 0.0;
  }
  const double micro = 2 * stp / (2 * stp + sfp + sfn);
  return {micro, macro / static_cast<double>(nc)};
}

inline double mean_of(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_std(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double mu = mean_of(x);
  double s = 0;
  for (double v : x) s += (v - mu) * (v - mu);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

struct PretrainSource {
  fs::path path;
  std::string group;  // empty: the graph gets its own expert
};

// Downstream values left unset fall back to the per-dataset table, then to
// FusionConfig defaults.
struct DownstreamOverrides {
  std::optional<int> epochs, patience, nb_layers;
  std::optional<double> lr, dropout, weight_decay;
  std::optional<FusionMode> mode;
  std::optional<bool> align, ortho;
};

struct ExperimentConfig {
  std::vector<PretrainSource> pretrain_graphs;
  fs::path downstream_graph;
  int m = 3;
  int n_tasks = 10;
  double test_frac = 0.9;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 128;
  int n_views = 3;
  double drop_ratio = 0.3;
  PretrainConfig pretrain;
  DownstreamOverrides downstream;
  fs::path output_dir = "out";
  int jobs = 1;
};

struct DatasetDefaults {
  double lr, weight_decay, dropout;
  int epochs, nb_layers;
};

// Best downstream settings per dataset, keyed by lower-case directory name.
inline std::optional<DatasetDefaults> dataset_defaults(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::map<std::string, DatasetDefaults> table = {
      {"cora", {0.01, 5e-4, 0.2, 200, 5}},       {"citeseer", {0.005, 5e-4, 0.2, 200, 4}},
      {"pubmed", {0.01, 5e-4, 0.1, 200, 5}},     {"photo", {0.01, 5e-4, 0.6, 200, 3}},
      {"computer", {0.005, 5e-4, 0.2, 200, 2}},  {"computers", {0.005, 5e-4, 0.2, 200, 2}},
      {"acm", {0.001, 5e-4, 0.2, 200, 2}},       {"aminer", {0.05, 5e-4, 0.2, 200, 4}},
      {"dblp", {0.0005, 5e-4, 0.0, 200, 2}},     {"freebase", {0.0005, 5e-4, 0.2, 200, 4}},
  };
  if (auto it = table.find(name); it != table.end()) return it->second;
  return std::nullopt;
}

inline FusionConfig resolve_downstream(const DownstreamOverrides& o, const std::string& dataset) {
  FusionConfig f;
  f.lr = 0.01;
  f.dropout = 0.2;
  if (auto row = dataset_defaults(dataset)) {
    f.lr = row->lr;
    f.weight_decay = row->weight_decay;
    f.dropout = row->dropout;
    f.epochs = row->epochs;
    f.k_hops = row->nb_layers;
  }
  if (o.epochs) f.epochs = *o.epochs;
  if (o.patience) f.patience = *o.patience;
  if (o.nb_layers) f.k_hops = *o.nb_layers;
  if (o.lr) f.lr = *o.lr;
  if (o.dropout) f.dropout = *o.dropout;
  if (o.weight_decay) f.weight_decay = *o.weight_decay;
  if (o.mode) f.mode = *o.mode;
  if (o.align) f.align = *o.align;
  if (o.ortho) f.ortho = *o.ortho;
  f.validate();
  return f;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline void hash_pretrain(Hasher& h, const PretrainConfig& p) {
  h.pod(p.epochs).pod(p.patience).pod(p.lr).pod(p.weight_decay).pod(p.dropout).pod(p.seed).pod(p.hidden_dim);
  h.pod(p.k_hops).pod(p.min_delta);
}

inline void hash_fusion(Hasher& h, const FusionConfig& f) {
  h.pod(f.epochs).pod(f.patience).pod(f.lr).pod(f.weight_decay).pod(f.dropout).pod(f.k_hops);
  h.pod(static_cast<int>(f.mode)).pod(f.align).pod(f.ortho).pod(f.aligner_noise);
}

// Everything that can change results; output location and parallelism excluded.
inline std::uint64_t config_hash(const ExperimentConfig& c, const FusionConfig& resolved) {
  Hasher h;
  h.str("experiment");
  for (const auto& s : c.pretrain_graphs) h.str(s.path.filename().string()).str(s.group);
  h.str(c.downstream_graph.filename().string());
  h.pod(c.m).pod(c.n_tasks).pod(c.test_frac).pod(c.seed).pod(c.hidden_dim).pod(c.n_views).pod(c.drop_ratio);
  hash_pretrain(h, c.pretrain);
  hash_fusion(h, resolved);
  return h.digest();
}

namespace detail {

// Runs fn(0..n-1) on up to `jobs` threads; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Re-throws the active exception with a context prefix, keeping its type.
[[noreturn]] inline void rethrow_with(const std::string& ctx) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + ": " + e.what());
  } catch (const IngestError& e) {
    throw IngestError(ctx + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(ctx + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(ctx + ": " + e.what());
  }
}

}  // namespace detail

inline ViewConfig view_config(const ExperimentConfig& c, const std::string& graph_name) {
  return {c.hidden_dim, c.n_views, c.drop_ratio, derive_seed(c.seed, Hasher().str("views").str(graph_name).digest())};
}

struct ExpertGroup {
  std::string id;
  std::vector<fs::path> graphs;
};

inline std::vector<ExpertGroup> expert_groups(const ExperimentConfig& c) {
  std::vector<ExpertGroup> groups;
  for (const auto& s : c.pretrain_graphs) {
    const std::string id = s.group.empty() ? s.path.filename().string() : s.group;
    auto it = std::find_if(groups.begin(), groups.end(), [&](const ExpertGroup& g) { return g.id == id; });
    if (it == groups.end()) {
      groups.push_back({id, {s.path}});
    } else {
      it->graphs.push_back(s.path);
    }
  }
  return groups;
}

struct ExpertArtifact {
  ExpertEncoder encoder;
  fs::path file;
  bool from_cache = false;
};

// Loads each expert from output_dir/experts when a file with the matching
// cache key exists, otherwise trains and saves it (with its loss CSV).
inline std::vector<ExpertArtifact> ensure_experts(const ExperimentConfig& c) {
  const auto groups = expert_groups(c);
  if (groups.empty()) throw ConfigError("pretrain_graphs is empty");
  std::vector<ExpertArtifact> out(groups.size());
  const fs::path dir = c.output_dir / "experts";
  detail::parallel_for(groups.size(), c.jobs, [&](std::size_t gi) {
    const auto& grp = groups[gi];
    try {
      std::vector<Graph> graphs;
      for (const auto& p : grp.graphs) {
        if (!fs::is_directory(p)) throw ConfigError("pretrain graph directory not found: " + p.string());
        graphs.push_back(load_graph(p));
      }
      PretrainConfig pc = c.pretrain;
      pc.hidden_dim = c.hidden_dim;
      pc.seed = derive_seed(c.seed, Hasher().str("expert").str(grp.id).digest());
      Hasher key;
      key.str(grp.id);
      for (const auto& g : graphs) key.pod(graph_hash(g));
      hash_pretrain(key, pc);
      key.pod(c.n_views).pod(c.drop_ratio).pod(c.seed);
      const std::string stem = grp.id + "-" + hex64(key.digest());
      const fs::path file = dir / (stem + ".gph2exp");
      if (fs::exists(file)) {
        out[gi] = {load_expert(file), file, true};
        return;
      }
      std::vector<MultiViewGraph> mvs;
      for (const auto& g : graphs) mvs.push_back(build_multiview(g, view_config(c, graph_name(g))));
      std::vector<const MultiViewGraph*> ptrs;
      for (const auto& mv : mvs) ptrs.push_back(&mv);
      PretrainResult r = train_expert(ptrs, pc, grp.id);
      write_loss_csv(r.log, dir / (stem + ".loss.csv"));
      save_expert(r.encoder, file);
      out[gi] = {std::move(r.encoder), file, false};
    } catch (...) {
      detail::rethrow_with("expert '" + grp.id + "'");
    }
  });
  return out;
}

struct TaskScore {
  double micro_f1 = 0;
  double macro_f1 = 0;
};

struct EvalReport {
  std::string dataset;
  int m = 0;
  std::vector<TaskScore> per_task;
  double mean_micro = 0, std_micro = 0, mean_macro = 0, std_macro = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::string> expert_names;
  Matrix mean_attention;  // experts x classes, averaged over tasks
  FusionConfig downstream;

  void aggregate() {
    std::vector<double> mi, ma;
    for (const auto& t : per_task) {
      mi.push_back(t.micro_f1);
      ma.push_back(t.macro_f1);
    }
    mean_micro = mean_of(mi);
    std_micro = sample_std(mi);
    mean_macro = mean_of(ma);
    std_macro = sample_std(ma);
  }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// The timestamp is confined to the single key "generated_at".
inline nlohmann::ordered_json report_json(const EvalReport& r, bool with_timestamp = true) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["m"] = r.m;
  j["per_task"] = nlohmann::ordered_json::array();
  for (const auto& t : r.per_task) j["per_task"].push_back({{"micro_f1", t.micro_f1}, {"macro_f1", t.macro_f1}});
  j["mean_micro"] = r.mean_micro;
  j["std_micro"] = r.std_micro;
  j["mean_macro"] = r.mean_macro;
  j["std_macro"] = r.std_macro;
  j["config_hash"] = hex64(r.config_hash);
  j["experts"] = r.expert_names;
  if (with_timestamp) j["generated_at"] = utc_timestamp();
  return j;
}

inline void write_reports(const EvalReport& r, const fs::path& dir) {
  io::write_file(dir / "report.json", report_json(r).dump(2) + "\n");
  std::ostringstream csv;
  csv << "task,micro_f1,macro_f1\n";
  for (std::size_t t = 0; t < r.per_task.size(); ++t) {
    csv << t << ',' << nlohmann::json(r.per_task[t].micro_f1).dump() << ','
        << nlohmann::json(r.per_task[t].macro_f1).dump() << '\n';
  }
  io::write_file(dir / "report.csv", csv.str());
  write_attention_csv(r.mean_attention, r.expert_names, dir / "attention.csv");
}

// Evaluation of already-built experts on one downstream graph.
inline EvalReport evaluate(const MultiViewGraph& mv, const std::vector<ExpertEncoder>& experts,
                           const FusionConfig& fusion, int m, int n_tasks, double test_frac, std::uint64_t seed,
                           int jobs = 1) {
  if (experts.empty()) throw ConfigError("no experts to evaluate with");
  const std::vector<Matrix> emb = embed_with_experts(mv, experts, fusion.k_hops);
  const auto tasks = sample_tasks(mv.labels, mv.n_classes, m, n_tasks, test_frac, derive_seed(seed, 0x7a5c));
  EvalReport rep;
  rep.dataset = mv.name;
  rep.m = m;
  rep.downstream = fusion;
  rep.per_task.resize(tasks.size());
  for (const auto& e : experts) rep.expert_names.push_back(e.expert_id);
  std::vector<Matrix> attention(tasks.size());
  detail::parallel_for(tasks.size(), jobs, [&](std::size_t t) {
    FusionConfig fc = fusion;
    fc.seed = derive_seed(seed, 0x100 + t);
    const auto train = tasks[t].flat_train();
    const DownstreamResult trained = train_downstream(emb, mv.labels, mv.n_classes, train, fc);
    std::vector<Matrix> test_emb;
    for (const auto& e : emb) test_emb.push_back(e.select_rows(tasks[t].test_ids));
    const Prediction p = predict(test_emb, trained.head, fc);
    std::vector<int> truth;
    for (std::size_t v : tasks[t].test_ids) truth.push_back(mv.labels[v]);
    const auto [mi, ma] = micro_macro_f1(p.classes, truth, mv.n_classes);
    rep.per_task[t] = {mi, ma};
    attention[t] = p.output.mean_attention;
  });
  rep.mean_attention = Matrix(experts.size(), static_cast<std::size_t>(mv.n_classes));
  for (const auto& a : attention)
    for (std::size_t i = 0; i < a.data.size(); ++i) rep.mean_attention.data[i] += a.data[i] / attention.size();
  rep.aggregate();
  return rep;
}

// Full protocol: experts (trained or cached), downstream views, repeated
// few-shot tasks; writes nothing.
inline EvalReport run_experiment(const ExperimentConfig& c) {
  if (!fs::is_directory(c.downstream_graph)) {
    throw ConfigError("downstream graph directory not found: " + c.downstream_graph.string());
  }
  const auto artifacts = ensure_experts(c);
  std::vector<ExpertEncoder> experts;
  for (const auto& a : artifacts) experts.push_back(a.encoder);
  const std::string ds = c.downstream_graph.filename().string();
  try {
    const Graph g = load_graph(c.downstream_graph);
    const FusionConfig fusion = resolve_downstream(c.downstream, graph_name(g));
    const MultiViewGraph mv = build_multiview(g, view_config(c, graph_name(g)));
    EvalReport rep = evaluate(mv, experts, fusion, c.m, c.n_tasks, c.test_frac, c.seed, c.jobs);
    rep.config_hash = config_hash(c, fusion);
    return rep;
  } catch (...) {
    detail::rethrow_with("downstream '" + ds + "'");
  }
}

}  // namespace gph2
