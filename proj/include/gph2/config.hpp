#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include <toml.hpp>

#include "gph2/error.hpp"
#include "gph2/fusion.hpp"
#include "gph2/harness.hpp"

namespace gph2 {

namespace detail {

inline void reject_unknown(const toml::table& t, std::initializer_list<std::string_view> allowed,
                           const std::string& where) {
  const std::set<std::string_view> ok(allowed);
  for (const auto& [k, v] : t) {
    if (!ok.count(k.str())) throw ConfigError(where + ": unknown key '" + std::string(k.str()) + "'");
  }
}

template <typename T>
std::optional<T> get(const toml::table& t, std::string_view key, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return std::nullopt;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = n->value<double>()) return *v;  // integers are accepted for floats
  } else if constexpr (std::is_same_v<T, bool>) {
    if (n->is_boolean()) return *n->value<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (n->is_string()) return *n->value<std::string>();
  } else {
    if (n->is_integer()) return static_cast<T>(*n->value<std::int64_t>());
  }
  throw ConfigError(where + "." + std::string(key) + ": wrong value type");
}

template <typename T>
void set_if(T& dst, const toml::table& t, std::string_view key, const std::string& where) {
  if (auto v = get<T>(t, key, where)) dst = *v;
}

inline const toml::table* subtable(const toml::table& root, std::string_view key) {
  const toml::node* n = root.get(key);
  if (!n) return nullptr;
  if (!n->is_table()) throw ConfigError("[" + std::string(key) + "] must be a table");
  return n->as_table();
}

}  // namespace detail

// Parses an experiment TOML document. Relative paths resolve against base_dir.
inline ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir,
                                     const std::string& source = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(os.str());
  }
  using detail::get;
  using detail::set_if;
  detail::reject_unknown(root,
                         {"seed", "m", "n_tasks", "test_frac", "output_dir", "jobs", "pretrain_graphs", "downstream",
                          "encoder", "pretraining"},
                         source);
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };

  ExperimentConfig c;
  set_if(c.seed, root, "seed", source);
  set_if(c.m, root, "m", source);
  set_if(c.n_tasks, root, "n_tasks", source);
  set_if(c.test_frac, root, "test_frac", source);
  set_if(c.jobs, root, "jobs", source);
  if (auto o = get<std::string>(root, "output_dir", source)) c.output_dir = resolve(*o);

  if (const toml::node* pg = root.get("pretrain_graphs")) {
    const toml::array* arr = pg->as_array();
    if (!arr) throw ConfigError("pretrain_graphs must be an array");
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const toml::node& e = *arr->get(i);
      const std::string where = "pretrain_graphs[" + std::to_string(i) + "]";
      if (auto s = e.value<std::string>(); s && e.is_string()) {
        c.pretrain_graphs.push_back({resolve(*s), ""});
      } else if (const toml::table* t = e.as_table()) {
        detail::reject_unknown(*t, {"path", "group"}, where);
        auto path = get<std::string>(*t, "path", where);
        if (!path) throw ConfigError(where + ": missing 'path'");
        c.pretrain_graphs.push_back({resolve(*path), get<std::string>(*t, "group", where).value_or("")});
      } else {
        throw ConfigError(where + ": expected a path string or {path, group} table");
      }
    }
  }

  if (const toml::node* ds = root.get("downstream")) {
    if (auto s = ds->value<std::string>(); s && ds->is_string()) {
      c.downstream_graph = resolve(*s);
    } else if (const toml::table* t = ds->as_table()) {
      const std::string w = "downstream";
      detail::reject_unknown(*t,
                             {"path", "epochs", "patience", "lr", "dropout", "weight_decay", "nb_layers", "fusion",
                              "align", "ortho"},
                             w);
      if (auto p = get<std::string>(*t, "path", w)) c.downstream_graph = resolve(*p);
      auto& o = c.downstream;
      o.epochs = get<int>(*t, "epochs", w);
      o.patience = get<int>(*t, "patience", w);
      o.nb_layers = get<int>(*t, "nb_layers", w);
      o.lr = get<double>(*t, "lr", w);
      o.dropout = get<double>(*t, "dropout", w);
      o.weight_decay = get<double>(*t, "weight_decay", w);
      o.align = get<bool>(*t, "align", w);
      o.ortho = get<bool>(*t, "ortho", w);
      if (auto f = get<std::string>(*t, "fusion", w)) {
        if (*f == "attention") {
          o.mode = FusionMode::attention;
        } else if (*f == "uniform") {
          o.mode = FusionMode::uniform;
        } else {
          throw ConfigError("downstream.fusion: expected 'attention' or 'uniform', got '" + *f + "'");
        }
      }
    } else {
      throw ConfigError("downstream must be a path string or a table");
    }
  }

  if (const toml::table* t = detail::subtable(root, "encoder")) {
    detail::reject_unknown(*t, {"hidden_dim", "k_hops", "n_views", "drop_ratio"}, "encoder");
    set_if(c.hidden_dim, *t, "hidden_dim", "encoder");
    set_if(c.pretrain.k_hops, *t, "k_hops", "encoder");
    set_if(c.n_views, *t, "n_views", "encoder");
    set_if(c.drop_ratio, *t, "drop_ratio", "encoder");
  }
  if (const toml::table* t = detail::subtable(root, "pretraining")) {
    const std::string w = "pretraining";
    detail::reject_unknown(*t, {"epochs", "patience", "lr", "weight_decay", "dropout", "min_delta"}, w);
    set_if(c.pretrain.epochs, *t, "epochs", w);
    set_if(c.pretrain.patience, *t, "patience", w);
    set_if(c.pretrain.lr, *t, "lr", w);
    set_if(c.pretrain.weight_decay, *t, "weight_decay", w);
    set_if(c.pretrain.dropout, *t, "dropout", w);
    set_if(c.pretrain.min_delta, *t, "min_delta", w);
  }
  return c;
}

// Range checks shared by every subcommand; needs_downstream is false for
// pretraining-only runs.
inline void validate_config(const ExperimentConfig& c, bool needs_downstream) {
  if (c.pretrain_graphs.empty()) throw ConfigError("pretrain_graphs: at least one graph is required");
  for (const auto& s : c.pretrain_graphs) {
    if (!fs::is_directory(s.path)) throw ConfigError("pretrain_graphs: directory not found: " + s.path.string());
  }
  if (needs_downstream) {
    if (c.downstream_graph.empty()) throw ConfigError("downstream: no graph path given");
    if (!fs::is_directory(c.downstream_graph)) {
      throw ConfigError("downstream: directory not found: " + c.downstream_graph.string());
    }
  }
  if (c.m < 1) throw ConfigError("m must be positive");
  if (c.n_tasks < 1) throw ConfigError("n_tasks must be positive");
  if (!(c.test_frac > 0 && c.test_frac <= 1)) throw ConfigError("test_frac must lie in (0, 1]");
  if (c.jobs < 1) throw ConfigError("jobs must be positive");
  if (c.hidden_dim == 0) throw ConfigError("encoder.hidden_dim must be positive");
  if (c.n_views < 1) throw ConfigError("encoder.n_views must be positive");
  if (!(c.drop_ratio >= 0 && c.drop_ratio < 1)) throw ConfigError("encoder.drop_ratio must lie in [0, 1)");
  PretrainConfig p = c.pretrain;
  p.hidden_dim = c.hidden_dim;
  p.validate();
}

inline ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(io::read_text(path), path.parent_path(), path.string());
}

}  // namespace gph2
