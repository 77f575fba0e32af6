#pragma once

#include <cctype>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gph2/config.hpp"
#include "gph2/error.hpp"
#include "gph2/graph.hpp"
#include "gph2/harness.hpp"
#include "gph2/multiview.hpp"

namespace gph2::cli {

enum ExitCode : int { ok = 0, failure = 1, bad_input = 2, numeric = 3 };

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> jobs;
};

inline ExperimentConfig configure(const fs::path& config_path, const Overrides& o) {
  ExperimentConfig c = load_config(config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.jobs) c.jobs = *o.jobs;
  return c;
}

inline void cmd_pretrain(const ExperimentConfig& c, std::ostream& out) {
  validate_config(c, false);
  for (const auto& a : ensure_experts(c)) {
    out << "expert " << a.encoder.expert_id << (a.from_cache ? " cached " : " trained ") << a.file.string() << '\n';
  }
}

// Summary lines use the same number formatting as report.json.
inline void print_summary(const EvalReport& r, std::ostream& out) {
  const auto j = report_json(r, false);
  for (const char* k : {"dataset", "m", "mean_micro", "std_micro", "mean_macro", "std_macro", "config_hash"}) {
    const auto& v = j.at(k);
    out << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  }
}

inline void cmd_eval(const ExperimentConfig& c, std::ostream& out) {
  validate_config(c, true);
  const EvalReport r = run_experiment(c);
  write_reports(r, c.output_dir);
  print_summary(r, out);
}

inline std::string display_name(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline void cmd_inspect(const fs::path& dir, std::ostream& out) {
  if (!fs::is_directory(dir)) throw ConfigError("graph directory not found: " + dir.string());
  const Graph g = load_graph(dir);
  if (const auto* h = std::get_if<HomoGraph>(&g)) {
    out << "Graph: " << h->name << " (homogeneous)\n";
    out << display_name(h->node_type) << ": " << h->n_nodes << '\n';
    out << "Edges: " << undirected_edge_count(h->edges) << '\n';
    out << "Features: " << h->features.cols << '\n';
    out << "Classes: " << h->n_classes << '\n';
    return;
  }
  const auto& h = std::get<HeteroGraph>(g);
  out << "Graph: " << h.name << " (heterogeneous, target " << h.target_type << ")\n";
  for (const auto& t : h.node_types) {
    out << display_name(t.name) << ": " << t.count;
    if (t.features) out << " (features " << t.features->cols << ")";
    out << '\n';
  }
  for (const auto& r : h.relations) {
    out << display_name(r.key.src) << "-" << display_name(r.key.dst) << " [" << r.key.name
        << "]: " << r.adjacency.nnz() << '\n';
  }
  for (const auto& mp : h.metapaths) {
    out << "Meta-path " << mp.name << ": " << undirected_edge_count(metapath_adjacency(h, mp)) << " target pairs\n";
  }
  out << "Classes: " << h.n_classes << '\n';
}

// Runs the command line and maps errors to exit codes: 2 for configuration
// and ingestion problems, 3 for numeric failures.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-domain graph pre-training with expert fusion", "gph2"};
  app.require_subcommand(1);
  std::string config_path, graph_dir;
  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment TOML file")->required();
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory (overrides the config)");
    sub->add_option("--jobs", o.jobs, "maximum concurrent expert trainings")->check(CLI::PositiveNumber);
  };
  CLI::App* pre = app.add_subcommand("pretrain", "train or load the experts for every pre-training graph");
  CLI::App* ev = app.add_subcommand("eval", "few-shot evaluation on the downstream graph");
  CLI::App* ins = app.add_subcommand("inspect", "print statistics of a graph directory");
  add_common(pre);
  add_common(ev);
  ins->add_option("graph_dir", graph_dir, "graph directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : bad_input;
  }

  try {
    if (*pre) {
      cmd_pretrain(configure(config_path, o), out);
    } else if (*ev) {
      cmd_eval(configure(config_path, o), out);
    } else {
      cmd_inspect(graph_dir, out);
    }
    return ok;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return numeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return bad_input;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return bad_input;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return failure;
  }
}

}  // namespace gph2::cli
