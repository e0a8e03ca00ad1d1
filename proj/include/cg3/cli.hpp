#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cg3/graph.hpp"
#include "cg3/report.hpp"
#include "cg3/trainer.hpp"

namespace cg3::cli {

using nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kLoad = 3, kTraining = 4 };

// ---------------------------------------------------------------------------
// Train settings: defaults < config file < flags. Both sources are collected as
// JSON objects keyed by flag name (without the leading dashes).

struct TrainSettings {
  train::TrainConfig config;
  std::size_t seeds = 1;
  bool grid = false;
  std::size_t grid_seeds = 1;
};

namespace detail {

template <class T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw UsageError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0))
        throw UsageError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw UsageError("");
    } else {
      if (!v.is_string()) throw UsageError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw UsageError("setting '" + key + "' has the wrong type: " + v.dump());
  }
}

}  // namespace detail

inline void apply_settings(TrainSettings& s, const json& obj) {
  if (!obj.is_object()) throw UsageError("train settings must be a JSON object");
  auto& c = s.config;
  for (const auto& [key, v] : obj.items()) {
    using detail::get_as;
    if (key == "mode") {
      const auto m = train::parse_mode(get_as<std::string>(v, key));
      if (!m) throw UsageError("unknown mode '" + v.get<std::string>() + "'");
      c.mode = *m;
    } else if (key == "seed") {
      c.seed = get_as<std::uint64_t>(v, key);
    } else if (key == "seeds") {
      s.seeds = get_as<std::size_t>(v, key);
    } else if (key == "grid") {
      s.grid = get_as<bool>(v, key);
    } else if (key == "grid-seeds") {
      s.grid_seeds = get_as<std::size_t>(v, key);
    } else if (key == "max-iters") {
      c.max_iters = get_as<std::size_t>(v, key);
    } else if (key == "hidden") {
      c.hidden = get_as<std::size_t>(v, key);
    } else if (key == "levels") {
      c.levels = get_as<std::size_t>(v, key);
    } else if (key == "lambda-phi1") {
      c.weights.lambda_phi1 = get_as<double>(v, key);
    } else if (key == "lambda-ssc") {
      c.weights.lambda_ssc = get_as<double>(v, key);
    } else if (key == "lambda-g2") {
      c.weights.lambda_g2 = get_as<double>(v, key);
    } else if (key == "lr") {
      c.adam.lr = get_as<double>(v, key);
    } else if (key == "dropout") {
      c.dropout = get_as<double>(v, key);
    } else if (key == "patience") {
      c.patience = get_as<std::size_t>(v, key);
    } else if (key == "exact-contrast") {
      c.exact_contrast = get_as<bool>(v, key);
    } else if (key == "neg-ratio") {
      c.neg_ratio = get_as<double>(v, key);
    } else if (key == "normalize-rows") {
      c.normalize_rows = get_as<bool>(v, key);
    } else {
      throw UsageError("unknown setting '" + key + "'");
    }
  }
}

inline void validate_settings(const TrainSettings& s) {
  if (s.seeds < 1) throw UsageError("--seeds must be >= 1");
  if (s.grid_seeds < 1) throw UsageError("--grid-seeds must be >= 1");
  try {
    s.config.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Predictions file: "node,label" header, then one line per node.

inline std::string predictions_csv(const std::vector<int>& pred) {
  std::string out = "node,label\n";
  for (std::size_t i = 0; i < pred.size(); ++i)
    out += std::to_string(i) + "," + std::to_string(pred[i]) + "\n";
  return out;
}

inline std::vector<int> read_predictions(const fs::path& p, std::size_t nodes) {
  std::vector<std::string> lines;
  try {
    lines = graph::detail::read_lines(p);
  } catch (const LoadError&) {
    throw LoadError("missing predictions file: " + p.string());
  }
  std::vector<int> pred(nodes, graph::kUnknownLabel);
  std::vector<char> seen(nodes, 0);
  std::size_t count = 0;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (ln == 0 && lines[ln] == "node,label") continue;
    const auto cells = graph::detail::split_commas(lines[ln]);
    std::size_t node = 0;
    int label = 0;
    if (cells.size() != 2 || !graph::detail::parse_number(cells[0], node) ||
        !graph::detail::parse_number(cells[1], label))
      throw LoadError(p.string() + ":" + std::to_string(ln + 1) + ": expected 'node,label'");
    if (node >= nodes)
      throw LoadError(p.string() + ":" + std::to_string(ln + 1) + ": node " + std::to_string(node) +
                      " outside a graph of " + std::to_string(nodes) + " nodes");
    if (seen[node])
      throw LoadError(p.string() + ":" + std::to_string(ln + 1) + ": node " + std::to_string(node) +
                      " listed twice");
    seen[node] = 1;
    pred[node] = label;
    ++count;
  }
  if (count != nodes)
    throw LoadError(p.string() + ": " + std::to_string(count) + " predictions for " +
                    std::to_string(nodes) + " nodes");
  return pred;
}

inline std::string embeddings_tsv(const train::Model::Outputs& o) {
  std::string out = "node";
  for (std::size_t j = 0; j < o.local.cols(); ++j) out += "\tphi1_" + std::to_string(j);
  for (std::size_t j = 0; j < o.global.cols(); ++j) out += "\tphi2_" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < o.local.rows(); ++i) {
    out += std::to_string(i);
    for (double v : o.local.row(i)) out += "\t" + graph::detail::format_double(v);
    for (double v : o.global.row(i)) out += "\t" + graph::detail::format_double(v);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct TrainArgs {
  std::string data;
  std::string out;
  std::optional<std::string> config_file;
  json flags = json::object();
};

inline int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  TrainSettings s;
  try {
    if (args.config_file) {
      std::ifstream in(*args.config_file, std::ios::binary);
      if (!in) throw UsageError("cannot read config file " + *args.config_file);
      json file;
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw UsageError("malformed config file " + *args.config_file + ": " + e.what());
      }
      apply_settings(s, file);
    }
    apply_settings(s, args.flags);
    validate_settings(s);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  graph::GraphDataset ds;
  std::string hash;
  try {
    ds = graph::load_bundle(args.data);
    hash = report::bundle_hash(args.data);
    if (ds.train.empty()) throw LoadError("bundle " + args.data + " has no training nodes");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kLoad;
  }

  json grid_json;
  std::vector<train::TrainResult> runs;
  try {
    if (s.grid) {
      const auto g = train::grid_search(ds, s.config, s.grid_seeds);
      grid_json = json::array();
      for (const auto& e : g.entries)
        grid_json.push_back({{"lambda_phi1", e.weights.lambda_phi1},
                             {"lambda_ssc", e.weights.lambda_ssc},
                             {"lambda_g2", e.weights.lambda_g2},
                             {"mean_val_acc", e.mean_val_acc}});
      s.config.weights = g.best;
    }
    runs = train::train_seeds(ds, s.config, s.seeds);
  } catch (const std::exception& e) {
    err << "error: training aborted: " << e.what() << "\n";
    return kTraining;
  }

  std::vector<double> test_acc, val_acc;
  json run_list = json::array();
  std::string metrics;
  for (const auto& r : runs) {
    test_acc.push_back(r.report.test_acc);
    val_acc.push_back(r.report.best_val_acc);
    run_list.push_back(report::run_json(r.report));
    metrics += report::metrics_jsonl(r.report);
  }
  const auto test = train::summarize(test_acc);
  const auto val = train::summarize(val_acc);
  char line[128];
  std::snprintf(line, sizeof line, "test accuracy %.4f +- %.4f over %zu seed%s", test.mean,
                test.stddev, runs.size(), runs.size() == 1 ? "" : "s");

  json rep{{"config", report::to_json(s.config)},
           {"seeds", s.seeds},
           {"dataset",
            {{"path", args.data},
             {"hash", hash},
             {"nodes", ds.num_nodes()},
             {"edges", ds.num_edges()},
             {"features", ds.num_features()},
             {"classes", ds.num_classes}}},
           {"runs", std::move(run_list)},
           {"test_acc_mean", test.mean},
           {"test_acc_std", test.stddev},
           {"best_val_acc_mean", val.mean},
           {"summary", line}};
  if (s.grid) rep["grid"] = grid_json;

  // The first seed's model supplies the embeddings and predictions.
  const auto& first = runs.front().model;
  const fs::path dir(args.out);
  const json outputs{{"report", (dir / "report.json").string()},
                     {"metrics", (dir / "metrics.jsonl").string()},
                     {"embeddings", (dir / "embeddings.tsv").string()},
                     {"predictions", (dir / "predictions.csv").string()}};
  try {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    using graph::detail::write_file;
    write_file(dir / "report.json", rep.dump(2) + "\n");
    write_file(dir / "metrics.jsonl", metrics);
    write_file(dir / "embeddings.tsv", embeddings_tsv(first.infer(ds.features)));
    write_file(dir / "predictions.csv", predictions_csv(train::predict(first, ds)));
    json manifest{{"command", "train"},
                  {"config", report::to_json(s.config)},
                  {"seed", s.config.seed},
                  {"seeds", s.seeds},
                  {"grid", s.grid},
                  {"dataset", {{"path", args.data}, {"hash", hash}}},
                  {"outputs", outputs},
                  {"timestamp", utc_timestamp()}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  out << line << "\n";
  return kOk;
}

inline int cmd_gen_sbm(const graph::SbmSpec& spec, const std::string& out_dir, std::ostream& out,
                       std::ostream& err) {
  graph::GraphDataset ds;
  try {
    spec.validate();
    ds = graph::generate_sbm(spec);
  } catch (const SpecError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  try {
    graph::save_bundle(ds, out_dir);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  out << json{{"out", out_dir}, {"nodes", ds.num_nodes()}, {"edges", ds.num_edges()}}.dump() << "\n";
  return kOk;
}

inline int cmd_eval(const std::string& data, const std::string& predictions, std::ostream& out,
                    std::ostream& err) {
  try {
    const auto ds = graph::load_bundle(data);
    const auto pred = read_predictions(predictions, ds.num_nodes());
    json acc = json::object();
    for (auto s : {graph::Split::train, graph::Split::val, graph::Split::test})
      acc[graph::split_name(s)] = ds.split(s).empty() ? json(nullptr) : json(train::evaluate(pred, ds, s));
    out << acc.dump() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kLoad;
  }
}

// ---------------------------------------------------------------------------
// Argument parsing

/// Entry point. `args` excludes the program name.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Contrastive graph learning with two graph views"};
  app.name("cg3");
  app.require_subcommand(1);

  TrainArgs targs;
  auto* train_cmd = app.add_subcommand("train", "train on a dataset bundle");
  train_cmd->add_option("--data", targs.data, "bundle directory")->required();
  train_cmd->add_option("--out", targs.out, "output directory")->required();
  train_cmd->add_option("--config", targs.config_file, "JSON file of settings keyed by flag name");

  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seeds, max_iters, hidden, levels, patience, grid_seeds;
  std::optional<double> phi1, ssc, g2, lr, dropout, neg_ratio;
  std::optional<bool> exact, normalize;
  bool grid = false;
  train_cmd->add_option("--mode", mode)
      ->check(CLI::IsMember({"full", "no-contrastive", "no-generative", "gcn-baseline"}));
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--seeds", seeds, "independent runs with seeds seed..seed+N-1");
  train_cmd->add_option("--max-iters", max_iters);
  train_cmd->add_option("--hidden", hidden);
  train_cmd->add_option("--levels", levels);
  train_cmd->add_option("--lambda-phi1", phi1);
  train_cmd->add_option("--lambda-ssc", ssc);
  train_cmd->add_option("--lambda-g2", g2);
  train_cmd->add_option("--lr", lr);
  train_cmd->add_option("--dropout", dropout);
  train_cmd->add_option("--patience", patience);
  train_cmd->add_option("--exact-contrast", exact);
  train_cmd->add_option("--neg-ratio", neg_ratio);
  train_cmd->add_option("--normalize-rows", normalize);
  train_cmd->add_flag("--grid", grid, "grid-search the loss weights on validation accuracy first");
  train_cmd->add_option("--grid-seeds", grid_seeds, "runs per grid point");

  graph::SbmSpec spec;
  std::string sbm_out;
  auto* gen_cmd = app.add_subcommand("gen-sbm", "write a stochastic block model bundle");
  gen_cmd->add_option("--out", sbm_out, "output bundle directory")->required();
  gen_cmd->add_option("--nodes-per-block", spec.nodes_per_block);
  gen_cmd->add_option("--blocks", spec.blocks);
  gen_cmd->add_option("--p-in", spec.p_in);
  gen_cmd->add_option("--p-out", spec.p_out);
  gen_cmd->add_option("--features", spec.feature_dim);
  gen_cmd->add_option("--noise", spec.noise);
  gen_cmd->add_option("--labels-per-class", spec.labels_per_class);
  gen_cmd->add_option("--val-per-class", spec.val_per_class);
  gen_cmd->add_option("--seed", spec.seed);

  std::string eval_data, eval_pred;
  auto* eval_cmd = app.add_subcommand("eval", "score a predictions file against a bundle");
  eval_cmd->add_option("--data", eval_data, "bundle directory")->required();
  eval_cmd->add_option("--predictions", eval_pred, "predictions.csv")->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  if (*train_cmd) {
    auto put = [&](const char* key, const auto& v) {
      if (v) targs.flags[key] = *v;
    };
    put("mode", mode);
    put("seed", seed);
    put("seeds", seeds);
    put("max-iters", max_iters);
    put("hidden", hidden);
    put("levels", levels);
    put("lambda-phi1", phi1);
    put("lambda-ssc", ssc);
    put("lambda-g2", g2);
    put("lr", lr);
    put("dropout", dropout);
    put("patience", patience);
    put("exact-contrast", exact);
    put("neg-ratio", neg_ratio);
    put("normalize-rows", normalize);
    put("grid-seeds", grid_seeds);
    if (grid) targs.flags["grid"] = true;
    return cmd_train(targs, out, err);
  }
  if (*gen_cmd) return cmd_gen_sbm(spec, sbm_out, out, err);
  return cmd_eval(eval_data, eval_pred, out, err);
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace cg3::cli
