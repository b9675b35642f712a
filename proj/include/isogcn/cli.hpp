#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "isogcn/analysis.hpp"
#include "isogcn/training.hpp"

namespace isogcn::cli {

namespace fs = std::filesystem;

struct Options {
  std::size_t nodes = 200;
  std::size_t relations = 6;
  std::size_t k = 4;
  bool k_given = false;
  double density = 0.02;
  std::uint64_t seed = 0;
  std::string out;
  std::string model = "iso-gcn-scaled";
  std::string task;
  std::size_t steps = 500;
  double lr = 1e-2;
  double lambda = 1.0;
  double fraction = 0.25;
  std::size_t layers = 2;
  std::size_t dmsg = 8;
  std::size_t basis = 0;
  bool normalize_iso = false;
  bool degree_norm = false;
  std::size_t instances = 1000;
};

namespace detail {

inline void require_task_dir(const std::string& task) {
  if (task.empty()) throw ConfigError("--task is required");
  for (const char* f : {"graph.json", "iso.csv", "splits.json"}) {
    if (!fs::exists(fs::path(task) / f)) {
      throw ValidationError("task directory " + task + " has no " + f);
    }
  }
}

inline fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

inline nlohmann::ordered_json eval_record(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["auc"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json(nullptr);
  return j;
}

inline nlohmann::ordered_json split_report(const ModelParams& params,
                                           const ModelShape& shape,
                                           const SyntheticTask& task) {
  nlohmann::ordered_json j;
  j["train"] = eval_record(evaluate(params, shape, task, task.train));
  j["validation"] = eval_record(evaluate(params, shape, task, task.validation));
  j["test"] = eval_record(evaluate(params, shape, task, task.test));
  j["test_majority_rate"] = majority_rate(task, task.test);
  if (uses_attention(shape.kind)) j["full_pair_iso_residual"] = full_pair_residual(params, task.iso);
  return j;
}

}  // namespace detail

inline int cmd_gen(const Options& o) {
  const fs::path out = detail::prepare_out(o.out);
  SyntheticTaskConfig cfg;
  cfg.num_nodes = o.nodes;
  cfg.relations = o.relations;
  cfg.heads = o.k;
  cfg.density = o.density;
  cfg.seed = o.seed;
  const SyntheticTask task = gen_synthetic_task(cfg);
  save_task(out, task);
  std::cerr << "wrote task with " << task.graph.num_nodes() << " nodes, "
            << task.graph.edges().size() << " edges to " << out.string() << "\n";
  return 0;
}

inline int cmd_train(const Options& o) {
  detail::require_task_dir(o.task);
  const fs::path out = detail::prepare_out(o.out);
  const SyntheticTask task = load_task(o.task, o.normalize_iso);
  TrainConfig cfg;
  cfg.kind = parse_model_kind(o.model);
  cfg.layers = o.layers;
  cfg.d_msg = o.dmsg;
  cfg.heads = o.k;
  cfg.bases = o.basis;
  cfg.lambda = o.lambda;
  cfg.fraction = o.fraction;
  cfg.learning_rate = o.lr;
  cfg.steps = o.steps;
  cfg.seed = o.seed;
  cfg.degree_norm = o.degree_norm;
  const TrainResult result = train(cfg, task);

  std::ostringstream history;
  for (const auto& rec : result.history) history << rec.to_json_line() << '\n';
  isogcn::detail::write_text_file((out / "history.jsonl").string(), history.str());
  save_params((out / "params.txt").string(), result.shape, result.params);
  nlohmann::ordered_json summary = detail::split_report(result.params, result.shape, task);
  summary["model"] = to_string(cfg.kind);
  summary["steps"] = cfg.steps;
  summary["iso_loss_evaluations"] = result.iso_loss_evaluations;
  isogcn::detail::write_text_file((out / "summary.json").string(), summary.dump(2) + "\n");
  std::cerr << to_string(cfg.kind) << ": " << cfg.steps << " steps, test accuracy "
            << summary["test"]["accuracy"].get<double>() << "\n";
  return 0;
}

inline int cmd_eval(const Options& o) {
  detail::require_task_dir(o.task);
  const fs::path out = detail::prepare_out(o.out);
  if (!fs::exists(out / "params.txt")) {
    throw ValidationError("no params.txt in " + out.string());
  }
  const SyntheticTask task = load_task(o.task, o.normalize_iso);
  const LoadedParams loaded = load_params((out / "params.txt").string());
  if (loaded.shape.relations != task.graph.num_relations() ||
      loaded.shape.d_in != task.graph.feature_dim()) {
    throw ValidationError("parameters do not match the task graph");
  }
  nlohmann::ordered_json report = detail::split_report(loaded.params, loaded.shape, task);
  report["model"] = to_string(loaded.shape.kind);
  isogcn::detail::write_text_file((out / "eval.json").string(), report.dump(2) + "\n");
  std::cerr << "wrote " << (out / "eval.json").string() << "\n";
  return 0;
}

inline int cmd_verify(const Options& o) {
  const auto reports = run_identity_suites(o.instances, o.seed);
  bool all = true;
  std::ostringstream jsonl;
  for (const auto& r : reports) {
    std::cout << r.to_text() << "\n";
    jsonl << r.to_json().dump() << '\n';
    all = all && r.passed;
  }
  if (!o.out.empty()) {
    const fs::path out = detail::prepare_out(o.out);
    isogcn::detail::write_text_file((out / "identities.jsonl").string(), jsonl.str());
  }
  return all ? 0 : 2;
}

inline int cmd_pca(const Options& o) {
  detail::require_task_dir(o.task);
  const fs::path out = detail::prepare_out(o.out);
  const IsostericityMatrix iso =
      load_iso_matrix((fs::path(o.task) / "iso.csv").string(), o.normalize_iso);
  const std::size_t k = o.k_given ? o.k : iso.num_relations();
  const auto ratios = pca_explained_variance(iso, k);
  nlohmann::ordered_json j;
  j["components"] = k;
  j["explained_variance_ratio"] = ratios;
  std::vector<double> cumulative;
  double acc = 0.0;
  for (double r : ratios) cumulative.push_back(acc += r);
  j["cumulative"] = cumulative;
  isogcn::detail::write_text_file((out / "pca.json").string(), j.dump(2) + "\n");
  std::cerr << "wrote " << (out / "pca.json").string() << "\n";
  return 0;
}

inline int cmd_fit_alpha(const Options& o) {
  detail::require_task_dir(o.task);
  const fs::path out = detail::prepare_out(o.out);
  const IsostericityMatrix iso =
      load_iso_matrix((fs::path(o.task) / "iso.csv").string(), o.normalize_iso);
  const AlphaFit fit = fit_alpha_to_iso(iso, o.k, o.steps, o.seed, o.lr);
  std::ostringstream table;
  double worst = 0.0;
  for (std::size_t r = 0; r < fit.alpha.rows(); ++r) {
    for (std::size_t k = 0; k < fit.alpha.cols(); ++k) {
      if (k) table << ',';
      table << isogcn::detail::format_double(fit.alpha(r, k));
    }
    table << '\n';
    for (std::size_t s = 0; s < fit.alpha.rows(); ++s) {
      const double d = norm(sub(row(fit.alpha, r), row(fit.alpha, s)));
      worst = std::max(worst, std::abs(d - iso(r, s)));
    }
  }
  isogcn::detail::write_text_file((out / "alpha.csv").string(), table.str());
  nlohmann::ordered_json j;
  j["k"] = o.k;
  j["steps"] = o.steps;
  j["residual"] = fit.loss;
  j["max_distance_error"] = worst;
  isogcn::detail::write_text_file((out / "fit.json").string(), j.dump(2) + "\n");
  std::cerr << "fit-alpha residual " << fit.loss << "\n";
  return 0;
}

// Exit status: 0 success, 1 usage/validation error, 2 numeric failure.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"Relational graph layers with an isostericity prior on attention"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen", "generate a synthetic typed-graph task");
  gen->add_option("--nodes", o.nodes, "number of nodes");
  gen->add_option("--relations", o.relations, "number of relation types");
  gen->add_option("--k", o.k, "dimension of the hidden relation embedding");
  gen->add_option("--density", o.density, "edge probability per ordered node pair");
  gen->add_option("--seed", o.seed);
  gen->add_option("--out", o.out, "output task directory")->required();

  auto* tr = app.add_subcommand("train", "train a model on a task directory");
  tr->add_option("--model", o.model)
      ->check(CLI::IsMember({"baseline-rgcn", "iso-gcn-unscaled", "iso-gcn-scaled"}));
  tr->add_option("--task", o.task)->required();
  tr->add_option("--steps", o.steps);
  tr->add_option("--lr", o.lr);
  tr->add_option("--lambda", o.lambda);
  tr->add_option("--fraction", o.fraction);
  tr->add_option("--layers", o.layers);
  tr->add_option("--dmsg", o.dmsg);
  tr->add_option("--k", o.k, "attention heads");
  tr->add_option("--basis", o.basis, "basis count for baseline kernels (0 = none)");
  tr->add_flag("--normalize-iso", o.normalize_iso);
  tr->add_flag("--degree-norm", o.degree_norm);
  tr->add_option("--seed", o.seed);
  tr->add_option("--out", o.out, "run directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate saved parameters on a task");
  ev->add_option("--task", o.task)->required();
  ev->add_option("--out", o.out, "run directory holding params.txt")->required();
  ev->add_flag("--normalize-iso", o.normalize_iso);

  auto* ver = app.add_subcommand("verify", "run the algebraic identity suites");
  ver->add_option("--instances", o.instances);
  ver->add_option("--seed", o.seed);
  ver->add_option("--out", o.out, "optional directory for identities.jsonl");

  auto* pca = app.add_subcommand("pca", "explained variance of the isostericity rows");
  pca->add_option("--task", o.task)->required();
  auto* pca_k = pca->add_option("--k", o.k, "number of components");
  pca->add_flag("--normalize-iso", o.normalize_iso);
  pca->add_option("--out", o.out)->required();

  auto* fit = app.add_subcommand("fit-alpha", "fit an attention table to the isostericity matrix");
  fit->add_option("--task", o.task)->required();
  fit->add_option("--k", o.k, "attention heads");
  fit->add_option("--steps", o.steps);
  fit->add_option("--lr", o.lr);
  fit->add_option("--seed", o.seed);
  fit->add_flag("--normalize-iso", o.normalize_iso);
  fit->add_option("--out", o.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }
  o.k_given = pca_k->count() > 0;
  if (*fit && fit->get_option("--steps")->count() == 0) o.steps = 3000;

  try {
    if (*gen) return cmd_gen(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*ver) return cmd_verify(o);
    if (*pca) return cmd_pca(o);
    if (*fit) return cmd_fit_alpha(o);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

inline int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("isogcn");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace isogcn::cli
