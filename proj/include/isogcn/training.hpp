#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "isogcn/autodiff.hpp"
#include "isogcn/graph.hpp"
#include "isogcn/losses.hpp"
#include "isogcn/model.hpp"

namespace isogcn {

// ---------------------------------------------------------------------------
// Synthetic task

// Stand-in node classification task whose labels depend on which relations
// point at each node, with an isostericity prior that is exactly realizable
// in K dimensions.
struct SyntheticTask {
  TypedGraph graph;
  std::vector<int> labels;
  std::vector<std::size_t> train, validation, test;
  IsostericityMatrix iso;
  Tensor embedding;  // z_r rows, [|R| x K]; iso(a, b) = ||z_a - z_b||

  NodeLabelSet split(const std::vector<std::size_t>& mask) const {
    return NodeLabelSet{labels, mask};
  }
};

struct SyntheticTaskConfig {
  std::size_t num_nodes = 200;
  std::size_t relations = 6;
  std::size_t heads = 4;
  double density = 0.02;  // probability of an edge per ordered node pair
  std::size_t feature_dim = 4;
  std::uint64_t seed = 0;
};

inline IsostericityMatrix iso_from_embedding(const Tensor& z) {
  const std::size_t r = z.rows();
  Tensor d(Shape{r, r});
  for (std::size_t a = 0; a < r; ++a)
    for (std::size_t b = 0; b < r; ++b)
      if (a != b) d(a, b) = norm(sub(row(z, a), row(z, b)));
  return IsostericityMatrix(std::move(d));
}

inline SyntheticTask gen_synthetic_task(const SyntheticTaskConfig& cfg) {
  if (cfg.relations < 2) throw ConfigError("synthetic task needs at least 2 relations");
  if (cfg.heads < 1) throw ConfigError("synthetic task needs K >= 1");
  if (cfg.num_nodes < 5) throw ConfigError("synthetic task needs at least 5 nodes");
  if (cfg.feature_dim < 1) throw ConfigError("feature dimension must be positive");
  if (!(cfg.density >= 0.0 && cfg.density <= 1.0)) {
    throw ConfigError("edge density must lie in [0, 1]");
  }
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Tensor z(Shape{cfg.relations, cfg.heads});
  for (double& v : z.values()) v = normal(rng);
  double max_dist = 0.0;
  for (std::size_t a = 0; a < cfg.relations; ++a)
    for (std::size_t b = a + 1; b < cfg.relations; ++b)
      max_dist = std::max(max_dist, norm(sub(row(z, a), row(z, b))));
  if (max_dist == 0.0) throw ConfigError("degenerate relation embedding");
  z = scale(z, 1.0 / max_dist);

  Tensor direction(Shape{cfg.heads});
  for (double& v : direction.values()) v = normal(rng);
  std::vector<double> relation_score(cfg.relations);
  for (std::size_t r = 0; r < cfg.relations; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < cfg.heads; ++k) s += z(r, k) * direction[k];
    relation_score[r] = s;
  }

  std::bernoulli_distribution has_edge(cfg.density);
  std::uniform_int_distribution<std::size_t> pick_relation(0, cfg.relations - 1);
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < cfg.num_nodes; ++u)
    for (std::size_t v = 0; v < cfg.num_nodes; ++v)
      if (u != v && has_edge(rng)) edges.push_back({u, v, pick_relation(rng)});

  Tensor features(Shape{cfg.num_nodes, cfg.feature_dim});
  for (std::size_t i = 0; i < cfg.num_nodes; ++i) {
    features(i, 0) = 1.0;
    for (std::size_t j = 1; j < cfg.feature_dim; ++j) features(i, j) = normal(rng);
  }

  std::vector<double> stat(cfg.num_nodes, 0.0);
  for (const Edge& e : edges) stat[e.target] += relation_score[e.relation];
  if (std::all_of(stat.begin(), stat.end(), [&](double s) { return s == stat[0]; })) {
    throw ConfigError("degenerate task: every node has the same label statistic");
  }

  // Top half by statistic gets label 1; a seeded shuffle breaks ties so the
  // classes stay balanced.
  std::vector<std::size_t> order(cfg.num_nodes);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return stat[a] < stat[b]; });
  std::vector<int> labels(cfg.num_nodes, 0);
  for (std::size_t i = cfg.num_nodes / 2; i < cfg.num_nodes; ++i) labels[order[i]] = 1;

  std::vector<std::size_t> perm(cfg.num_nodes);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t n_train = cfg.num_nodes * 6 / 10;
  const std::size_t n_val = cfg.num_nodes * 2 / 10;
  std::vector<std::size_t> train(perm.begin(), perm.begin() + n_train);
  std::vector<std::size_t> val(perm.begin() + n_train, perm.begin() + n_train + n_val);
  std::vector<std::size_t> test(perm.begin() + n_train + n_val, perm.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  std::sort(test.begin(), test.end());

  TypedGraph graph(cfg.num_nodes, cfg.relations, std::move(features), std::move(edges));
  IsostericityMatrix iso = iso_from_embedding(z);
  return SyntheticTask{std::move(graph), std::move(labels), std::move(train),
                       std::move(val),   std::move(test),   std::move(iso),
                       std::move(z)};
}

// Task directory layout: graph.json (labels + training mask embedded),
// iso.csv, splits.json, embedding.csv.
inline void save_task(const std::filesystem::path& dir, const SyntheticTask& t) {
  std::filesystem::create_directories(dir);
  NodeLabelSet train = t.split(t.train);
  save_graph((dir / "graph.json").string(), t.graph, &train);
  save_iso_matrix((dir / "iso.csv").string(), t.iso);
  nlohmann::ordered_json splits;
  splits["labels"] = t.labels;
  splits["train"] = t.train;
  splits["validation"] = t.validation;
  splits["test"] = t.test;
  detail::write_text_file((dir / "splits.json").string(), splits.dump() + "\n");
  std::ostringstream emb;
  for (std::size_t r = 0; r < t.embedding.rows(); ++r) {
    for (std::size_t k = 0; k < t.embedding.cols(); ++k) {
      if (k) emb << ',';
      emb << detail::format_double(t.embedding(r, k));
    }
    emb << '\n';
  }
  detail::write_text_file((dir / "embedding.csv").string(), emb.str());
}

inline SyntheticTask load_task(const std::filesystem::path& dir,
                               bool normalize_iso = false) {
  GraphDocument doc = read_graph_document((dir / "graph.json").string());
  IsostericityMatrix iso =
      load_iso_matrix((dir / "iso.csv").string(), normalize_iso);
  if (iso.num_relations() != doc.graph.num_relations()) {
    throw ValidationError("iso.csv has " + std::to_string(iso.num_relations()) +
                          " relations, graph has " +
                          std::to_string(doc.graph.num_relations()));
  }
  nlohmann::json splits;
  try {
    splits = nlohmann::json::parse(detail::read_text_file((dir / "splits.json").string()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("splits.json: ") + e.what());
  }
  SyntheticTask t{doc.graph, {}, {}, {}, {}, iso, Tensor()};
  try {
    t.labels = splits.at("labels").get<std::vector<int>>();
    t.train = splits.at("train").get<std::vector<std::size_t>>();
    t.validation = splits.at("validation").get<std::vector<std::size_t>>();
    t.test = splits.at("test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("splits.json: ") + e.what());
  }
  for (const auto* mask : {&t.train, &t.validation, &t.test}) {
    t.split(*mask).validate(t.graph.num_nodes());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Metrics

struct EvalResult {
  double accuracy = 0.0;
  std::optional<double> auc;  // empty when the mask holds a single class
};

// Mann-Whitney rank statistic with midranks for ties.
inline double compute_auc(std::span<const double> scores,
                          std::span<const int> labels,
                          std::span<const std::size_t> mask) {
  std::vector<std::size_t> idx(mask.begin(), mask.end());
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]] == 1) {
        rank_sum += midrank;
        pos += 1.0;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) {
    throw ArgumentError("AUC undefined: mask contains a single class");
  }
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

inline EvalResult evaluate_logits(const Tensor& logits, const NodeLabelSet& set) {
  if (set.mask.empty()) throw ArgumentError("evaluate: empty mask");
  EvalResult res;
  std::size_t correct = 0;
  for (std::size_t v : set.mask) {
    const int predicted = sigmoid(logits[v]) > 0.5 ? 1 : 0;
    if (predicted == set.labels.at(v)) ++correct;
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(set.mask.size());
  try {
    res.auc = compute_auc(logits.values(), set.labels, set.mask);
  } catch (const ArgumentError&) {
    res.auc.reset();
  }
  return res;
}

inline EvalResult evaluate(const ModelParams& params, const ModelShape& shape,
                           const SyntheticTask& task,
                           const std::vector<std::size_t>& mask) {
  return evaluate_logits(model_logits(task.graph, params, shape.degree_norm),
                         task.split(mask));
}

inline double majority_rate(const SyntheticTask& task,
                            const std::vector<std::size_t>& mask) {
  std::size_t ones = 0;
  for (std::size_t v : mask) ones += task.labels.at(v) == 1;
  const std::size_t n = mask.size();
  return static_cast<double>(std::max(ones, n - ones)) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  ModelKind kind = ModelKind::IsoGcnScaled;
  std::size_t layers = 2;
  std::size_t d_msg = 8;
  std::size_t heads = 4;
  std::size_t bases = 0;
  double lambda = 1.0;
  double fraction = 0.25;
  double learning_rate = 1e-2;
  std::size_t steps = 500;
  std::size_t eval_interval = 10;
  std::uint64_t seed = 0;
  bool degree_norm = false;

  void validate() const {
    if (layers == 0 || d_msg == 0 || heads == 0) {
      throw ConfigError("layer count and dimensions must be positive");
    }
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
    if (!(fraction > 0.0 && fraction <= 1.0)) {
      throw ConfigError("fraction must lie in (0, 1]");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (eval_interval == 0) throw ConfigError("evaluation interval must be positive");
  }

  ModelShape shape_for(const TypedGraph& g) const {
    ModelShape s;
    s.kind = kind;
    s.layers = layers;
    s.d_in = g.feature_dim();
    s.d_msg = d_msg;
    s.heads = heads;
    s.bases = bases;
    s.relations = g.num_relations();
    s.degree_norm = degree_norm;
    return s;
  }
};

struct MetricsRecord {
  std::size_t step = 0;
  double task_loss = 0.0;
  double iso_loss = 0.0;
  double total = 0.0;
  double accuracy = 0.0;       // validation mask
  std::optional<double> auc;   // validation mask

  std::string to_json_line() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["task_loss"] = task_loss;
    j["iso_loss"] = iso_loss;
    j["total"] = total;
    j["accuracy"] = accuracy;
    j["auc"] = auc ? nlohmann::ordered_json(*auc) : nlohmann::ordered_json(nullptr);
    return j.dump();
  }
};

struct TrainResult {
  ModelShape shape;
  ModelParams params;
  std::vector<MetricsRecord> history;
  std::size_t iso_loss_evaluations = 0;
};

// Adaptive-moment first-order optimizer over a flat list of tensors.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
        const double mhat = m_[i][j] / c1;
        const double vhat = v_[i][j] / c2;
        p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

inline std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), 0x150u};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Isostericity loss summed over every attention layer, all layers sharing one
// swap sample.
template <typename T>
T attention_iso_loss(const Model<T>& m, ModelKind kind, const EdgeSwapSample& s,
                     const IsostericityMatrix& iso) {
  std::optional<T> total;
  for (const auto& layer : m.iso) {
    T term = kind == ModelKind::IsoGcnScaled
                 ? scaled_iso_loss(layer.attention, s, iso)
                 : iso_loss(layer.attention, s, iso);
    total = total ? add(*total, term) : term;
  }
  if (!total) throw ConfigError("model has no attention layers");
  return *total;
}

// Full-pair isostericity residual of every attention table, summed.
inline double full_pair_residual(const ModelParams& m, const IsostericityMatrix& iso) {
  const EdgeSwapSample all = full_pair_sample(iso.num_relations());
  double total = 0.0;
  for (const auto& layer : m.iso) total += iso_loss(layer.attention, all, iso).item();
  return total;
}

inline TrainResult train(const TrainConfig& cfg, const SyntheticTask& task) {
  cfg.validate();
  if (uses_attention(cfg.kind) && task.iso.num_relations() != task.graph.num_relations()) {
    throw ConfigError("isostericity matrix does not match the graph's relations");
  }
  TrainResult result;
  result.shape = cfg.shape_for(task.graph);
  std::mt19937_64 rng(cfg.seed);
  result.params = init_model(result.shape, rng);

  const NodeLabelSet train_set = task.split(task.train);
  const NodeLabelSet eval_set = task.split(task.validation);
  const bool iso_active = uses_attention(cfg.kind) && cfg.lambda > 0.0;
  Adam optimizer(cfg.learning_rate);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tape tape;
    const Model<Var> vars = lift_params(tape, result.params);
    const Var features = tape.constant(task.graph.features());
    const Var logits = model_logits(task.graph, features, vars, cfg.degree_norm);
    const Var task_loss = node_bce_loss(logits, train_set);

    Var total = task_loss;
    double iso_value = 0.0;
    if (iso_active) {
      const EdgeSwapSample sample =
          sample_edge_swaps(task.graph, cfg.fraction, step_seed(cfg.seed, step));
      const Var iso = attention_iso_loss(vars, cfg.kind, sample, task.iso);
      result.iso_loss_evaluations += vars.iso.size();
      iso_value = tape.value(iso).item();
      total = add(task_loss, scale(iso, cfg.lambda));
    }

    const LossReport report =
        total_loss(tape.value(task_loss).item(), iso_value, iso_active ? cfg.lambda : 0.0);
    const double total_value = tape.value(total).item();
    if (!std::isfinite(total_value)) {
      throw NumericError("training diverged at step " + std::to_string(step));
    }

    if (step % cfg.eval_interval == 0 || step + 1 == cfg.steps) {
      const EvalResult ev = evaluate_logits(tape.value(logits), eval_set);
      result.history.push_back(MetricsRecord{step, report.task_loss, report.iso_loss,
                                             total_value, ev.accuracy, ev.auc});
    }

    const std::vector<Tensor> grads = tape.backward(total);
    std::vector<Tensor*> targets;
    visit_tensors(result.params,
                  [&](const std::string&, Tensor& t) { targets.push_back(&t); });
    optimizer.step(targets, grads);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Attention-only fit against an isostericity matrix.

struct AlphaFit {
  AttentionTable alpha;
  double loss = 0.0;  // full-pair iso_loss at the returned table
};

inline AlphaFit fit_alpha_to_iso(const IsostericityMatrix& iso, std::size_t heads,
                                 std::size_t steps, std::uint64_t seed,
                                 double learning_rate = 1e-2) {
  if (heads == 0) throw ConfigError("fit_alpha_to_iso: K must be positive");
  std::mt19937_64 rng(seed);
  AttentionTable alpha = init_attention(iso.num_relations(), heads, rng);
  const EdgeSwapSample all = full_pair_sample(iso.num_relations());
  Adam optimizer(learning_rate);
  for (std::size_t step = 0; step < steps; ++step) {
    Tape tape;
    const Var a = tape.param(alpha);
    const Var loss = iso_loss(a, all, iso);
    if (!std::isfinite(tape.value(loss).item())) {
      throw NumericError("fit_alpha_to_iso diverged at step " + std::to_string(step));
    }
    std::vector<Tensor*> targets{&alpha};
    optimizer.step(targets, tape.backward(loss));
  }
  const double final_loss = iso_loss(alpha, all, iso).item();
  if (!std::isfinite(final_loss)) throw NumericError("fit_alpha_to_iso diverged");
  return AlphaFit{std::move(alpha), final_loss};
}

}  // namespace isogcn
