#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "isogcn/errors.hpp"
#include "isogcn/tensor.hpp"

namespace isogcn {

struct Edge {
  std::size_t source = 0;
  std::size_t target = 0;
  std::size_t relation = 0;

  bool operator==(const Edge&) const = default;
};

// Directed multigraph with typed edges. Messages flow source -> target, so
// N_r(v) is the list of sources of type-r edges pointing at v. Immutable once
// built.
class TypedGraph {
 public:
  TypedGraph(std::size_t num_nodes, std::size_t num_relations, Tensor features,
             std::vector<Edge> edges)
      : num_nodes_(num_nodes),
        num_relations_(num_relations),
        features_(std::move(features)),
        edges_(std::move(edges)) {
    if (num_nodes_ == 0) throw ValidationError("graph has no nodes");
    if (num_relations_ == 0) throw ValidationError("graph has no relations");
    if (features_.rank() != 2 || features_.rows() != num_nodes_) {
      throw ValidationError("feature matrix shape " +
                            shape_string(features_.shape()) +
                            " does not have num_nodes=" +
                            std::to_string(num_nodes_) + " rows");
    }
    for (std::size_t i = 0; i < features_.size(); ++i) {
      if (!std::isfinite(features_[i])) {
        throw ValidationError("non-finite feature at node " +
                              std::to_string(i / features_.cols()));
      }
    }
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const Edge& edge = edges_[e];
      if (edge.source >= num_nodes_ || edge.target >= num_nodes_) {
        throw ValidationError("edge " + std::to_string(e) +
                              " references node id outside [0, " +
                              std::to_string(num_nodes_) + ")");
      }
      if (edge.relation >= num_relations_) {
        throw ValidationError("edge " + std::to_string(e) + " has relation " +
                              std::to_string(edge.relation) + " >= " +
                              std::to_string(num_relations_));
      }
      if (edge.source == edge.target) {
        throw ValidationError("edge " + std::to_string(e) + " is a self-loop");
      }
    }
    build_index();
  }

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_relations() const { return num_relations_; }
  std::size_t feature_dim() const { return features_.cols(); }
  const Tensor& features() const { return features_; }
  std::span<const Edge> edges() const { return edges_; }

  // Sources of every (u, v, r) edge, in edge-list order.
  std::span<const std::size_t> neighbors_by_relation(std::size_t v,
                                                     std::size_t r) const {
    if (v >= num_nodes_) throw ArgumentError("node id out of range");
    if (r >= num_relations_) throw ArgumentError("relation id out of range");
    const std::size_t slot = v * num_relations_ + r;
    return std::span<const std::size_t>(sources_).subspan(
        offsets_[slot], offsets_[slot + 1] - offsets_[slot]);
  }

  // Dense [n x n] aggregation operator for relation r: entry (v, u) counts
  // type-r edges u -> v, or 1/|N_r(v)| per edge when mean-normalized.
  Tensor relation_adjacency(std::size_t r, bool mean_normalize = false) const {
    Tensor a(Shape{num_nodes_, num_nodes_});
    for (std::size_t v = 0; v < num_nodes_; ++v) {
      const auto nbrs = neighbors_by_relation(v, r);
      const double w = mean_normalize && !nbrs.empty()
                           ? 1.0 / static_cast<double>(nbrs.size())
                           : 1.0;
      for (std::size_t u : nbrs) a(v, u) += w;
    }
    return a;
  }

  TypedGraph with_features(Tensor features) const {
    return TypedGraph(num_nodes_, num_relations_, std::move(features), edges_);
  }

  TypedGraph with_edge_relation(std::size_t edge, std::size_t relation) const {
    auto edges = edges_;
    edges.at(edge).relation = relation;
    return TypedGraph(num_nodes_, num_relations_, features_, std::move(edges));
  }

  bool operator==(const TypedGraph& o) const {
    return num_nodes_ == o.num_nodes_ && num_relations_ == o.num_relations_ &&
           features_ == o.features_ && edges_ == o.edges_;
  }

 private:
  void build_index() {
    const std::size_t slots = num_nodes_ * num_relations_;
    offsets_.assign(slots + 1, 0);
    for (const Edge& e : edges_) ++offsets_[e.target * num_relations_ + e.relation + 1];
    for (std::size_t s = 0; s < slots; ++s) offsets_[s + 1] += offsets_[s];
    sources_.assign(edges_.size(), 0);
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (const Edge& e : edges_) {
      sources_[cursor[e.target * num_relations_ + e.relation]++] = e.source;
    }
  }

  std::size_t num_nodes_;
  std::size_t num_relations_;
  Tensor features_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> sources_;
};

// Symmetric, nonnegative, zero-diagonal dissimilarity between relations.
class IsostericityMatrix {
 public:
  static constexpr double kSymmetryTolerance = 1e-9;

  explicit IsostericityMatrix(Tensor values) : values_(std::move(values)) {
    if (values_.rank() != 2 || values_.rows() != values_.cols() ||
        values_.rows() == 0) {
      throw ValidationError("isostericity matrix must be square, got " +
                            shape_string(values_.shape()));
    }
    const std::size_t n = values_.rows();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double v = values_(i, j);
        if (!std::isfinite(v)) {
          throw ValidationError("non-finite isostericity entry (" +
                                std::to_string(i) + "," + std::to_string(j) + ")");
        }
        if (v < 0.0) {
          throw ValidationError("negative isostericity entry (" +
                                std::to_string(i) + "," + std::to_string(j) + ")");
        }
      }
      if (std::abs(values_(i, i)) > kSymmetryTolerance) {
        throw ValidationError("nonzero diagonal isostericity entry at " +
                              std::to_string(i));
      }
      values_(i, i) = 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (std::abs(values_(i, j) - values_(j, i)) > kSymmetryTolerance) {
          throw ValidationError("isostericity matrix asymmetric at (" +
                                std::to_string(i) + "," + std::to_string(j) + ")");
        }
        const double mid = 0.5 * (values_(i, j) + values_(j, i));
        values_(i, j) = mid;
        values_(j, i) = mid;
      }
    }
  }

  std::size_t num_relations() const { return values_.rows(); }
  double operator()(std::size_t a, std::size_t b) const { return values_(a, b); }
  const Tensor& values() const { return values_; }

  // Divides by the largest entry; an all-zero matrix is returned unchanged.
  IsostericityMatrix normalized() const {
    double m = 0.0;
    for (double v : values_.values()) m = std::max(m, v);
    if (m == 0.0) return *this;
    return IsostericityMatrix(scale(values_, 1.0 / m));
  }

 private:
  Tensor values_;
};

struct NodeLabelSet {
  std::vector<int> labels;
  std::vector<std::size_t> mask;

  void validate(std::size_t num_nodes) const {
    if (labels.size() != num_nodes) {
      throw ValidationError("expected " + std::to_string(num_nodes) +
                            " labels, got " + std::to_string(labels.size()));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != 0 && labels[i] != 1) {
        throw ValidationError("label of node " + std::to_string(i) +
                              " is not 0/1");
      }
    }
    for (std::size_t id : mask) {
      if (id >= num_nodes) {
        throw ValidationError("mask node id " + std::to_string(id) +
                              " out of range");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// File formats

struct GraphDocument {
  TypedGraph graph;
  std::optional<NodeLabelSet> labels;
};

namespace detail {

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
  if (!out) throw ValidationError("write failed for " + path);
}

inline std::string format_double(double v) {
  std::ostringstream oss;
  oss << std::setprecision(17) << v;
  return oss.str();
}

}  // namespace detail

inline GraphDocument parse_graph_json(const std::string& text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("graph JSON: ") + e.what());
  }
  try {
    const auto num_nodes = doc.at("num_nodes").get<std::size_t>();
    const auto num_relations = doc.at("num_relations").get<std::size_t>();
    const auto& feats = doc.at("features");
    if (!feats.is_array() || feats.size() != num_nodes) {
      throw ValidationError("features must have num_nodes rows");
    }
    const std::size_t d_in = num_nodes ? feats.at(0).size() : 0;
    std::vector<double> values;
    values.reserve(num_nodes * d_in);
    for (std::size_t i = 0; i < num_nodes; ++i) {
      const auto& row = feats.at(i);
      if (!row.is_array() || row.size() != d_in) {
        throw ValidationError("feature row " + std::to_string(i) +
                              " has wrong length");
      }
      for (const auto& x : row) {
        if (!x.is_number()) {
          throw ValidationError("non-numeric feature at node " +
                                std::to_string(i));
        }
        values.push_back(x.get<double>());
      }
    }
    std::vector<Edge> edges;
    const auto& jedges = doc.at("edges");
    if (!jedges.is_array()) throw ParseError("edges must be an array");
    for (std::size_t e = 0; e < jedges.size(); ++e) {
      const auto& t = jedges[e];
      if (!t.is_array() || t.size() != 3) {
        throw ParseError("edge " + std::to_string(e) +
                         " is not a [source, target, relation] triple");
      }
      for (const auto& x : t) {
        if (!x.is_number_integer() || x.get<long long>() < 0) {
          throw ValidationError("edge " + std::to_string(e) +
                                " has a non-integer or negative id");
        }
      }
      edges.push_back({t[0].get<std::size_t>(), t[1].get<std::size_t>(),
                       t[2].get<std::size_t>()});
    }
    TypedGraph graph(num_nodes, num_relations,
                     Tensor::from_external(Shape{num_nodes, d_in}, std::move(values)),
                     std::move(edges));
    std::optional<NodeLabelSet> labels;
    if (doc.contains("labels")) {
      NodeLabelSet ls;
      ls.labels = doc.at("labels").get<std::vector<int>>();
      if (doc.contains("mask")) {
        ls.mask = doc.at("mask").get<std::vector<std::size_t>>();
      } else {
        ls.mask.resize(num_nodes);
        for (std::size_t i = 0; i < num_nodes; ++i) ls.mask[i] = i;
      }
      ls.validate(num_nodes);
      labels = std::move(ls);
    }
    return GraphDocument{std::move(graph), std::move(labels)};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("graph JSON: ") + e.what());
  }
}

inline GraphDocument read_graph_document(const std::string& path) {
  return parse_graph_json(detail::read_text_file(path));
}

inline TypedGraph load_graph(const std::string& path) {
  return read_graph_document(path).graph;
}

inline std::string graph_to_json(const TypedGraph& g,
                                 const NodeLabelSet* labels = nullptr) {
  nlohmann::ordered_json doc;
  doc["num_nodes"] = g.num_nodes();
  doc["num_relations"] = g.num_relations();
  auto feats = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < g.feature_dim(); ++j) row.push_back(g.features()(i, j));
    feats.push_back(std::move(row));
  }
  doc["features"] = std::move(feats);
  auto edges = nlohmann::ordered_json::array();
  for (const Edge& e : g.edges()) edges.push_back({e.source, e.target, e.relation});
  doc["edges"] = std::move(edges);
  if (labels) {
    doc["labels"] = labels->labels;
    doc["mask"] = labels->mask;
  }
  return doc.dump() + "\n";
}

inline void save_graph(const std::string& path, const TypedGraph& g,
                       const NodeLabelSet* labels = nullptr) {
  detail::write_text_file(path, graph_to_json(g, labels));
}

inline IsostericityMatrix parse_iso_csv(const std::string& text,
                                        bool normalize = false) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      if (b == std::string::npos) {
        throw ParseError("iso CSV line " + std::to_string(line_no) +
                         ": empty cell");
      }
      const std::string token = cell.substr(b, e - b + 1);
      double v = 0.0;
      const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
      if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
        throw ParseError("iso CSV line " + std::to_string(line_no) +
                         ": cannot parse '" + token + "'");
      }
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  const std::size_t n = rows.size();
  if (n == 0) throw ParseError("iso CSV is empty");
  std::vector<double> flat;
  flat.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n) {
      throw ParseError("iso CSV row " + std::to_string(i) + " has " +
                       std::to_string(rows[i].size()) + " columns, expected " +
                       std::to_string(n));
    }
    flat.insert(flat.end(), rows[i].begin(), rows[i].end());
  }
  IsostericityMatrix m(Tensor::from_external(Shape{n, n}, std::move(flat)));
  return normalize ? m.normalized() : m;
}

inline IsostericityMatrix load_iso_matrix(const std::string& path,
                                          bool normalize = false) {
  return parse_iso_csv(detail::read_text_file(path), normalize);
}

inline std::string iso_to_csv(const IsostericityMatrix& m) {
  std::ostringstream out;
  const std::size_t n = m.num_relations();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) out << ',';
      out << detail::format_double(m(i, j));
    }
    out << '\n';
  }
  return out.str();
}

inline void save_iso_matrix(const std::string& path, const IsostericityMatrix& m) {
  detail::write_text_file(path, iso_to_csv(m));
}

}  // namespace isogcn
