#pragma once

#include <cmath>
#include <cstddef>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "isogcn/autodiff.hpp"
#include "isogcn/graph.hpp"
#include "isogcn/tensor.hpp"

namespace isogcn {

// Layer parameter bundles are templated on the value type so the same forward
// code runs on plain Tensors (evaluation) and on tape Vars (training).

// W_r = sum_b coefficients[r][b] * bases[b]
template <typename T>
struct BasisKernels {
  std::vector<T> bases;  // B x [d_out x d_in]
  T coefficients;        // [|R| x B]
};

template <typename T>
struct RgcnLayer {
  T self_kernel;                         // W0 [d_out x d_in]
  std::vector<T> relation_kernels;       // W_r, unused when `basis` is set
  std::optional<BasisKernels<T>> basis;
  std::vector<double> relation_scale;    // fixed alpha_r, 1 for plain RGCN
};

// Shared-kernel multi-head attention layer. Output width is K * d_msg with
// head k occupying columns [k*d_msg, (k+1)*d_msg).
template <typename T>
struct IsoAttnLayer {
  T self_kernel;    // W0 [(K*d_msg) x d_in]
  T shared_kernel;  // W  [d_msg x d_in]
  T attention;      // alpha [|R| x K], row r is alpha_r
};

using BasisParams = BasisKernels<Tensor>;
using RgcnLayerParams = RgcnLayer<Tensor>;
using IsoAttnLayerParams = IsoAttnLayer<Tensor>;

struct LayerOptions {
  bool degree_norm = false;  // mean over N_r(v) instead of sum
  bool apply_relu = true;
};

// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> basis_expand(const BasisKernels<T>& p) {
  const Tensor coeffs = value_of(p.coefficients);  // copy: tape storage may grow below
  if (p.bases.empty()) throw ShapeError("basis_expand: no bases");
  if (coeffs.rank() != 2 || coeffs.cols() != p.bases.size()) {
    throw ShapeError("basis_expand: coefficients " +
                     shape_string(coeffs.shape()) + " do not match " +
                     std::to_string(p.bases.size()) + " bases");
  }
  const Shape kshape = value_of(p.bases.front()).shape();
  for (const auto& b : p.bases) {
    if (value_of(b).shape() != kshape) {
      throw ShapeError("basis_expand: bases differ in shape " +
                       shape_string(kshape) + " vs " +
                       shape_string(value_of(b).shape()));
    }
  }
  std::vector<T> kernels;
  kernels.reserve(coeffs.rows());
  for (std::size_t r = 0; r < coeffs.rows(); ++r) {
    T w = scale_by(element(p.coefficients, r, 0), p.bases[0]);
    for (std::size_t b = 1; b < p.bases.size(); ++b) {
      w = add(w, scale_by(element(p.coefficients, r, b), p.bases[b]));
    }
    kernels.push_back(std::move(w));
  }
  return kernels;
}

namespace detail {

inline void check_node_matrix(const TypedGraph& g, const Tensor& h,
                              const char* op) {
  if (h.rank() != 2 || h.rows() != g.num_nodes()) {
    throw ShapeError(std::string(op) + ": node matrix " +
                     shape_string(h.shape()) + " does not have " +
                     std::to_string(g.num_nodes()) + " rows");
  }
}

inline void check_kernel(const Tensor& w, std::size_t d_out, std::size_t d_in,
                         const char* op, const char* what) {
  if (w.rank() != 2 || w.rows() != d_out || w.cols() != d_in) {
    throw ShapeError(std::string(op) + ": " + what + " has shape " +
                     shape_string(w.shape()) + ", expected [" +
                     std::to_string(d_out) + "x" + std::to_string(d_in) + "]");
  }
}

inline std::vector<bool> relations_present(const TypedGraph& g) {
  std::vector<bool> present(g.num_relations(), false);
  for (const Edge& e : g.edges()) present[e.relation] = true;
  return present;
}

}  // namespace detail

// h'_v = ReLU(W0 h_v + sum_r sum_{u in N_r(v)} alpha_r W_r h_u), rows of H
// are nodes.
template <typename T>
T rgcn_forward(const TypedGraph& g, const T& h, const RgcnLayer<T>& p,
               const LayerOptions& opts = {}) {
  const Tensor& hv = value_of(h);
  detail::check_node_matrix(g, hv, "rgcn_forward");
  const Tensor& w0 = value_of(p.self_kernel);
  if (w0.rank() != 2) throw ShapeError("rgcn_forward: W0 must be a matrix");
  const std::size_t d_out = w0.rows(), d_in = hv.cols();
  detail::check_kernel(w0, d_out, d_in, "rgcn_forward", "W0");

  const std::vector<T> kernels =
      p.basis ? basis_expand(*p.basis) : p.relation_kernels;
  if (kernels.size() != g.num_relations()) {
    throw ShapeError("rgcn_forward: " + std::to_string(kernels.size()) +
                     " relation kernels for " +
                     std::to_string(g.num_relations()) + " relations");
  }
  if (!p.relation_scale.empty() && p.relation_scale.size() != g.num_relations()) {
    throw ShapeError("rgcn_forward: relation_scale size mismatch");
  }
  for (const auto& w : kernels) {
    detail::check_kernel(value_of(w), d_out, d_in, "rgcn_forward", "W_r");
  }

  // Relation messages are summed before the self term is added, the same
  // order isoattn_forward uses, so a tied-kernel K=1 model agrees bitwise.
  const auto present = detail::relations_present(g);
  std::optional<T> messages;
  for (std::size_t r = 0; r < g.num_relations(); ++r) {
    if (!present[r]) continue;
    T agg = matmul(lift_constant(h, g.relation_adjacency(r, opts.degree_norm)),
                   matmul(h, transpose(kernels[r])));
    const double alpha = p.relation_scale.empty() ? 1.0 : p.relation_scale[r];
    if (alpha != 1.0) agg = scale(agg, alpha);
    messages = messages ? add(*messages, agg) : agg;
  }
  T z = matmul(h, transpose(p.self_kernel));
  if (messages) z = add(z, *messages);
  return opts.apply_relu ? relu(z) : z;
}

// h'_v = ReLU(W0 h_v + sum_r sum_{u in N_r(v)} concat_k(alpha[r][k] W h_u)).
// W h_u is formed once per node and shared by every relation and head.
template <typename T>
T isoattn_forward(const TypedGraph& g, const T& h, const IsoAttnLayer<T>& p,
                  const LayerOptions& opts = {}) {
  const Tensor& hv = value_of(h);
  detail::check_node_matrix(g, hv, "isoattn_forward");
  const Tensor& w = value_of(p.shared_kernel);
  const Tensor& att = value_of(p.attention);
  const std::size_t d_in = hv.cols();
  if (w.rank() != 2) throw ShapeError("isoattn_forward: W must be a matrix");
  const std::size_t d_msg = w.rows();
  detail::check_kernel(w, d_msg, d_in, "isoattn_forward", "W");
  if (att.rank() != 2 || att.rows() != g.num_relations() || att.cols() == 0) {
    throw ShapeError("isoattn_forward: attention table " +
                     shape_string(att.shape()) + " does not have " +
                     std::to_string(g.num_relations()) + " rows");
  }
  const std::size_t heads = att.cols();
  detail::check_kernel(value_of(p.self_kernel), heads * d_msg, d_in,
                       "isoattn_forward", "W0");

  const T messages = matmul(h, transpose(p.shared_kernel));
  const auto present = detail::relations_present(g);
  std::vector<T> per_relation(g.num_relations());
  for (std::size_t r = 0; r < g.num_relations(); ++r) {
    if (!present[r]) continue;
    per_relation[r] = matmul(
        lift_constant(h, g.relation_adjacency(r, opts.degree_norm)), messages);
  }

  std::vector<T> blocks;
  blocks.reserve(heads);
  for (std::size_t k = 0; k < heads; ++k) {
    std::optional<T> block;
    for (std::size_t r = 0; r < g.num_relations(); ++r) {
      if (!present[r]) continue;
      T term = scale_by(element(p.attention, r, k), per_relation[r]);
      block = block ? add(*block, term) : term;
    }
    if (!block) {
      block = lift_constant(h, Tensor::zeros(Shape{g.num_nodes(), d_msg}));
    }
    blocks.push_back(*block);
  }
  T z = add(matmul(h, transpose(p.self_kernel)), hconcat(blocks));
  return opts.apply_relu ? relu(z) : z;
}

// ---------------------------------------------------------------------------
// Initialization

inline Tensor glorot_uniform(std::size_t fan_out, std::size_t fan_in,
                             std::mt19937_64& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(Shape{fan_out, fan_in});
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline AttentionTable init_attention(std::size_t relations, std::size_t heads,
                                     std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  Tensor t(Shape{relations, heads});
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// num_bases == 0 gives independent per-relation kernels.
inline RgcnLayerParams init_rgcn_layer(std::size_t d_in, std::size_t d_out,
                                       std::size_t relations,
                                       std::size_t num_bases,
                                       std::mt19937_64& rng) {
  RgcnLayerParams p;
  p.self_kernel = glorot_uniform(d_out, d_in, rng);
  if (num_bases == 0) {
    for (std::size_t r = 0; r < relations; ++r)
      p.relation_kernels.push_back(glorot_uniform(d_out, d_in, rng));
  } else {
    if (num_bases > relations) {
      std::cerr << "warning: " << num_bases << " bases for " << relations
                << " relations imposes no rank constraint\n";
    }
    BasisParams b;
    for (std::size_t i = 0; i < num_bases; ++i)
      b.bases.push_back(glorot_uniform(d_out, d_in, rng));
    b.coefficients = glorot_uniform(relations, num_bases, rng);
    p.basis = std::move(b);
  }
  p.relation_scale.assign(relations, 1.0);
  return p;
}

inline IsoAttnLayerParams init_isoattn_layer(std::size_t d_in,
                                             std::size_t d_msg,
                                             std::size_t heads,
                                             std::size_t relations,
                                             std::mt19937_64& rng) {
  if (heads == 0) throw ConfigError("attention needs at least one head");
  IsoAttnLayerParams p;
  p.self_kernel = glorot_uniform(heads * d_msg, d_in, rng);
  p.shared_kernel = glorot_uniform(d_msg, d_in, rng);
  p.attention = init_attention(relations, heads, rng);
  return p;
}

}  // namespace isogcn
