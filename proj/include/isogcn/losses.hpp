#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "isogcn/autodiff.hpp"
#include "isogcn/graph.hpp"
#include "isogcn/tensor.hpp"

namespace isogcn {

struct EdgeSwap {
  std::size_t edge = 0;
  std::size_t original = 0;  // r_e
  std::size_t swapped = 0;   // sigma(e), never equal to r_e
};

struct EdgeSwapSample {
  std::vector<EdgeSwap> swaps;

  std::size_t size() const { return swaps.size(); }
  bool empty() const { return swaps.empty(); }
};

struct LossReport {
  double task_loss = 0.0;
  double iso_loss = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

// Picks ceil(fraction * |E|) distinct edges uniformly and reassigns each to a
// relation drawn uniformly from the other |R| - 1.
inline EdgeSwapSample sample_edge_swaps(const TypedGraph& g, double fraction,
                                        std::uint64_t seed) {
  if (g.num_relations() < 2) {
    throw ConfigError("edge swaps need at least two relations");
  }
  if (g.edges().empty()) throw ConfigError("edge swaps need at least one edge");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("swap fraction must lie in (0, 1]");
  }
  const std::size_t num_edges = g.edges().size();
  const auto count = std::min<std::size_t>(
      num_edges, static_cast<std::size_t>(
                     std::ceil(fraction * static_cast<double>(num_edges) - 1e-9)));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(num_edges);
  for (std::size_t i = 0; i < num_edges; ++i) order[i] = i;
  // Partial Fisher-Yates: the first `count` slots are a uniform subset.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_edges - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::uniform_int_distribution<std::size_t> other(0, g.num_relations() - 2);
  EdgeSwapSample sample;
  sample.swaps.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t e = order[i];
    const std::size_t r = g.edges()[e].relation;
    std::size_t s = other(rng);
    if (s >= r) ++s;
    sample.swaps.push_back({e, r, s});
  }
  return sample;
}

// Every ordered pair (a, b), a != b, once. The `edge` field holds the pair
// index.
inline EdgeSwapSample full_pair_sample(std::size_t relations) {
  EdgeSwapSample sample;
  for (std::size_t a = 0; a < relations; ++a)
    for (std::size_t b = 0; b < relations; ++b)
      if (a != b) sample.swaps.push_back({sample.swaps.size(), a, b});
  return sample;
}

namespace detail {

// Multiplicity of each ordered (r_e, sigma(e)) pair. Summing per pair in a
// fixed order makes the losses independent of sample order.
inline std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_counts(
    const EdgeSwapSample& s) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  for (const auto& sw : s.swaps) ++counts[{sw.original, sw.swapped}];
  return counts;
}

inline void check_iso_shapes(const Tensor& alpha, const EdgeSwapSample& s,
                             const IsostericityMatrix& iso) {
  if (alpha.rank() != 2 || alpha.rows() != iso.num_relations()) {
    throw ShapeError("attention table " + shape_string(alpha.shape()) +
                     " does not match isostericity matrix of size " +
                     std::to_string(iso.num_relations()));
  }
  for (const auto& sw : s.swaps) {
    if (sw.original >= alpha.rows() || sw.swapped >= alpha.rows()) {
      throw ShapeError("swap sample references relation outside the table");
    }
  }
}

template <typename T>
T iso_residual_sq(const T& alpha, std::size_t a, std::size_t b,
                  const IsostericityMatrix& iso) {
  T dist = l2_norm(sub(row(alpha, a), row(alpha, b)));
  T res = sub(dist, lift_constant(alpha, Tensor::scalar(iso(a, b))));
  return mul(res, res);
}

}  // namespace detail

// sum_{e in S} (||alpha_{r_e} - alpha_{sigma(e)}||_2 - Iso(r_e, sigma(e)))^2
template <typename T>
T iso_loss(const T& alpha, const EdgeSwapSample& s,
           const IsostericityMatrix& iso) {
  detail::check_iso_shapes(value_of(alpha), s, iso);
  T total = lift_constant(alpha, Tensor::scalar(0.0));
  for (const auto& [pair, count] : detail::pair_counts(s)) {
    T term = detail::iso_residual_sq(alpha, pair.first, pair.second, iso);
    if (count != 1) term = scale(term, static_cast<double>(count));
    total = add(total, term);
  }
  return total;
}

// w(e) = |S| ||alpha_{r_e}|| ||alpha_{sigma(e)}|| / sum_i ||alpha_{r_i}|| ||alpha_{sigma(i)}||
inline std::vector<double> swap_weights(const AttentionTable& alpha,
                                        const EdgeSwapSample& s) {
  if (s.empty()) throw ArgumentError("swap_weights: empty sample");
  std::vector<double> norms(alpha.rows());
  for (std::size_t r = 0; r < alpha.rows(); ++r) norms[r] = norm(row(alpha, r));
  std::vector<double> w;
  w.reserve(s.size());
  double denom = 0.0;
  for (const auto& sw : s.swaps) {
    if (sw.original >= alpha.rows() || sw.swapped >= alpha.rows()) {
      throw ShapeError("swap sample references relation outside the table");
    }
    w.push_back(norms[sw.original] * norms[sw.swapped]);
    denom += w.back();
  }
  if (denom == 0.0) {
    throw DegenerateAttentionError(
        "swap_weights: every sampled attention norm product is zero");
  }
  const double n = static_cast<double>(s.size());
  for (double& x : w) x = n * x / denom;
  return w;
}

// sum_e w(e) * residual(e)^2, differentiated through both the residual and
// the weights. Falls back to the unscaled loss (w = 1) with a warning when the
// weights are degenerate.
template <typename T>
T scaled_iso_loss(const T& alpha, const EdgeSwapSample& s,
                  const IsostericityMatrix& iso) {
  const Tensor& av = value_of(alpha);
  detail::check_iso_shapes(av, s, iso);
  if (s.empty()) throw ArgumentError("scaled_iso_loss: empty sample");
  try {
    (void)swap_weights(av, s);
  } catch (const DegenerateAttentionError&) {
    std::cerr << "warning: all attention norms in the swap sample are zero; "
                 "using unscaled isostericity loss\n";
    return iso_loss(alpha, s, iso);
  }

  std::vector<std::optional<T>> norms(av.rows());
  auto norm_of = [&](std::size_t r) -> const T& {
    if (!norms[r]) norms[r] = l2_norm(row(alpha, r));
    return *norms[r];
  };
  std::optional<T> numerator, denominator;
  for (const auto& [pair, count] : detail::pair_counts(s)) {
    T product = mul(norm_of(pair.first), norm_of(pair.second));
    T term = mul(product,
                 detail::iso_residual_sq(alpha, pair.first, pair.second, iso));
    if (count != 1) {
      product = scale(product, static_cast<double>(count));
      term = scale(term, static_cast<double>(count));
    }
    numerator = numerator ? add(*numerator, term) : term;
    denominator = denominator ? add(*denominator, product) : product;
  }
  return scale(div(*numerator, *denominator), static_cast<double>(s.size()));
}

// ---------------------------------------------------------------------------
// Binary cross-entropy with logits, averaged over the masked nodes:
// max(z, 0) - z y + log(1 + exp(-|z|)).

namespace detail {

inline void check_bce(const Tensor& logits, const NodeLabelSet& labels) {
  if (labels.mask.empty()) throw ArgumentError("node_bce_loss: empty mask");
  if (logits.size() != labels.labels.size()) {
    throw ShapeError("node_bce_loss: " + std::to_string(logits.size()) +
                     " logits for " + std::to_string(labels.labels.size()) +
                     " labels");
  }
  for (std::size_t v : labels.mask) {
    if (v >= logits.size()) throw ArgumentError("node_bce_loss: mask id out of range");
  }
}

inline double bce_term(double z, int y) {
  return std::max(z, 0.0) - z * static_cast<double>(y) +
         std::log1p(std::exp(-std::abs(z)));
}

}  // namespace detail

inline Tensor node_bce_loss(const Tensor& logits, const NodeLabelSet& labels) {
  detail::check_bce(logits, labels);
  double s = 0.0;
  for (std::size_t v : labels.mask) s += detail::bce_term(logits[v], labels.labels[v]);
  return Tensor::scalar(s / static_cast<double>(labels.mask.size()));
}

inline Var node_bce_loss(Var logits, const NodeLabelSet& labels) {
  detail::check_bce(value_of(logits), labels);
  return logits.tape->apply(
      "bce_with_logits", {logits},
      [labels](const Tape::Inputs& in) { return node_bce_loss(*in[0], labels); },
      [labels](const Tape::Inputs& in, const Tensor&, const Tensor& g,
               const std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        const double k = g.item() / static_cast<double>(labels.mask.size());
        for (std::size_t v : labels.mask) {
          (*grads[0])[v] +=
              k * (sigmoid((*in[0])[v]) - static_cast<double>(labels.labels[v]));
        }
      });
}

inline LossReport total_loss(double task, double iso, double lambda) {
  if (!(lambda >= 0.0)) throw ArgumentError("lambda must be nonnegative");
  return LossReport{task, iso, task + lambda * iso, lambda};
}

}  // namespace isogcn
