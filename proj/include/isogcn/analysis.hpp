#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "isogcn/graph.hpp"
#include "isogcn/tensor.hpp"

namespace isogcn {

// Outcome of checking one algebraic identity over a batch of instances.
//
// kind == "equality":       passed <=> max_rel_discrepancy <= tolerance
// kind == "bound":          passed <=> flagged == 0 (flagged = violations)
// kind == "counterexample": passed <=> flagged >= required
struct IdentityReport {
  std::string name;
  std::string kind = "equality";
  std::size_t instances = 0;
  double max_abs_discrepancy = 0.0;
  double max_rel_discrepancy = 0.0;
  double tolerance = 0.0;
  std::size_t flagged = 0;
  std::size_t required = 0;
  bool passed = true;

  void finalize() {
    if (kind == "equality") {
      passed = max_rel_discrepancy <= tolerance;
    } else if (kind == "bound") {
      passed = flagged == 0;
    } else {
      passed = flagged >= required;
    }
  }

  void absorb(const IdentityReport& other) {
    instances += other.instances;
    max_abs_discrepancy = std::max(max_abs_discrepancy, other.max_abs_discrepancy);
    max_rel_discrepancy = std::max(max_rel_discrepancy, other.max_rel_discrepancy);
    flagged += other.flagged;
    finalize();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["identity"] = name;
    j["kind"] = kind;
    j["instances"] = instances;
    j["max_abs_discrepancy"] = max_abs_discrepancy;
    j["max_rel_discrepancy"] = max_rel_discrepancy;
    j["tolerance"] = tolerance;
    j["flagged"] = flagged;
    j["required"] = required;
    j["pass"] = passed;
    return j;
  }

  std::string to_text() const {
    std::ostringstream out;
    out << (passed ? "PASS " : "FAIL ") << name << " [" << kind << "] "
        << "instances=" << instances;
    if (kind == "equality") {
      out << " max_abs=" << max_abs_discrepancy
          << " max_rel=" << max_rel_discrepancy << " tol=" << tolerance;
    } else if (kind == "bound") {
      out << " violations=" << flagged
          << " worst_rel_excess=" << max_rel_discrepancy;
    } else {
      out << " counterexamples=" << flagged << " required=" << required;
    }
    return out.str();
  }
};

namespace detail {

inline Tensor multi_head_message(const Tensor& alpha, const Tensor& w,
                                 const Tensor& h) {
  if (alpha.rank() != 1 || alpha.size() == 0) {
    throw ShapeError("attention vector must be a nonempty vector, got " +
                     shape_string(alpha.shape()));
  }
  const Tensor wh = flatten(matmul(w, as_column(h)));
  std::vector<Tensor> heads;
  heads.reserve(alpha.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) heads.push_back(scale(wh, alpha[k]));
  return concat(std::span<const Tensor>(heads));
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline std::mt19937_64 instance_rng(std::uint64_t seed, std::uint64_t suite,
                                    std::uint64_t instance) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(suite),
                    static_cast<std::uint32_t>(instance),
                    static_cast<std::uint32_t>(instance >> 32)};
  return std::mt19937_64(seq);
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo,
                                 std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace detail

// Squared Euclidean norm of the difference between the messages sent over
// relation 1 and relation 2 from the same source h. With K > 1 heads the
// message is concat_k(alpha[k] * W h).
inline double message_delta(const Tensor& alpha1, const Tensor& alpha2,
                            const Tensor& w1, const Tensor& w2,
                            const Tensor& h) {
  if (alpha1.shape() != alpha2.shape()) {
    throw ShapeError("message_delta: attention vectors differ in shape");
  }
  if (w1.shape() != w2.shape()) {
    throw ShapeError("message_delta: kernels differ in shape " +
                     shape_string(w1.shape()) + " vs " + shape_string(w2.shape()));
  }
  const Tensor m1 = detail::multi_head_message(alpha1, w1, h);
  const Tensor m2 = detail::multi_head_message(alpha2, w2, h);
  return l2_norm_sq(sub(m1, m2)).item();
}

// Delta with a shared kernel against ||alpha1 - alpha2||^2 ||W h||^2.
inline IdentityReport check_concat_factorization(const Tensor& alpha1,
                                                 const Tensor& alpha2,
                                                 const Tensor& w,
                                                 const Tensor& h,
                                                 double tolerance = 1e-10) {
  const double lhs = message_delta(alpha1, alpha2, w, w, h);
  const double rhs = l2_norm_sq(sub(alpha1, alpha2)).item() *
                     l2_norm_sq(matmul(w, as_column(h))).item();
  IdentityReport rep;
  rep.name = "concat_factorization";
  rep.instances = 1;
  rep.tolerance = tolerance;
  rep.max_abs_discrepancy = std::abs(lhs - rhs);
  rep.max_rel_discrepancy = relative_discrepancy(lhs, rhs);
  rep.finalize();
  return rep;
}

// Random instances with K in [1, 8] and dimensions in [1, 16].
inline IdentityReport concat_factorization_suite(std::size_t instances,
                                                 std::uint64_t seed,
                                                 double tolerance = 1e-10) {
  IdentityReport total;
  total.name = "concat_factorization";
  total.tolerance = tolerance;
  for (std::size_t i = 0; i < instances; ++i) {
    auto rng = detail::instance_rng(seed, 1, i);
    const std::size_t k = detail::uniform_index(rng, 1, 8);
    const std::size_t d_in = detail::uniform_index(rng, 1, 16);
    const std::size_t d_msg = detail::uniform_index(rng, 1, 16);
    const Tensor a1 = detail::random_tensor({k}, rng);
    const Tensor a2 = detail::random_tensor({k}, rng);
    const Tensor w = detail::random_tensor({d_msg, d_in}, rng);
    const Tensor h = detail::random_tensor({d_in}, rng);
    total.absorb(check_concat_factorization(a1, a2, w, h, tolerance));
  }
  total.finalize();
  return total;
}

// Under summed heads the message difference has norm
// |sum_k(alpha1[k] - alpha2[k])| * ||W h||, which is not ||alpha1 - alpha2|| ||W h||.
// An instance counts when the two differ by more than 1% relative.
inline bool sum_aggregation_differs(const Tensor& alpha1, const Tensor& alpha2,
                                    const Tensor& w, const Tensor& h,
                                    double* rel = nullptr) {
  const Tensor wh = matmul(w, as_column(h));
  Tensor m1 = Tensor::zeros(wh.shape()), m2 = Tensor::zeros(wh.shape());
  for (std::size_t k = 0; k < alpha1.size(); ++k) {
    m1 = add(m1, scale(wh, alpha1[k]));
    m2 = add(m2, scale(wh, alpha2[k]));
  }
  const double summed = norm(sub(m1, m2));
  const double l2 = norm(sub(alpha1, alpha2)) * norm(wh);
  const double d = relative_discrepancy(summed, l2);
  if (rel) *rel = d;
  return d > 0.01;
}

inline IdentityReport check_sum_counterexample(std::uint64_t seed,
                                               std::size_t instances = 100,
                                               std::size_t heads = 4,
                                               std::size_t required = 1) {
  IdentityReport rep;
  rep.name = "sum_aggregation_counterexample";
  rep.kind = "counterexample";
  rep.required = required;
  for (std::size_t i = 0; i < instances; ++i) {
    auto rng = detail::instance_rng(seed, 2, i);
    const std::size_t d_in = detail::uniform_index(rng, 1, 16);
    const std::size_t d_msg = detail::uniform_index(rng, 1, 16);
    const Tensor a1 = detail::random_tensor({heads}, rng);
    const Tensor a2 = detail::random_tensor({heads}, rng);
    const Tensor w = detail::random_tensor({d_msg, d_in}, rng);
    const Tensor h = detail::random_tensor({d_in}, rng);
    double rel = 0.0;
    if (sum_aggregation_differs(a1, a2, w, h, &rel)) ++rep.flagged;
    rep.max_rel_discrepancy = std::max(rep.max_rel_discrepancy, rel);
    ++rep.instances;
  }
  rep.finalize();
  return rep;
}

// Delta <= ||alpha1 (x) W1 - alpha2 (x) W2||_F^2 ||h||^2 where alpha (x) W
// stacks the per-head blocks alpha[k] W. Frobenius dominates the operator
// norm, so the bound holds with it.
inline IdentityReport check_operator_bound(const Tensor& alpha1,
                                           const Tensor& alpha2,
                                           const Tensor& w1, const Tensor& w2,
                                           const Tensor& h) {
  const double lhs = message_delta(alpha1, alpha2, w1, w2, h);
  double frob_sq = 0.0;
  for (std::size_t k = 0; k < alpha1.size(); ++k) {
    frob_sq += l2_norm_sq(sub(scale(w1, alpha1[k]), scale(w2, alpha2[k]))).item();
  }
  const double rhs = frob_sq * l2_norm_sq(h).item();
  IdentityReport rep;
  rep.name = "operator_bound";
  rep.kind = "bound";
  rep.instances = 1;
  const double excess = lhs - rhs;
  // Roundoff allowance only; the inequality itself is exact.
  if (excess > 1e-12 * std::max(std::abs(lhs), std::abs(rhs))) {
    rep.flagged = 1;
    rep.max_abs_discrepancy = excess;
    rep.max_rel_discrepancy = rhs > 0.0 ? excess / rhs : excess;
  }
  rep.finalize();
  return rep;
}

inline IdentityReport operator_bound_suite(std::size_t instances,
                                           std::uint64_t seed) {
  IdentityReport total;
  total.name = "operator_bound";
  total.kind = "bound";
  for (std::size_t i = 0; i < instances; ++i) {
    auto rng = detail::instance_rng(seed, 3, i);
    const std::size_t k = detail::uniform_index(rng, 1, 8);
    const std::size_t d_in = detail::uniform_index(rng, 1, 16);
    const std::size_t d_msg = detail::uniform_index(rng, 1, 16);
    const Tensor a1 = detail::random_tensor({k}, rng);
    const Tensor a2 = detail::random_tensor({k}, rng);
    const Tensor w1 = detail::random_tensor({d_msg, d_in}, rng);
    const Tensor w2 = detail::random_tensor({d_msg, d_in}, rng);
    const Tensor h = detail::random_tensor({d_in}, rng);
    total.absorb(check_operator_bound(a1, a2, w1, w2, h));
  }
  total.finalize();
  return total;
}

struct DeltaRatio {
  double delta_ratio = 0.0;             // Delta(r1,r2) / Delta(r1,r3)
  double squared_alpha_ratio = 0.0;     // ||a1-a2||^2 / ||a1-a3||^2
  double alpha_ratio = 0.0;             // ||a1-a2|| / ||a1-a3||
  double rel_discrepancy = 0.0;         // delta_ratio vs squared_alpha_ratio
};

// Shared kernel, concatenated heads. Delta carries a square, so the exact law
// is against the squared attention distances; the unsquared ratio is
// reported alongside for comparison.
inline DeltaRatio check_delta_ratio(const Tensor& alpha, const Tensor& w,
                                    const Tensor& h, std::size_t r1,
                                    std::size_t r2, std::size_t r3) {
  if (alpha.rank() != 2 || r1 >= alpha.rows() || r2 >= alpha.rows() ||
      r3 >= alpha.rows()) {
    throw ArgumentError("check_delta_ratio: relation index out of range");
  }
  const Tensor a1 = row(alpha, r1), a2 = row(alpha, r2), a3 = row(alpha, r3);
  const double d12 = message_delta(a1, a2, w, w, h);
  const double d13 = message_delta(a1, a3, w, w, h);
  const double s12 = l2_norm_sq(sub(a1, a2)).item();
  const double s13 = l2_norm_sq(sub(a1, a3)).item();
  if (d13 == 0.0 || s13 == 0.0) {
    throw NumericError("check_delta_ratio: degenerate instance, Delta(r1,r3) = 0");
  }
  DeltaRatio out;
  out.delta_ratio = d12 / d13;
  out.squared_alpha_ratio = s12 / s13;
  out.alpha_ratio = std::sqrt(s12) / std::sqrt(s13);
  out.rel_discrepancy = relative_discrepancy(out.delta_ratio, out.squared_alpha_ratio);
  return out;
}

inline IdentityReport delta_ratio_suite(std::size_t instances,
                                        std::uint64_t seed,
                                        double tolerance = 1e-10) {
  IdentityReport rep;
  rep.name = "delta_ratio_squared";
  rep.tolerance = tolerance;
  for (std::size_t i = 0; i < instances; ++i) {
    auto rng = detail::instance_rng(seed, 4, i);
    const std::size_t relations = detail::uniform_index(rng, 3, 8);
    const std::size_t k = detail::uniform_index(rng, 1, 8);
    const std::size_t d_in = detail::uniform_index(rng, 1, 16);
    const std::size_t d_msg = detail::uniform_index(rng, 1, 16);
    const Tensor alpha = detail::random_tensor({relations, k}, rng);
    const Tensor w = detail::random_tensor({d_msg, d_in}, rng);
    const Tensor h = detail::random_tensor({d_in}, rng);
    const std::size_t r1 = detail::uniform_index(rng, 0, relations - 1);
    const std::size_t r2 = (r1 + detail::uniform_index(rng, 1, relations - 1)) % relations;
    std::size_t r3 = (r1 + detail::uniform_index(rng, 1, relations - 1)) % relations;
    const DeltaRatio d = check_delta_ratio(alpha, w, h, r1, r2, r3);
    rep.max_rel_discrepancy = std::max(rep.max_rel_discrepancy, d.rel_discrepancy);
    rep.max_abs_discrepancy = std::max(
        rep.max_abs_discrepancy, std::abs(d.delta_ratio - d.squared_alpha_ratio));
    ++rep.instances;
  }
  rep.finalize();
  return rep;
}

// ---------------------------------------------------------------------------
// PCA

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, unsorted.
inline std::vector<double> jacobi_eigenvalues(Tensor a, int max_sweeps = 100) {
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw ShapeError("jacobi_eigenvalues: matrix must be square");
  }
  const std::size_t n = a.rows();
  auto off_diagonal = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return s;
  };
  const double scale0 = l2_norm_sq(a).item();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    if (off_diagonal() <= 1e-30 * scale0) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a(i, i);
  return out;
}

// Rows of `points` are observations. Returns the top-k covariance eigenvalues
// divided by the total variance, descending. A zero-variance input yields
// all-zero ratios.
inline std::vector<double> pca_explained_variance(const Tensor& points,
                                                  std::size_t k) {
  if (points.rank() != 2 || points.rows() < 2) {
    throw ArgumentError("pca_explained_variance: need at least two rows");
  }
  const std::size_t n = points.rows(), d = points.cols();
  if (k < 1 || k > d) {
    throw ArgumentError("pca_explained_variance: k must lie in [1, " +
                        std::to_string(d) + "]");
  }
  Tensor centered = points;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += points(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) centered(i, j) -= mean;
  }
  const Tensor cov =
      scale(matmul(transpose(centered), centered), 1.0 / static_cast<double>(n - 1));
  std::vector<double> eig = jacobi_eigenvalues(cov);
  for (double& e : eig) e = std::max(e, 0.0);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  double total = 0.0;
  for (double e : eig) total += e;
  std::vector<double> ratios(k, 0.0);
  if (total == 0.0) return ratios;
  for (std::size_t i = 0; i < k; ++i) ratios[i] = eig[i] / total;
  return ratios;
}

inline std::vector<double> pca_explained_variance(const IsostericityMatrix& m,
                                                  std::size_t k) {
  return pca_explained_variance(m.values(), k);
}

// Ratios descending, nonnegative, and summing to 1 over all components.
inline IdentityReport pca_total_variance_suite(std::size_t instances,
                                               std::uint64_t seed,
                                               double tolerance = 1e-10) {
  IdentityReport rep;
  rep.name = "pca_total_variance";
  rep.tolerance = tolerance;
  for (std::size_t i = 0; i < instances; ++i) {
    auto rng = detail::instance_rng(seed, 5, i);
    const std::size_t n = detail::uniform_index(rng, 2, 12);
    const Tensor m = detail::random_tensor({n, n}, rng);
    const auto ratios = pca_explained_variance(m, n);
    double total = 0.0;
    bool ordered = true;
    for (std::size_t j = 0; j < ratios.size(); ++j) {
      total += ratios[j];
      if (ratios[j] < 0.0 || (j && ratios[j] > ratios[j - 1])) ordered = false;
    }
    const double err = ordered ? std::abs(total - 1.0) : 1.0;
    rep.max_abs_discrepancy = std::max(rep.max_abs_discrepancy, err);
    rep.max_rel_discrepancy = std::max(rep.max_rel_discrepancy, err);
    ++rep.instances;
  }
  rep.finalize();
  return rep;
}

// Every identity suite run by `verify`.
inline std::vector<IdentityReport> run_identity_suites(std::size_t instances,
                                                       std::uint64_t seed) {
  std::vector<IdentityReport> reports;
  reports.push_back(concat_factorization_suite(instances, seed));
  reports.push_back(operator_bound_suite(instances, seed));
  reports.push_back(check_sum_counterexample(seed, 100, 4, 95));
  reports.push_back(delta_ratio_suite(instances, seed));
  reports.push_back(pca_total_variance_suite(std::min<std::size_t>(instances, 200), seed));
  return reports;
}

}  // namespace isogcn
