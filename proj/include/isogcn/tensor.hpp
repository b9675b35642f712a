#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "isogcn/errors.hpp"

namespace isogcn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << 'x';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

// Dense row-major array of doubles. Rank 0 is a scalar, rank 1 a vector,
// rank 2 a matrix; nothing in the library needs more.
class Tensor {
 public:
  Tensor() : shape_{}, values_(1, 0.0) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_size(shape_) != values_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(values_.size()));
    }
  }

  // Construction from outside data (files, user input) rejects NaN/Inf.
  static Tensor from_external(Shape shape, std::vector<double> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw ValidationError("non-finite value at flat index " +
                              std::to_string(i));
      }
    }
    return Tensor(std::move(shape), std::move(values));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(m * n);
    for (const auto& row : rows) {
      if (row.size() != n) throw ShapeError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{m, n}, std::move(values));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor filled(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), v);
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator()(std::size_t i, std::size_t j) const {
    return values_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j) {
    return values_[i * shape_[1] + j];
  }

  double item() const {
    if (values_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    }
    return values_[0];
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// [|R| x K] table; row r is the attention vector of relation r.
using AttentionTable = Tensor;

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

inline void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_string(a.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain (non-recording) primitives. The tape in autodiff.hpp records the same
// set under the same names, so layer code can be written once as a template.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a.shape()) +
                     " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols(), p = b.cols();
  Tensor c(Shape{m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  Tensor t(Shape{a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "sub", [](double x, double y) { return x - y; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "mul", [](double x, double y) { return x * y; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "div", [](double x, double y) { return x / y; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::map(a, [s](double x) { return x * s; });
}

// Multiplies every entry of `t` by the scalar tensor `s`.
inline Tensor scale_by(const Tensor& s, const Tensor& t) {
  return scale(t, s.item());
}

inline Tensor relu(const Tensor& a) {
  return detail::map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

inline Tensor log(const Tensor& a) {
  return detail::map(a, [](double x) { return std::log(x); });
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::map(a, [](double x) { return sigmoid(x); });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::scalar(s);
}

inline Tensor l2_norm_sq(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return Tensor::scalar(s);
}

inline Tensor l2_norm(const Tensor& a) {
  return Tensor::scalar(std::sqrt(l2_norm_sq(a).item()));
}

inline Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ArgumentError("concat: empty part list");
  std::vector<double> out;
  for (const auto& p : parts) {
    detail::require_rank(p, 1, "concat");
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return Tensor::vector(std::move(out));
}

inline Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

// Column-wise concatenation of matrices with equal row counts.
inline Tensor hconcat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ArgumentError("hconcat: empty part list");
  const std::size_t m = parts.front().rank() == 2 ? parts.front().rows() : 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "hconcat");
    if (p.rows() != m) {
      throw ShapeError("hconcat: row mismatch " + shape_string(p.shape()));
    }
    total += p.cols();
  }
  Tensor out(Shape{m, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, offset + j) = p(i, j);
    offset += p.cols();
  }
  return out;
}

inline Tensor row(const Tensor& a, std::size_t i) {
  detail::require_rank(a, 2, "row");
  if (i >= a.rows()) throw ArgumentError("row: index out of range");
  std::vector<double> out(a.values().begin() + i * a.cols(),
                          a.values().begin() + (i + 1) * a.cols());
  return Tensor::vector(std::move(out));
}

inline Tensor element(const Tensor& a, std::size_t i, std::size_t j) {
  detail::require_rank(a, 2, "element");
  if (i >= a.rows() || j >= a.cols()) {
    throw ArgumentError("element: index out of range");
  }
  return Tensor::scalar(a(i, j));
}

// Reshapes a vector [n] into a column [n x 1]; used for W h with h a vector.
inline Tensor as_column(const Tensor& v) {
  detail::require_rank(v, 1, "as_column");
  return Tensor(Shape{v.size(), 1}, {v.values().begin(), v.values().end()});
}

inline Tensor flatten(const Tensor& a) {
  return Tensor(Shape{a.size()}, {a.values().begin(), a.values().end()});
}

// Frobenius norm for matrices, Euclidean for vectors.
inline double norm(const Tensor& a) { return l2_norm(a).item(); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double relative_discrepancy(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale == 0.0) return 0.0;
  return std::abs(a - b) / scale;
}

// Lifts a constant tensor into the same "world" as `like`: the identity for
// plain tensors. The recording overload lives in autodiff.hpp.
inline Tensor lift_constant(const Tensor& /*like*/, Tensor c) { return c; }

inline const Tensor& value_of(const Tensor& t) { return t; }

}  // namespace isogcn
