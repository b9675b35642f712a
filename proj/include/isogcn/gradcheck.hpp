#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "isogcn/autodiff.hpp"

namespace isogcn {

// Builds a scalar on `tape` from parameter handles (one per tensor passed to
// grad_check, in order).
using ScalarBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

inline double evaluate_scalar(const ScalarBuilder& f,
                              const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.param(p));
  return tape.value(f(tape, vars)).item();
}

inline std::vector<Tensor> evaluate_gradient(const ScalarBuilder& f,
                                             const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.param(p));
  return tape.backward(f(tape, vars));
}

// Compares reverse-mode gradients with central differences
// (f(p+h) - f(p-h)) / 2h entry by entry. The relative error of an entry is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult grad_check(const ScalarBuilder& f,
                                  std::vector<Tensor> params, double step) {
  if (!(step > 0.0)) throw ArgumentError("grad_check: step must be positive");
  const std::vector<Tensor> analytic = evaluate_gradient(f, params);

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double original = params[p][i];
      params[p][i] = original + step;
      const double plus = evaluate_scalar(f, params);
      params[p][i] = original - step;
      const double minus = evaluate_scalar(f, params);
      params[p][i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite value probing param " +
                           std::to_string(p) + " entry " + std::to_string(i));
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[p][i];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (result.entries_checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace isogcn
