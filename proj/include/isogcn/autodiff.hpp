#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "isogcn/tensor.hpp"

namespace isogcn {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

namespace detail {

// C = A^T B without materializing A^T.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  Tensor c(Shape{m, p});
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < m; ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) c(i, j) += aki * b(k, j);
    }
  }
  return c;
}

// C = A B^T without materializing B^T.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), n = a.cols(), p = b.rows();
  Tensor c(Shape{m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  }
  return c;
}

inline void accumulate(Tensor& into, const Tensor& g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

}  // namespace detail

// Linear record of primitive operations for reverse-mode differentiation.
// A tape belongs to one thread; independent tapes may run concurrently.
class Tape {
 public:
  using Inputs = std::vector<const Tensor*>;
  using ForwardFn = std::function<Tensor(const Inputs&)>;
  // Writes d(out)/d(input_i) contributions into grads[i]; grads[i] is null
  // when input i does not lead to a parameter.
  using BackwardFn = std::function<void(const Inputs& inputs, const Tensor& out,
                                        const Tensor& grad_out,
                                        const std::vector<Tensor*>& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var param(Tensor value) {
    params_.push_back(nodes_.size());
    return push(Node{"param", std::move(value), {}, {}, {}, true, true});
  }

  Var constant(Tensor value) {
    return push(Node{"constant", std::move(value), {}, {}, {}, false, true});
  }

  Var apply(std::string op, std::vector<Var> inputs, ForwardFn forward,
            BackwardFn backward) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    bool needs_grad = false;
    for (const Var& v : inputs) {
      if (v.tape != this) {
        throw ContractError(op + ": operand recorded on a different tape");
      }
      ids.push_back(v.id);
      needs_grad = needs_grad || nodes_[v.id].requires_grad;
    }
    Tensor out = forward(gather(ids));
    return push(Node{std::move(op), std::move(out), std::move(ids),
                     std::move(forward), std::move(backward), needs_grad,
                     false});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t param_count() const { return params_.size(); }

  // Gradient of the scalar `output` with respect to every param(), in
  // registration order. Accumulators are reset first, so repeated calls are
  // independent.
  std::vector<Tensor> backward(Var output) {
    if (output.tape != this) {
      throw ContractError("backward: output belongs to a different tape");
    }
    if (value(output).size() != 1) {
      throw ContractError("backward: output must be scalar, got shape " +
                          shape_string(value(output).shape()));
    }
    grads_.assign(nodes_.size(), Tensor());
    touched_.assign(nodes_.size(), false);
    backward_order_.clear();

    grads_[output.id] = Tensor::filled(value(output).shape(), 1.0);
    touched_[output.id] = true;

    for (std::size_t id = nodes_.size(); id-- > 0;) {
      const Node& node = nodes_[id];
      if (node.leaf) continue;
      backward_order_.push_back(id);
      if (!touched_[id] || !node.requires_grad) continue;
      std::vector<Tensor*> input_grads(node.inputs.size(), nullptr);
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const std::size_t in = node.inputs[i];
        if (!nodes_[in].requires_grad) continue;
        if (!touched_[in]) {
          grads_[in] = Tensor::zeros(nodes_[in].value.shape());
          touched_[in] = true;
        }
        input_grads[i] = &grads_[in];
      }
      node.backward(gather(node.inputs), node.value, grads_[id], input_grads);
    }

    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (std::size_t id : params_) {
      out.push_back(touched_[id] ? grads_[id]
                                 : Tensor::zeros(nodes_[id].value.shape()));
    }
    return out;
  }

  // Op node ids in the order the most recent backward() visited them.
  const std::vector<std::size_t>& backward_order() const {
    return backward_order_;
  }

  // Re-runs every recorded operation from the leaves and reports whether the
  // results match the recorded values bit for bit.
  bool replay_matches() const {
    std::vector<Tensor> fresh(nodes_.size());
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& node = nodes_[id];
      if (node.leaf) {
        fresh[id] = node.value;
        continue;
      }
      Inputs in;
      in.reserve(node.inputs.size());
      for (std::size_t i : node.inputs) in.push_back(&fresh[i]);
      fresh[id] = node.forward(in);
      if (!(fresh[id] == node.value)) return false;
    }
    return true;
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad;
    bool leaf;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  Inputs gather(const std::vector<std::size_t>& ids) const {
    Inputs in;
    in.reserve(ids.size());
    for (std::size_t i : ids) in.push_back(&nodes_[i].value);
    return in;
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> params_;
  std::vector<Tensor> grads_;
  std::vector<bool> touched_;
  std::vector<std::size_t> backward_order_;
};

inline const Tensor& value_of(const Var& v) { return v.tape->value(v); }

inline Var lift_constant(const Var& like, Tensor c) {
  return like.tape->constant(std::move(c));
}

// ---------------------------------------------------------------------------
// Recording primitives. Each mirrors the plain Tensor function of the same
// name in tensor.hpp.

inline Var matmul(Var a, Var b) {
  return a.tape->apply(
      "matmul", {a, b},
      [](const Tape::Inputs& in) { return matmul(*in[0], *in[1]); },
      [](const Tape::Inputs& in, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (grads[0]) detail::accumulate(*grads[0], detail::matmul_nt(g, *in[1]));
        if (grads[1]) detail::accumulate(*grads[1], detail::matmul_tn(*in[0], g));
      });
}

inline Var transpose(Var a) {
  return a.tape->apply(
      "transpose", {a},
      [](const Tape::Inputs& in) { return transpose(*in[0]); },
      [](const Tape::Inputs&, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (grads[0]) detail::accumulate(*grads[0], transpose(g));
      });
}

inline Var add(Var a, Var b) {
  return a.tape->apply(
      "add", {a, b}, [](const Tape::Inputs& in) { return add(*in[0], *in[1]); },
      [](const Tape::Inputs&, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (grads[0]) detail::accumulate(*grads[0], g);
        if (grads[1]) detail::accumulate(*grads[1], g);
      });
}

inline Var sub(Var a, Var b) {
  return a.tape->apply(
      "sub", {a, b}, [](const Tape::Inputs& in) { return sub(*in[0], *in[1]); },
      [](const Tape::Inputs&, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (grads[0]) detail::accumulate(*grads[0], g);
        if (grads[1]) detail::accumulate(*grads[1], scale(g, -1.0));
      });
}

inline Var mul(Var a, Var b) {
  return a.tape->apply(
      "mul", {a, b}, [](const Tape::Inputs& in) { return mul(*in[0], *in[1]); },
      [](const Tape::Inputs& in, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (grads[0]) detail::accumulate(*grads[0], mul(g, *in[1]));
        if (grads[1]) detail::accumulate(*grads[1], mul(g, *in[0]));
      });
}

inline Var div(Var a, Var b) {
  return a.tape->apply(
      "div", {a, b}, [](const Tape::Inputs& in) { return div(*in[0], *in[1]); },
      [](const Tape::Inputs& in, const Tensor& out, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (grads[0]) detail::accumulate(*grads[0], div(g, *in[1]));
        if (grads[1]) {
          detail::accumulate(*grads[1],
                             scale(div(mul(g, out), *in[1]), -1.0));
        }
      });
}

inline Var scale(Var a, double s) {
  return a.tape->apply(
      "scale", {a}, [s](const Tape::Inputs& in) { return scale(*in[0], s); },
      [s](const Tape::Inputs&, const Tensor&, const Tensor& g,
          const std::vector<Tensor*>& grads) {
        if (grads[0]) detail::accumulate(*grads[0], scale(g, s));
      });
}

inline Var scale_by(Var s, Var t) {
  return s.tape->apply(
      "scale_by", {s, t},
      [](const Tape::Inputs& in) { return scale_by(*in[0], *in[1]); },
      [](const Tape::Inputs& in, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (grads[0]) {
          double d = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) d += g[i] * (*in[1])[i];
          (*grads[0])[0] += d;
        }
        if (grads[1]) detail::accumulate(*grads[1], scale(g, in[0]->item()));
      });
}

// Subgradient at 0 is 0.
inline Var relu(Var a) {
  return a.tape->apply(
      "relu", {a}, [](const Tape::Inputs& in) { return relu(*in[0]); },
      [](const Tape::Inputs& in, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i)
          if ((*in[0])[i] > 0.0) (*grads[0])[i] += g[i];
      });
}

inline Var log(Var a) {
  return a.tape->apply(
      "log", {a}, [](const Tape::Inputs& in) { return log(*in[0]); },
      [](const Tape::Inputs& in, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (grads[0]) detail::accumulate(*grads[0], div(g, *in[0]));
      });
}

inline Var sigmoid(Var a) {
  return a.tape->apply(
      "sigmoid", {a}, [](const Tape::Inputs& in) { return sigmoid(*in[0]); },
      [](const Tape::Inputs&, const Tensor& out, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i)
          (*grads[0])[i] += g[i] * out[i] * (1.0 - out[i]);
      });
}

inline Var sum(Var a) {
  return a.tape->apply(
      "sum", {a}, [](const Tape::Inputs& in) { return sum(*in[0]); },
      [](const Tape::Inputs& in, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        const double gs = g.item();
        for (std::size_t i = 0; i < in[0]->size(); ++i) (*grads[0])[i] += gs;
      });
}

inline Var l2_norm_sq(Var a) {
  return a.tape->apply(
      "l2_norm_sq", {a}, [](const Tape::Inputs& in) { return l2_norm_sq(*in[0]); },
      [](const Tape::Inputs& in, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        if (grads[0]) detail::accumulate(*grads[0], scale(*in[0], 2.0 * g.item()));
      });
}

// Gradient at the zero vector is the zero vector.
inline Var l2_norm(Var a) {
  return a.tape->apply(
      "l2_norm", {a}, [](const Tape::Inputs& in) { return l2_norm(*in[0]); },
      [](const Tape::Inputs& in, const Tensor& out, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        const double n = out.item();
        if (!grads[0] || n == 0.0) return;
        detail::accumulate(*grads[0], scale(*in[0], g.item() / n));
      });
}

inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat: empty part list");
  return parts.front().tape->apply(
      "concat", parts,
      [](const Tape::Inputs& in) {
        std::vector<Tensor> vals;
        for (const Tensor* t : in) vals.push_back(*t);
        return concat(std::span<const Tensor>(vals));
      },
      [](const Tape::Inputs& in, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          const std::size_t n = in[p]->size();
          if (grads[p])
            for (std::size_t i = 0; i < n; ++i) (*grads[p])[i] += g[offset + i];
          offset += n;
        }
      });
}

inline Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("hconcat: empty part list");
  return parts.front().tape->apply(
      "hconcat", parts,
      [](const Tape::Inputs& in) {
        std::vector<Tensor> vals;
        for (const Tensor* t : in) vals.push_back(*t);
        return hconcat(std::span<const Tensor>(vals));
      },
      [](const Tape::Inputs& in, const Tensor&, const Tensor& g,
         const std::vector<Tensor*>& grads) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          const std::size_t cols = in[p]->cols();
          if (grads[p]) {
            for (std::size_t i = 0; i < g.rows(); ++i)
              for (std::size_t j = 0; j < cols; ++j)
                (*grads[p])(i, j) += g(i, offset + j);
          }
          offset += cols;
        }
      });
}

inline Var row(Var a, std::size_t r) {
  return a.tape->apply(
      "row", {a}, [r](const Tape::Inputs& in) { return row(*in[0], r); },
      [r](const Tape::Inputs& in, const Tensor&, const Tensor& g,
          const std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        const std::size_t cols = in[0]->cols();
        for (std::size_t j = 0; j < cols; ++j) (*grads[0])(r, j) += g[j];
      });
}

inline Var element(Var a, std::size_t i, std::size_t j) {
  return a.tape->apply(
      "element", {a},
      [i, j](const Tape::Inputs& in) { return element(*in[0], i, j); },
      [i, j](const Tape::Inputs&, const Tensor&, const Tensor& g,
             const std::vector<Tensor*>& grads) {
        if (grads[0]) (*grads[0])(i, j) += g.item();
      });
}

}  // namespace isogcn
