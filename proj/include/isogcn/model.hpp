#pragma once

#include <cstddef>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "isogcn/autodiff.hpp"
#include "isogcn/graph.hpp"
#include "isogcn/layers.hpp"

namespace isogcn {

enum class ModelKind { BaselineRgcn, IsoGcnUnscaled, IsoGcnScaled };

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::BaselineRgcn: return "baseline-rgcn";
    case ModelKind::IsoGcnUnscaled: return "iso-gcn-unscaled";
    case ModelKind::IsoGcnScaled: return "iso-gcn-scaled";
  }
  return "unknown";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "baseline-rgcn") return ModelKind::BaselineRgcn;
  if (s == "iso-gcn-unscaled") return ModelKind::IsoGcnUnscaled;
  if (s == "iso-gcn-scaled") return ModelKind::IsoGcnScaled;
  throw ConfigError("unknown model kind '" + s + "'");
}

inline bool uses_attention(ModelKind kind) { return kind != ModelKind::BaselineRgcn; }

struct ModelShape {
  ModelKind kind = ModelKind::IsoGcnScaled;
  std::size_t layers = 2;
  std::size_t d_in = 0;
  std::size_t d_msg = 8;
  std::size_t heads = 4;
  std::size_t bases = 0;  // baseline only; 0 = independent W_r
  std::size_t relations = 0;
  bool degree_norm = false;

  // Hidden width of every layer; the baseline uses the same width as the
  // concatenated attention output for a like-for-like comparison.
  std::size_t width() const { return heads * d_msg; }

  void validate() const {
    if (layers == 0 || d_in == 0 || d_msg == 0 || heads == 0 || relations == 0) {
      throw ConfigError("model dimensions must be positive");
    }
  }
};

// Stack of relational layers followed by a linear readout to one logit per
// node. Exactly one of `rgcn` / `iso` is populated, depending on the kind.
template <typename T>
struct Model {
  std::vector<RgcnLayer<T>> rgcn;
  std::vector<IsoAttnLayer<T>> iso;
  T readout;  // [width x 1]
  T bias;     // [1 x 1]
};

using ModelParams = Model<Tensor>;

// Visits every trainable tensor in a fixed order with a stable name.
template <typename M, typename F>
void visit_tensors(M& model, F&& f) {
  for (std::size_t l = 0; l < model.rgcn.size(); ++l) {
    auto& layer = model.rgcn[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    f(p + "self_kernel", layer.self_kernel);
    for (std::size_t r = 0; r < layer.relation_kernels.size(); ++r)
      f(p + "relation_kernel." + std::to_string(r), layer.relation_kernels[r]);
    if (layer.basis) {
      for (std::size_t b = 0; b < layer.basis->bases.size(); ++b)
        f(p + "basis." + std::to_string(b), layer.basis->bases[b]);
      f(p + "basis_coefficients", layer.basis->coefficients);
    }
  }
  for (std::size_t l = 0; l < model.iso.size(); ++l) {
    auto& layer = model.iso[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    f(p + "self_kernel", layer.self_kernel);
    f(p + "shared_kernel", layer.shared_kernel);
    f(p + "attention", layer.attention);
  }
  f(std::string("readout"), model.readout);
  f(std::string("bias"), model.bias);
}

// Structure-preserving map from Model<T> to Model<U>, visiting tensors in
// visit_tensors order.
template <typename U, typename T, typename F>
Model<U> transform_model(const Model<T>& m, F&& f) {
  Model<U> out;
  for (std::size_t l = 0; l < m.rgcn.size(); ++l) {
    const auto& src = m.rgcn[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    RgcnLayer<U> layer;
    layer.self_kernel = f(p + "self_kernel", src.self_kernel);
    for (std::size_t r = 0; r < src.relation_kernels.size(); ++r)
      layer.relation_kernels.push_back(
          f(p + "relation_kernel." + std::to_string(r), src.relation_kernels[r]));
    if (src.basis) {
      BasisKernels<U> b;
      for (std::size_t i = 0; i < src.basis->bases.size(); ++i)
        b.bases.push_back(f(p + "basis." + std::to_string(i), src.basis->bases[i]));
      b.coefficients = f(p + "basis_coefficients", src.basis->coefficients);
      layer.basis = std::move(b);
    }
    layer.relation_scale = src.relation_scale;
    out.rgcn.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < m.iso.size(); ++l) {
    const auto& src = m.iso[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    IsoAttnLayer<U> layer;
    layer.self_kernel = f(p + "self_kernel", src.self_kernel);
    layer.shared_kernel = f(p + "shared_kernel", src.shared_kernel);
    layer.attention = f(p + "attention", src.attention);
    out.iso.push_back(std::move(layer));
  }
  out.readout = f(std::string("readout"), m.readout);
  out.bias = f(std::string("bias"), m.bias);
  return out;
}

inline Model<Var> lift_params(Tape& tape, const ModelParams& m) {
  return transform_model<Var>(
      m, [&](const std::string&, const Tensor& t) { return tape.param(t); });
}

inline ModelParams init_model(const ModelShape& shape, std::mt19937_64& rng) {
  shape.validate();
  ModelParams m;
  std::size_t d = shape.d_in;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    if (uses_attention(shape.kind)) {
      m.iso.push_back(
          init_isoattn_layer(d, shape.d_msg, shape.heads, shape.relations, rng));
    } else {
      m.rgcn.push_back(
          init_rgcn_layer(d, shape.width(), shape.relations, shape.bases, rng));
    }
    d = shape.width();
  }
  m.readout = glorot_uniform(d, 1, rng);
  m.bias = Tensor::zeros(Shape{1, 1});
  return m;
}

// One logit per node, shape [n x 1].
template <typename T>
T model_logits(const TypedGraph& g, const T& features, const Model<T>& m,
               bool degree_norm = false) {
  LayerOptions opts;
  opts.degree_norm = degree_norm;
  T h = features;
  for (const auto& layer : m.rgcn) h = rgcn_forward(g, h, layer, opts);
  for (const auto& layer : m.iso) h = isoattn_forward(g, h, layer, opts);
  const T ones = lift_constant(features, Tensor::filled(Shape{g.num_nodes(), 1}, 1.0));
  return add(matmul(h, m.readout), matmul(ones, m.bias));
}

inline Tensor model_logits(const TypedGraph& g, const ModelParams& m,
                           bool degree_norm = false) {
  return model_logits<Tensor>(g, g.features(), m, degree_norm);
}

// ---------------------------------------------------------------------------
// Text parameter format:
//
//   isogcn-params 1
//   model <kind> layers <L> d_in <d> d_msg <d> heads <K> bases <B> relations <R> degree_norm <0|1>
//   tensor <name> <rank> <dims...>
//   <values, space separated, 17 significant digits>
//   ...

inline constexpr int kParamsFormatVersion = 1;

inline std::string serialize_params(const ModelShape& shape, const ModelParams& m) {
  std::ostringstream out;
  out << "isogcn-params " << kParamsFormatVersion << '\n';
  out << "model " << to_string(shape.kind) << " layers " << shape.layers
      << " d_in " << shape.d_in << " d_msg " << shape.d_msg << " heads "
      << shape.heads << " bases " << shape.bases << " relations "
      << shape.relations << " degree_norm " << (shape.degree_norm ? 1 : 0)
      << '\n';
  visit_tensors(m, [&](const std::string& name, const Tensor& t) {
    out << "tensor " << name << ' ' << t.rank();
    for (std::size_t d : t.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i) out << ' ';
      out << detail::format_double(t[i]);
    }
    out << '\n';
  });
  return out.str();
}

struct LoadedParams {
  ModelShape shape;
  ModelParams params;
};

inline LoadedParams parse_params(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "isogcn-params") {
    throw ParseError("not an isogcn parameter file");
  }
  if (version != kParamsFormatVersion) {
    throw ParseError("unsupported parameter format version " + std::to_string(version));
  }
  ModelShape shape;
  std::string key, kind;
  int degree_norm = 0;
  in >> key >> kind;
  if (key != "model") throw ParseError("expected 'model' header");
  shape.kind = parse_model_kind(kind);
  auto expect = [&](const char* name, std::size_t& dst) {
    std::string k;
    if (!(in >> k >> dst) || k != name) {
      throw ParseError(std::string("expected '") + name + "' in header");
    }
  };
  expect("layers", shape.layers);
  expect("d_in", shape.d_in);
  expect("d_msg", shape.d_msg);
  expect("heads", shape.heads);
  expect("bases", shape.bases);
  expect("relations", shape.relations);
  if (!(in >> key >> degree_norm) || key != "degree_norm") {
    throw ParseError("expected 'degree_norm' in header");
  }
  shape.degree_norm = degree_norm != 0;

  std::mt19937_64 rng(0);
  ModelParams m = init_model(shape, rng);
  visit_tensors(m, [&](const std::string& name, Tensor& t) {
    std::string tag, got;
    std::size_t rank = 0;
    if (!(in >> tag >> got >> rank) || tag != "tensor") {
      throw ParseError("expected tensor record for " + name);
    }
    if (got != name) throw ParseError("expected tensor " + name + ", found " + got);
    Shape s(rank);
    for (auto& d : s) {
      if (!(in >> d)) throw ParseError("truncated shape for " + name);
    }
    if (s != t.shape()) {
      throw ParseError("tensor " + name + " has shape " + shape_string(s) +
                       ", expected " + shape_string(t.shape()));
    }
    std::vector<double> values(t.size());
    for (auto& v : values) {
      if (!(in >> v)) throw ParseError("truncated values for " + name);
    }
    t = Tensor::from_external(std::move(s), std::move(values));
  });
  return LoadedParams{shape, std::move(m)};
}

inline void save_params(const std::string& path, const ModelShape& shape,
                        const ModelParams& m) {
  detail::write_text_file(path, serialize_params(shape, m));
}

inline LoadedParams load_params(const std::string& path) {
  return parse_params(detail::read_text_file(path));
}

}  // namespace isogcn
