#include "pm/ndgrad/mlp.hpp"

#include <cmath>

namespace pm::ndgrad {

namespace {

Tensor gaussian_tensor(std::size_t rows, std::size_t cols, Real stddev, Rng& rng) {
  Tensor t(rows, cols);
  for (Real& v : t.storage()) v = stddev * standard_normal(rng);
  return t;
}

void add_affine(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
                Real stddev, Rng& rng) {
  params.add(name + "/w", gaussian_tensor(in, out, stddev, rng));
  params.add(name + "/b", Tensor(1, out));
}

NodeId affine_node(Graph& g, const std::string& name, NodeId x) {
  return g.affine(x, g.param(name + "/w"), g.param(name + "/b"), name);
}

}  // namespace

void init_mlp(ParamSet& params, const std::string& prefix, const MlpSpec& spec, Rng& rng,
              OutputInit output_init) {
  if (spec.in == 0 || spec.out == 0) {
    throw ValidationError("mlp '" + prefix + "' needs nonzero input and output widths");
  }
  auto out_std = [&](std::size_t fan_in) {
    return output_init == OutputInit::zero ? 0.0 : 1.0 / std::sqrt(Real(fan_in));
  };
  if (spec.hidden == 0) {
    add_affine(params, prefix + "/out", spec.in, spec.out, out_std(spec.in), rng);
    return;
  }
  const std::size_t h = spec.hidden;
  add_affine(params, prefix + "/in", spec.in, h, 1.0 / std::sqrt(Real(spec.in)), rng);
  for (std::size_t k = 0; k < spec.blocks; ++k) {
    const std::string block = prefix + "/block" + std::to_string(k);
    if (spec.layer_norm) {
      params.add(block + "/ln/gain", Tensor(1, h, 1.0));
      params.add(block + "/ln/bias", Tensor(1, h));
    }
    add_affine(params, block + "/fc1", h, h, std::sqrt(2.0 / Real(h)), rng);
    add_affine(params, block + "/fc2", h, h, 0.5 / std::sqrt(Real(h)), rng);
  }
  add_affine(params, prefix + "/out", h, spec.out, out_std(h), rng);
}

NodeId build_layer_norm(Graph& g, const std::string& prefix, NodeId x, std::size_t width) {
  const Real inv_width = 1.0 / Real(width);
  NodeId mu = g.broadcast(g.scale(g.sum_cols(x), inv_width), x);
  NodeId centered = g.sub(x, mu);
  NodeId var = g.scale(g.sum_cols(g.square(centered)), inv_width);
  NodeId inv_std = g.exp(g.scale(g.log(g.add_scalar(var, 1e-5)), -0.5));
  NodeId normed = g.mul(centered, g.broadcast(inv_std, x));
  NodeId gain = g.broadcast(g.param(prefix + "/gain"), x);
  NodeId bias = g.broadcast(g.param(prefix + "/bias"), x);
  NodeId out = g.add(g.mul(normed, gain), bias);
  g.set_label(out, prefix);
  return out;
}

NodeId build_mlp(Graph& g, const std::string& prefix, const MlpSpec& spec, NodeId x) {
  if (spec.hidden == 0) return affine_node(g, prefix + "/out", x);
  NodeId h = affine_node(g, prefix + "/in", x);
  for (std::size_t k = 0; k < spec.blocks; ++k) {
    const std::string block = prefix + "/block" + std::to_string(k);
    NodeId t = spec.layer_norm ? build_layer_norm(g, block + "/ln", h, spec.hidden) : h;
    t = g.relu(affine_node(g, block + "/fc1", t));
    t = affine_node(g, block + "/fc2", t);
    h = g.add(h, t);
  }
  return affine_node(g, prefix + "/out", g.relu(h));
}

}  // namespace pm::ndgrad
