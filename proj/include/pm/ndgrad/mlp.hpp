#pragma once

#include <string>

#include "pm/ndgrad/graph.hpp"

namespace pm::ndgrad {

// Residual MLP: affine lift to `hidden`, then `blocks` residual blocks
// h + W2 relu(W1 LN(h) + b1) + b2, then relu and an affine read-out.
// hidden == 0 degenerates to a single affine map (used for linear toys).
struct MlpSpec {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t blocks = 0;
  std::size_t out = 0;
  bool layer_norm = false;
};

enum class OutputInit { random, zero };

void init_mlp(ParamSet& params, const std::string& prefix, const MlpSpec& spec, Rng& rng,
              OutputInit output_init = OutputInit::random);

NodeId build_mlp(Graph& graph, const std::string& prefix, const MlpSpec& spec, NodeId x);

// Layer normalization across columns with learned gain and bias.
NodeId build_layer_norm(Graph& graph, const std::string& prefix, NodeId x, std::size_t width);

}  // namespace pm::ndgrad
