#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pm/ndgrad/param_set.hpp"
#include "pm/ndgrad/tensor.hpp"

namespace pm::ndgrad {

using NodeId = std::uint32_t;

enum class Op : std::uint8_t {
  input,
  param,
  constant,
  affine,          // x W + b, b broadcast over rows
  matmul,          // x W
  add,
  sub,
  mul,
  div,
  neg,
  scale,           // a * x
  add_scalar,      // x + a
  square,
  relu,
  tanh,
  exp,
  log,
  softplus,
  sigmoid,
  clamp,           // min(max(x, a), b)
  sum,             // all entries -> 1x1
  sum_cols,        // r x c -> r x 1
  sum_rows,        // r x c -> 1 x c
  mean,            // all entries -> 1x1
  concat_cols,
  slice_cols,      // columns [begin, end)
  broadcast,       // first input expanded to the shape of the second
  log_sum_exp_cols,
  stop_gradient,
  tri_solve,       // rows of L^{-1} v, L given by (diag, strictly-lower packed)
  tri_matvec,      // rows of L v
};

std::string_view op_name(Op op);

struct Node {
  Op op = Op::constant;
  std::vector<NodeId> inputs;
  std::string label;
  Real a = 0.0;
  Real b = 0.0;
  std::size_t begin = 0;  // input slot, slice begin, or declared input cols
  std::size_t end = 0;
};

// Static computation graph. Nodes are appended in topological order, so the
// graph is acyclic by construction. Input rows are dynamic: the same graph
// serves a single instance or a minibatch. Parameters are referenced by name
// and resolved against the ParamSet passed at evaluation time.
class Graph {
 public:
  NodeId input(std::string name, std::size_t cols);
  NodeId param(std::string name);
  NodeId constant(Tensor value, std::string label = {});

  NodeId affine(NodeId x, NodeId w, NodeId b, std::string label = {});
  NodeId matmul(NodeId x, NodeId w, std::string label = {});
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId x);
  NodeId scale(NodeId x, Real factor);
  NodeId add_scalar(NodeId x, Real offset);
  NodeId square(NodeId x);
  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId softplus(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId clamp(NodeId x, Real lo, Real hi);
  NodeId sum(NodeId x);
  NodeId sum_cols(NodeId x);
  NodeId sum_rows(NodeId x);
  NodeId mean(NodeId x);
  NodeId concat_cols(std::vector<NodeId> parts);
  NodeId slice_cols(NodeId x, std::size_t begin, std::size_t end);
  NodeId broadcast(NodeId x, NodeId like);
  NodeId log_sum_exp_cols(NodeId x);
  NodeId stop_gradient(NodeId x);
  NodeId tri_solve(NodeId diag, NodeId lower, NodeId v);
  NodeId tri_matvec(NodeId diag, NodeId lower, NodeId v);

  // Attaches a label used in error messages.
  void set_label(NodeId id, std::string label);

  void mark_output(NodeId id) { outputs_.push_back(id); }
  const std::vector<NodeId>& outputs() const { return outputs_; }

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const Tensor& constant_value(const Node& n) const { return constants_.at(n.begin); }
  std::size_t input_count() const { return input_nodes_.size(); }
  NodeId input_node(std::size_t slot) const { return input_nodes_.at(slot); }

  // Sorted unique parameter names referenced by the graph.
  std::vector<std::string> param_names() const;

  // "node #3 'enc/fc0' (affine)"
  std::string describe(NodeId id) const;

 private:
  NodeId push(Node node);
  NodeId unary(Op op, NodeId x, Real a = 0.0, Real b = 0.0);
  NodeId binary(Op op, NodeId x, NodeId y);

  std::vector<Node> nodes_;
  std::vector<Tensor> constants_;
  std::vector<NodeId> input_nodes_;
  std::vector<NodeId> outputs_;
};

// Forward values of every node required by the requested outputs.
class Evaluation {
 public:
  Evaluation(std::vector<Tensor> values, std::vector<bool> computed)
      : values_(std::move(values)), computed_(std::move(computed)) {}
  const Tensor& operator[](NodeId id) const;
  bool computed(NodeId id) const { return computed_.at(id); }

 private:
  friend struct Backprop;
  std::vector<Tensor> values_;
  std::vector<bool> computed_;
};

// Throws ShapeError naming the offending node when shapes do not validate.
Evaluation forward(const Graph& graph, const ParamSet& params,
                   std::span<const Tensor> inputs,
                   std::span<const NodeId> targets);

// Values of the graph's marked outputs.
std::vector<Tensor> evaluate(const Graph& graph, const ParamSet& params,
                             std::span<const Tensor> inputs);
std::vector<Tensor> evaluate(const Graph& graph, const ParamSet& params,
                             std::span<const Tensor> inputs,
                             std::span<const NodeId> outputs);

// Same forward pass carried out in long double. Parameters and inputs are
// widened exactly; used by the finite-difference oracle.
std::vector<ExtendedTensor> evaluate_extended(const Graph& graph, const ParamSet& params,
                                              std::span<const Tensor> inputs,
                                              std::span<const NodeId> outputs);

struct GradientResult {
  Real value = 0.0;
  ParamSet grads;               // same layout as the params argument
  std::vector<Tensor> outputs;  // marked outputs from the same forward pass
};

// Reverse-mode gradient of a scalar node with respect to every parameter in
// `params`. Parameters the loss does not reach get exact zeros.
GradientResult gradient(const Graph& graph, const ParamSet& params,
                        std::span<const Tensor> inputs, NodeId loss);
// Uses the first marked output as the loss.
GradientResult gradient(const Graph& graph, const ParamSet& params,
                        std::span<const Tensor> inputs);

}  // namespace pm::ndgrad
