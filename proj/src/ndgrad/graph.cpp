#include "pm/ndgrad/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace pm::ndgrad {

namespace {

std::size_t packed_lower_size(std::size_t dim) { return dim * (dim - (dim > 0)) / 2; }

inline std::size_t lower_index(std::size_t i, std::size_t j) {
  return i * (i - 1) / 2 + j;
}

template <class T>
T stable_softplus(T x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::param: return "param";
    case Op::constant: return "constant";
    case Op::affine: return "affine";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::square: return "square";
    case Op::relu: return "relu";
    case Op::tanh: return "tanh";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::softplus: return "softplus";
    case Op::sigmoid: return "sigmoid";
    case Op::clamp: return "clamp";
    case Op::sum: return "sum";
    case Op::sum_cols: return "sum_cols";
    case Op::sum_rows: return "sum_rows";
    case Op::mean: return "mean";
    case Op::concat_cols: return "concat_cols";
    case Op::slice_cols: return "slice_cols";
    case Op::broadcast: return "broadcast";
    case Op::log_sum_exp_cols: return "log_sum_exp_cols";
    case Op::stop_gradient: return "stop_gradient";
    case Op::tri_solve: return "tri_solve";
    case Op::tri_matvec: return "tri_matvec";
  }
  return "?";
}

// ---------------------------------------------------------------- building

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) {
    if (in >= nodes_.size()) {
      throw ValidationError("graph node input refers to undefined node #" +
                            std::to_string(in));
    }
  }
  nodes_.push_back(std::move(node));
  return NodeId(nodes_.size() - 1);
}

NodeId Graph::input(std::string name, std::size_t cols) {
  Node n;
  n.op = Op::input;
  n.label = std::move(name);
  n.begin = input_nodes_.size();
  n.end = cols;
  NodeId id = push(std::move(n));
  input_nodes_.push_back(id);
  return id;
}

NodeId Graph::param(std::string name) {
  Node n;
  n.op = Op::param;
  n.label = std::move(name);
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value, std::string label) {
  Node n;
  n.op = Op::constant;
  n.label = std::move(label);
  n.begin = constants_.size();
  constants_.push_back(std::move(value));
  return push(std::move(n));
}

NodeId Graph::unary(Op op, NodeId x, Real a, Real b) {
  Node n;
  n.op = op;
  n.inputs = {x};
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

NodeId Graph::binary(Op op, NodeId x, NodeId y) {
  Node n;
  n.op = op;
  n.inputs = {x, y};
  return push(std::move(n));
}

NodeId Graph::affine(NodeId x, NodeId w, NodeId b, std::string label) {
  Node n;
  n.op = Op::affine;
  n.inputs = {x, w, b};
  n.label = std::move(label);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId x, NodeId w, std::string label) {
  Node n;
  n.op = Op::matmul;
  n.inputs = {x, w};
  n.label = std::move(label);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::add, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::sub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::mul, a, b); }
NodeId Graph::div(NodeId a, NodeId b) { return binary(Op::div, a, b); }
NodeId Graph::neg(NodeId x) { return unary(Op::neg, x); }
NodeId Graph::scale(NodeId x, Real factor) { return unary(Op::scale, x, factor); }
NodeId Graph::add_scalar(NodeId x, Real offset) {
  return unary(Op::add_scalar, x, offset);
}
NodeId Graph::square(NodeId x) { return unary(Op::square, x); }
NodeId Graph::relu(NodeId x) { return unary(Op::relu, x); }
NodeId Graph::tanh(NodeId x) { return unary(Op::tanh, x); }
NodeId Graph::exp(NodeId x) { return unary(Op::exp, x); }
NodeId Graph::log(NodeId x) { return unary(Op::log, x); }
NodeId Graph::softplus(NodeId x) { return unary(Op::softplus, x); }
NodeId Graph::sigmoid(NodeId x) { return unary(Op::sigmoid, x); }
NodeId Graph::clamp(NodeId x, Real lo, Real hi) {
  if (!(lo <= hi)) throw ValidationError("clamp with lo > hi");
  return unary(Op::clamp, x, lo, hi);
}
NodeId Graph::sum(NodeId x) { return unary(Op::sum, x); }
NodeId Graph::sum_cols(NodeId x) { return unary(Op::sum_cols, x); }
NodeId Graph::sum_rows(NodeId x) { return unary(Op::sum_rows, x); }
NodeId Graph::mean(NodeId x) { return unary(Op::mean, x); }

NodeId Graph::concat_cols(std::vector<NodeId> parts) {
  if (parts.empty()) throw ValidationError("concat_cols of zero parts");
  Node n;
  n.op = Op::concat_cols;
  n.inputs = std::move(parts);
  return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId x, std::size_t begin, std::size_t end) {
  if (begin > end) throw ValidationError("slice_cols with begin > end");
  Node n;
  n.op = Op::slice_cols;
  n.inputs = {x};
  n.begin = begin;
  n.end = end;
  return push(std::move(n));
}

NodeId Graph::broadcast(NodeId x, NodeId like) { return binary(Op::broadcast, x, like); }
NodeId Graph::log_sum_exp_cols(NodeId x) { return unary(Op::log_sum_exp_cols, x); }
NodeId Graph::stop_gradient(NodeId x) { return unary(Op::stop_gradient, x); }

NodeId Graph::tri_solve(NodeId diag, NodeId lower, NodeId v) {
  Node n;
  n.op = Op::tri_solve;
  n.inputs = {diag, lower, v};
  return push(std::move(n));
}

NodeId Graph::tri_matvec(NodeId diag, NodeId lower, NodeId v) {
  Node n;
  n.op = Op::tri_matvec;
  n.inputs = {diag, lower, v};
  return push(std::move(n));
}

void Graph::set_label(NodeId id, std::string label) { nodes_.at(id).label = std::move(label); }

std::vector<std::string> Graph::param_names() const {
  std::set<std::string> names;
  for (const auto& n : nodes_) {
    if (n.op == Op::param) names.insert(n.label);
  }
  return {names.begin(), names.end()};
}

std::string Graph::describe(NodeId id) const {
  const Node& n = nodes_.at(id);
  std::string s = "node #" + std::to_string(id);
  if (!n.label.empty()) s += " '" + n.label + "'";
  s += " (" + std::string(op_name(n.op)) + ")";
  return s;
}

// ---------------------------------------------------------------- shapes

namespace {

Shape infer_shape(const Graph& g, NodeId id, const std::vector<Shape>& shapes,
                  const ParamSet& params, std::span<const Tensor> inputs) {
  const Node& n = g.node(id);
  auto fail = [&](const std::string& why) -> Shape {
    throw ShapeError(g.describe(id) + ": " + why);
  };
  auto in = [&](std::size_t k) { return shapes[n.inputs[k]]; };
  switch (n.op) {
    case Op::input: {
      const Tensor& t = inputs[n.begin];
      if (t.cols() != n.end) {
        return fail("expected " + std::to_string(n.end) + " columns, got input of shape " +
                    to_string(t.shape()));
      }
      return t.shape();
    }
    case Op::param: {
      auto idx = params.find(n.label);
      if (!idx) return fail("parameter '" + n.label + "' is missing from the parameter set");
      return params.at(*idx).shape();
    }
    case Op::constant:
      return g.constant_value(n).shape();
    case Op::affine:
    case Op::matmul: {
      Shape x = in(0), w = in(1);
      if (x[1] != w[0]) {
        return fail("input " + to_string(x) + " does not match weight " + to_string(w));
      }
      if (n.op == Op::affine) {
        Shape b = in(2);
        if (b[0] != 1 || b[1] != w[1]) {
          return fail("bias " + to_string(b) + " does not match weight " + to_string(w));
        }
      }
      return {x[0], w[1]};
    }
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div:
      if (in(0) != in(1)) {
        return fail("operand shapes differ: " + to_string(in(0)) + " vs " + to_string(in(1)));
      }
      return in(0);
    case Op::neg:
    case Op::scale:
    case Op::add_scalar:
    case Op::square:
    case Op::relu:
    case Op::tanh:
    case Op::exp:
    case Op::log:
    case Op::softplus:
    case Op::sigmoid:
    case Op::clamp:
    case Op::stop_gradient:
      return in(0);
    case Op::sum:
    case Op::mean:
      return {1, 1};
    case Op::sum_cols:
      return {in(0)[0], 1};
    case Op::sum_rows:
      return {1, in(0)[1]};
    case Op::log_sum_exp_cols:
      if (in(0)[1] == 0) return fail("log-sum-exp over zero columns");
      return {in(0)[0], 1};
    case Op::concat_cols: {
      std::size_t rows = in(0)[0], cols = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (in(k)[0] != rows) {
          return fail("part " + std::to_string(k) + " has shape " + to_string(in(k)) +
                      ", expected " + std::to_string(rows) + " rows");
        }
        cols += in(k)[1];
      }
      return {rows, cols};
    }
    case Op::slice_cols:
      if (n.end > in(0)[1]) {
        return fail("slice [" + std::to_string(n.begin) + "," + std::to_string(n.end) +
                    ") out of range for " + to_string(in(0)));
      }
      return {in(0)[0], n.end - n.begin};
    case Op::broadcast: {
      Shape x = in(0), to = in(1);
      bool rows_ok = x[0] == to[0] || x[0] == 1;
      bool cols_ok = x[1] == to[1] || x[1] == 1;
      if (!rows_ok || !cols_ok) {
        return fail("cannot broadcast " + to_string(x) + " to " + to_string(to));
      }
      return to;
    }
    case Op::tri_solve:
    case Op::tri_matvec: {
      Shape d = in(0), l = in(1), v = in(2);
      if (d != v || l[0] != d[0] || l[1] != packed_lower_size(d[1])) {
        return fail("triangular operands " + to_string(d) + ", " + to_string(l) + ", " +
                    to_string(v) + " are inconsistent");
      }
      return v;
    }
  }
  return fail("unknown op");
}

std::vector<bool> needed_nodes(const Graph& g, std::span<const NodeId> targets) {
  std::vector<bool> needed(g.nodes().size(), false);
  for (NodeId t : targets) needed.at(t) = true;
  for (std::size_t i = g.nodes().size(); i-- > 0;) {
    if (!needed[i]) continue;
    for (NodeId in : g.nodes()[i].inputs) needed[in] = true;
  }
  return needed;
}

// ---------------------------------------------------------------- forward

template <class T>
void compute(const Graph& g, NodeId id, std::vector<BasicTensor<T>>& v, const Shape& shape,
             const ParamSet& params, std::span<const Tensor> inputs) {
  using TT = BasicTensor<T>;
  const Node& n = g.node(id);
  auto x = [&](std::size_t k) -> const TT& { return v[n.inputs[k]]; };
  TT out;
  switch (n.op) {
    case Op::input:
      out = TT::converted(inputs[n.begin]);
      break;
    case Op::param:
      out = TT::converted(params.at(n.label));
      break;
    case Op::constant:
      out = TT::converted(g.constant_value(n));
      break;
    case Op::affine:
      out = TT(shape[0], shape[1]);
      out.mat().noalias() = x(0).mat() * x(1).mat();
      out.mat().rowwise() += x(2).mat().row(0);
      break;
    case Op::matmul:
      out = TT(shape[0], shape[1]);
      out.mat().noalias() = x(0).mat() * x(1).mat();
      break;
    case Op::add:
      out = x(0);
      out.mat() += x(1).mat();
      break;
    case Op::sub:
      out = x(0);
      out.mat() -= x(1).mat();
      break;
    case Op::mul:
      out = x(0);
      out.mat().array() *= x(1).mat().array();
      break;
    case Op::div:
      out = x(0);
      out.mat().array() /= x(1).mat().array();
      break;
    case Op::neg:
      out = x(0);
      out.mat() *= T(-1);
      break;
    case Op::scale:
      out = x(0);
      out.mat() *= T(n.a);
      break;
    case Op::add_scalar:
      out = x(0);
      out.mat().array() += T(n.a);
      break;
    case Op::square:
      out = x(0);
      out.mat().array() = out.mat().array().square();
      break;
    case Op::relu:
      out = x(0);
      for (T& e : out.storage()) e = e > 0 ? e : T(0);
      break;
    case Op::tanh:
      out = x(0);
      for (T& e : out.storage()) e = std::tanh(e);
      break;
    case Op::exp:
      out = x(0);
      for (T& e : out.storage()) e = std::exp(e);
      break;
    case Op::log:
      out = x(0);
      for (T& e : out.storage()) e = std::log(e);
      break;
    case Op::softplus:
      out = x(0);
      for (T& e : out.storage()) e = stable_softplus(e);
      break;
    case Op::sigmoid:
      out = x(0);
      for (T& e : out.storage()) e = stable_sigmoid(e);
      break;
    case Op::clamp:
      out = x(0);
      for (T& e : out.storage()) e = std::min(std::max(e, T(n.a)), T(n.b));
      break;
    case Op::stop_gradient:
      out = x(0);
      break;
    case Op::sum:
      out = TT::scalar(x(0).mat().sum());
      break;
    case Op::mean:
      out = TT::scalar(x(0).size() == 0 ? T(0) : x(0).mat().mean());
      break;
    case Op::sum_cols:
      out = TT(shape[0], 1);
      out.mat() = x(0).mat().rowwise().sum();
      break;
    case Op::sum_rows:
      out = TT(1, shape[1]);
      out.mat() = x(0).mat().colwise().sum();
      break;
    case Op::log_sum_exp_cols: {
      const TT& a = x(0);
      out = TT(shape[0], 1);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        T m = a.mat().row(Eigen::Index(r)).maxCoeff();
        T s = 0;
        for (std::size_t c = 0; c < a.cols(); ++c) s += std::exp(a(r, c) - m);
        out(r, 0) = m + std::log(s);
      }
      break;
    }
    case Op::concat_cols: {
      out = TT(shape[0], shape[1]);
      Eigen::Index col = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const TT& part = x(k);
        out.mat().middleCols(col, Eigen::Index(part.cols())) = part.mat();
        col += Eigen::Index(part.cols());
      }
      break;
    }
    case Op::slice_cols:
      out = TT(shape[0], shape[1]);
      out.mat() = x(0).mat().middleCols(Eigen::Index(n.begin), Eigen::Index(shape[1]));
      break;
    case Op::broadcast: {
      const TT& a = x(0);
      out = TT(shape[0], shape[1]);
      for (std::size_t r = 0; r < shape[0]; ++r) {
        std::size_t ar = a.rows() == 1 ? 0 : r;
        for (std::size_t c = 0; c < shape[1]; ++c) {
          out(r, c) = a(ar, a.cols() == 1 ? 0 : c);
        }
      }
      break;
    }
    case Op::tri_solve: {
      const TT &d = x(0), &l = x(1), &b = x(2);
      out = TT(shape[0], shape[1]);
      const std::size_t dim = shape[1];
      for (std::size_t r = 0; r < shape[0]; ++r) {
        for (std::size_t i = 0; i < dim; ++i) {
          T acc = b(r, i);
          for (std::size_t j = 0; j < i; ++j) acc -= l(r, lower_index(i, j)) * out(r, j);
          out(r, i) = acc / d(r, i);
        }
      }
      break;
    }
    case Op::tri_matvec: {
      const TT &d = x(0), &l = x(1), &b = x(2);
      out = TT(shape[0], shape[1]);
      const std::size_t dim = shape[1];
      for (std::size_t r = 0; r < shape[0]; ++r) {
        for (std::size_t i = 0; i < dim; ++i) {
          T acc = d(r, i) * b(r, i);
          for (std::size_t j = 0; j < i; ++j) acc += l(r, lower_index(i, j)) * b(r, j);
          out(r, i) = acc;
        }
      }
      break;
    }
  }
  v[id] = std::move(out);
}

}  // namespace

const Tensor& Evaluation::operator[](NodeId id) const {
  if (!computed_.at(id)) {
    throw ValidationError("node #" + std::to_string(id) + " was not evaluated");
  }
  return values_[id];
}

namespace {

template <class T>
std::vector<BasicTensor<T>> run_forward(const Graph& graph, const ParamSet& params,
                                        std::span<const Tensor> inputs,
                                        const std::vector<bool>& needed) {
  if (inputs.size() != graph.input_count()) {
    throw ShapeError("graph expects " + std::to_string(graph.input_count()) +
                     " inputs, got " + std::to_string(inputs.size()));
  }
  const std::size_t count = graph.nodes().size();
  // Validate every required node's shape before executing anything.
  std::vector<Shape> shapes(count, Shape{0, 0});
  for (std::size_t i = 0; i < count; ++i) {
    if (needed[i]) shapes[i] = infer_shape(graph, NodeId(i), shapes, params, inputs);
  }
  std::vector<BasicTensor<T>> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (needed[i]) compute<T>(graph, NodeId(i), values, shapes[i], params, inputs);
  }
  return values;
}

}  // namespace

Evaluation forward(const Graph& graph, const ParamSet& params,
                   std::span<const Tensor> inputs, std::span<const NodeId> targets) {
  std::vector<bool> needed = needed_nodes(graph, targets);
  auto values = run_forward<Real>(graph, params, inputs, needed);
  return Evaluation(std::move(values), std::move(needed));
}

std::vector<ExtendedTensor> evaluate_extended(const Graph& graph, const ParamSet& params,
                                              std::span<const Tensor> inputs,
                                              std::span<const NodeId> outputs) {
  auto values = run_forward<long double>(graph, params, inputs, needed_nodes(graph, outputs));
  std::vector<ExtendedTensor> out;
  out.reserve(outputs.size());
  for (NodeId id : outputs) out.push_back(values[id]);
  return out;
}

std::vector<Tensor> evaluate(const Graph& graph, const ParamSet& params,
                             std::span<const Tensor> inputs,
                             std::span<const NodeId> outputs) {
  Evaluation ev = forward(graph, params, inputs, outputs);
  std::vector<Tensor> out;
  out.reserve(outputs.size());
  for (NodeId id : outputs) out.push_back(ev[id]);
  return out;
}

std::vector<Tensor> evaluate(const Graph& graph, const ParamSet& params,
                             std::span<const Tensor> inputs) {
  return evaluate(graph, params, inputs, graph.outputs());
}

// ---------------------------------------------------------------- backward

struct Backprop {
  const Graph& g;
  const Evaluation& ev;
  std::vector<Tensor> adj;
  std::vector<bool> has_adj;

  const Tensor& val(NodeId id) const { return ev.values_[id]; }

  Tensor& grad_of(NodeId id) {
    if (!has_adj[id]) {
      const Tensor& v = val(id);
      adj[id] = Tensor(v.rows(), v.cols());
      has_adj[id] = true;
    }
    return adj[id];
  }

  void run(NodeId id, const std::vector<bool>& wants) {
    const Node& n = g.node(id);
    const Tensor& gy = adj[id];
    auto want = [&](std::size_t k) { return bool(wants[n.inputs[k]]); };
    auto in = [&](std::size_t k) -> const Tensor& { return val(n.inputs[k]); };
    auto acc = [&](std::size_t k) -> Tensor& { return grad_of(n.inputs[k]); };

    switch (n.op) {
      case Op::input:
      case Op::param:
      case Op::constant:
      case Op::stop_gradient:
        break;
      case Op::affine:
      case Op::matmul:
        if (want(0)) acc(0).mat().noalias() += gy.mat() * in(1).mat().transpose();
        if (want(1)) acc(1).mat().noalias() += in(0).mat().transpose() * gy.mat();
        if (n.op == Op::affine && want(2)) acc(2).mat() += gy.mat().colwise().sum();
        break;
      case Op::add:
        if (want(0)) acc(0).mat() += gy.mat();
        if (want(1)) acc(1).mat() += gy.mat();
        break;
      case Op::sub:
        if (want(0)) acc(0).mat() += gy.mat();
        if (want(1)) acc(1).mat() -= gy.mat();
        break;
      case Op::mul:
        if (want(0)) acc(0).mat().array() += gy.mat().array() * in(1).mat().array();
        if (want(1)) acc(1).mat().array() += gy.mat().array() * in(0).mat().array();
        break;
      case Op::div:
        if (want(0)) acc(0).mat().array() += gy.mat().array() / in(1).mat().array();
        if (want(1)) {
          acc(1).mat().array() -= gy.mat().array() * in(0).mat().array() /
                                  in(1).mat().array().square();
        }
        break;
      case Op::neg:
        if (want(0)) acc(0).mat() -= gy.mat();
        break;
      case Op::scale:
        if (want(0)) acc(0).mat() += n.a * gy.mat();
        break;
      case Op::add_scalar:
        if (want(0)) acc(0).mat() += gy.mat();
        break;
      case Op::square:
        if (want(0)) acc(0).mat().array() += 2.0 * gy.mat().array() * in(0).mat().array();
        break;
      case Op::relu:
        if (want(0)) {
          Tensor& a = acc(0);
          const Tensor& x = in(0);
          for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] > 0) a[i] += gy[i];
          }
        }
        break;
      case Op::tanh:
        if (want(0)) {
          const Tensor& y = val(id);
          acc(0).mat().array() += gy.mat().array() * (1.0 - y.mat().array().square());
        }
        break;
      case Op::exp:
        if (want(0)) acc(0).mat().array() += gy.mat().array() * val(id).mat().array();
        break;
      case Op::log:
        if (want(0)) acc(0).mat().array() += gy.mat().array() / in(0).mat().array();
        break;
      case Op::softplus:
        if (want(0)) {
          Tensor& a = acc(0);
          const Tensor& x = in(0);
          for (std::size_t i = 0; i < x.size(); ++i) a[i] += gy[i] * stable_sigmoid(x[i]);
        }
        break;
      case Op::sigmoid:
        if (want(0)) {
          const Tensor& y = val(id);
          acc(0).mat().array() +=
              gy.mat().array() * y.mat().array() * (1.0 - y.mat().array());
        }
        break;
      case Op::clamp:
        if (want(0)) {
          Tensor& a = acc(0);
          const Tensor& x = in(0);
          for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] >= n.a && x[i] <= n.b) a[i] += gy[i];
          }
        }
        break;
      case Op::sum:
        if (want(0)) acc(0).mat().array() += gy.item();
        break;
      case Op::mean:
        if (want(0) && in(0).size() > 0) {
          acc(0).mat().array() += gy.item() / Real(in(0).size());
        }
        break;
      case Op::sum_cols:
        if (want(0)) acc(0).mat().colwise() += gy.mat().col(0);
        break;
      case Op::sum_rows:
        if (want(0)) acc(0).mat().rowwise() += gy.mat().row(0);
        break;
      case Op::log_sum_exp_cols:
        if (want(0)) {
          const Tensor& x = in(0);
          const Tensor& y = val(id);
          Tensor& a = acc(0);
          for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < x.cols(); ++c) {
              a(r, c) += gy(r, 0) * std::exp(x(r, c) - y(r, 0));
            }
          }
        }
        break;
      case Op::concat_cols: {
        Eigen::Index col = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto width = Eigen::Index(in(k).cols());
          if (want(k)) acc(k).mat() += gy.mat().middleCols(col, width);
          col += width;
        }
        break;
      }
      case Op::slice_cols:
        if (want(0)) {
          acc(0).mat().middleCols(Eigen::Index(n.begin), Eigen::Index(gy.cols())) += gy.mat();
        }
        break;
      case Op::broadcast:
        if (want(0)) {
          Tensor& a = acc(0);
          for (std::size_t r = 0; r < gy.rows(); ++r) {
            std::size_t ar = a.rows() == 1 ? 0 : r;
            for (std::size_t c = 0; c < gy.cols(); ++c) {
              a(ar, a.cols() == 1 ? 0 : c) += gy(r, c);
            }
          }
        }
        break;
      case Op::tri_solve: {
        const Tensor &d = in(0), &l = in(1);
        const Tensor& y = val(id);
        const std::size_t dim = y.cols();
        std::vector<Real> gv(dim);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          // gv = L^{-T} gy (back substitution)
          for (std::size_t i = dim; i-- > 0;) {
            Real s = gy(r, i);
            for (std::size_t k = i + 1; k < dim; ++k) s -= l(r, lower_index(k, i)) * gv[k];
            gv[i] = s / d(r, i);
          }
          if (want(2)) {
            Tensor& a = acc(2);
            for (std::size_t i = 0; i < dim; ++i) a(r, i) += gv[i];
          }
          if (want(0)) {
            Tensor& a = acc(0);
            for (std::size_t i = 0; i < dim; ++i) a(r, i) -= gv[i] * y(r, i);
          }
          if (want(1)) {
            Tensor& a = acc(1);
            for (std::size_t i = 1; i < dim; ++i) {
              for (std::size_t j = 0; j < i; ++j) a(r, lower_index(i, j)) -= gv[i] * y(r, j);
            }
          }
        }
        break;
      }
      case Op::tri_matvec: {
        const Tensor &d = in(0), &l = in(1), &v = in(2);
        const std::size_t dim = v.cols();
        for (std::size_t r = 0; r < v.rows(); ++r) {
          if (want(2)) {
            Tensor& a = acc(2);
            for (std::size_t j = 0; j < dim; ++j) {
              Real s = d(r, j) * gy(r, j);
              for (std::size_t i = j + 1; i < dim; ++i) s += l(r, lower_index(i, j)) * gy(r, i);
              a(r, j) += s;
            }
          }
          if (want(0)) {
            Tensor& a = acc(0);
            for (std::size_t i = 0; i < dim; ++i) a(r, i) += gy(r, i) * v(r, i);
          }
          if (want(1)) {
            Tensor& a = acc(1);
            for (std::size_t i = 1; i < dim; ++i) {
              for (std::size_t j = 0; j < i; ++j) a(r, lower_index(i, j)) += gy(r, i) * v(r, j);
            }
          }
        }
        break;
      }
    }
  }
};

GradientResult gradient(const Graph& graph, const ParamSet& params,
                        std::span<const Tensor> inputs, NodeId loss) {
  std::vector<NodeId> targets{loss};
  for (NodeId o : graph.outputs()) targets.push_back(o);
  Evaluation ev = forward(graph, params, inputs, targets);

  const Tensor& value = ev[loss];
  if (value.size() != 1) {
    throw ShapeError(graph.describe(loss) + ": gradient requires a scalar output, got " +
                     to_string(value.shape()));
  }

  const std::size_t count = graph.nodes().size();
  std::vector<bool> reach = needed_nodes(graph, std::span<const NodeId>(&loss, 1));
  // A node wants a gradient if it is reachable from the loss and depends on a
  // parameter through a path without stop_gradient.
  std::vector<bool> wants(count, false);
  for (std::size_t i = 0; i < count; ++i) {
    if (!reach[i]) continue;
    const Node& n = graph.nodes()[i];
    if (n.op == Op::param) {
      wants[i] = true;
    } else if (n.op != Op::stop_gradient) {
      for (NodeId in : n.inputs) wants[i] = wants[i] || wants[in];
    }
  }

  Backprop bp{graph, ev, std::vector<Tensor>(count), std::vector<bool>(count, false)};
  bp.grad_of(loss)[0] = 1.0;
  for (std::size_t i = loss + 1; i-- > 0;) {
    if (!wants[i] || !bp.has_adj[i]) continue;
    bp.run(NodeId(i), wants);
  }

  GradientResult result;
  result.value = value.item();
  result.grads = params.zeros_like();
  for (std::size_t i = 0; i < count; ++i) {
    const Node& n = graph.nodes()[i];
    if (n.op != Op::param || !bp.has_adj[i]) continue;
    result.grads.at(n.label).mat() += bp.adj[i].mat();
  }
  for (NodeId o : graph.outputs()) result.outputs.push_back(ev[o]);
  return result;
}

GradientResult gradient(const Graph& graph, const ParamSet& params,
                        std::span<const Tensor> inputs) {
  if (graph.outputs().empty()) throw ValidationError("graph has no marked outputs");
  return gradient(graph, params, inputs, graph.outputs().front());
}

}  // namespace pm::ndgrad
