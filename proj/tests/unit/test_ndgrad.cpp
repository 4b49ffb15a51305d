#include <cmath>
#include <cstring>
#include <thread>

#include "doctest.h"
#include "pm/ndgrad/grad_check.hpp"
#include "pm/ndgrad/graph.hpp"
#include "pm/ndgrad/mlp.hpp"

using namespace pm;
using namespace pm::ndgrad;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, Real scale = 1.0) {
  Tensor t(r, c);
  for (Real& v : t.storage()) v = scale * standard_normal(rng);
  return t;
}

// Scalar-loop re-implementation of build_mlp, written independently of the
// graph machinery.
std::vector<Real> scalar_affine(const std::vector<Real>& x, const Tensor& w, const Tensor& b) {
  std::vector<Real> y(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    Real s = b(0, j);
    for (std::size_t i = 0; i < w.rows(); ++i) s += x[i] * w(i, j);
    y[j] = s;
  }
  return y;
}

std::vector<Real> scalar_mlp(const ParamSet& p, const std::string& prefix, const MlpSpec& spec,
                             std::vector<Real> x) {
  auto relu = [](std::vector<Real> v) {
    for (Real& e : v) e = e > 0 ? e : 0;
    return v;
  };
  auto h = scalar_affine(x, p.at(prefix + "/in/w"), p.at(prefix + "/in/b"));
  for (std::size_t k = 0; k < spec.blocks; ++k) {
    const std::string b = prefix + "/block" + std::to_string(k);
    auto t = relu(scalar_affine(h, p.at(b + "/fc1/w"), p.at(b + "/fc1/b")));
    t = scalar_affine(t, p.at(b + "/fc2/w"), p.at(b + "/fc2/b"));
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += t[i];
  }
  return scalar_affine(relu(h), p.at(prefix + "/out/w"), p.at(prefix + "/out/b"));
}

}  // namespace

TEST_CASE("identity graph returns its input") {
  Graph g;
  NodeId x = g.input("x", 2);
  g.mark_output(x);
  Tensor in = Tensor::row(std::vector<Real>{1.0, 2.0});
  auto out = evaluate(g, ParamSet{}, std::vector<Tensor>{in});
  CHECK(out[0] == in);
}

TEST_CASE("single affine layer by hand") {
  Graph g;
  NodeId x = g.input("x", 2);
  g.mark_output(g.affine(x, g.param("w"), g.param("b")));
  ParamSet p;
  p.add("w", Tensor(2, 2, std::vector<Real>{2, 0, 0, 3}));
  p.add("b", Tensor(1, 2, std::vector<Real>{1, 1}));
  auto out = evaluate(g, p, std::vector<Tensor>{Tensor(1, 2, 1.0)});
  CHECK(out[0](0, 0) == 3.0);
  CHECK(out[0](0, 1) == 4.0);
}

TEST_CASE("residual MLP matches scalar-loop oracle") {
  Rng rng(42);
  MlpSpec spec{5, 7, 2, 3, false};
  ParamSet p;
  init_mlp(p, "net", spec, rng);
  // nonzero biases so the oracle exercises them
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.name(i).ends_with("/b")) p.at(i) = random_tensor(1, p.at(i).cols(), rng, 0.3);
  }
  Graph g;
  NodeId x = g.input("x", 5);
  g.mark_output(build_mlp(g, "net", spec, x));
  Tensor in = random_tensor(4, 5, rng);
  auto out = evaluate(g, p, std::vector<Tensor>{in})[0];
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<Real> row(in.row_span(r).begin(), in.row_span(r).end());
    auto expect = scalar_mlp(p, "net", spec, row);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out(r, c) - expect[c]) < 1e-12);
  }
}

TEST_CASE("shape mismatch names the offending node") {
  Graph g;
  NodeId x = g.input("x", 3);
  g.mark_output(g.affine(x, g.param("w"), g.param("b"), "enc/fc0"));
  ParamSet p;
  p.add("w", Tensor(2, 2));
  p.add("b", Tensor(1, 2));
  try {
    evaluate(g, p, std::vector<Tensor>{Tensor(1, 3)});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("enc/fc0") != std::string::npos);
  }
  CHECK_THROWS_AS(evaluate(g, p, std::vector<Tensor>{Tensor(1, 2)}), ShapeError);
  ParamSet missing;
  CHECK_THROWS_AS(evaluate(g, missing, std::vector<Tensor>{Tensor(1, 3)}), ShapeError);
}

TEST_CASE("gradient of simple functions") {
  Graph g;
  NodeId w = g.param("w");
  NodeId sq = g.sum(g.square(w));
  NodeId c = g.sum(g.constant(Tensor::scalar(4.0)));
  ParamSet p;
  p.add("w", Tensor::scalar(3.0));
  p.add("unused", Tensor(2, 2, 1.0));
  auto r = gradient(g, p, {}, sq);
  CHECK(r.value == 9.0);
  CHECK(r.grads.at("w").item() == 6.0);
  CHECK(r.grads.at("unused") == Tensor(2, 2, 0.0));
  auto rc = gradient(g, p, {}, c);
  CHECK(rc.grads.at("w").item() == 0.0);
}

TEST_CASE("gradient of non-scalar output is an error") {
  Graph g;
  NodeId w = g.param("w");
  ParamSet p;
  p.add("w", Tensor(1, 3, 1.0));
  CHECK_THROWS_AS(gradient(g, p, {}, g.exp(w)), ShapeError);
}

TEST_CASE("stop_gradient blocks flow") {
  Graph g;
  NodeId w = g.param("w");
  NodeId y = g.sum(g.mul(g.stop_gradient(w), w));
  ParamSet p;
  p.add("w", Tensor::scalar(2.0));
  CHECK(gradient(g, p, {}, y).grads.at("w").item() == 2.0);
}

TEST_CASE("grad_check on linear regression, relu net, and empty parameter set") {
  Rng rng(3);
  Graph g;
  NodeId x = g.input("x", 4);
  NodeId y = g.input("y", 1);
  NodeId pred = g.affine(x, g.param("w"), g.param("b"));
  NodeId loss = g.mean(g.square(g.sub(pred, y)));
  ParamSet p;
  p.add("w", random_tensor(4, 1, rng));
  p.add("b", random_tensor(1, 1, rng));
  std::vector<Tensor> in{random_tensor(16, 4, rng), random_tensor(16, 1, rng)};
  CHECK(grad_check(g, p, in, loss, 1e-5) < 1e-6);

  Graph net;
  MlpSpec spec{4, 16, 2, 1, false};
  NodeId nx = net.input("x", 4);
  NodeId ny = net.input("y", 1);
  NodeId nl = net.mean(net.square(net.sub(build_mlp(net, "m", spec, nx), ny)));
  ParamSet np;
  init_mlp(np, "m", spec, rng);
  CHECK(grad_check(net, np, in, nl, 1e-5) < 1e-4);

  Graph empty;
  NodeId k = empty.sum(empty.constant(Tensor::scalar(1.0)));
  CHECK(grad_check(empty, ParamSet{}, {}, k, 1e-5) == 0.0);
}

TEST_CASE("every primitive passes finite-difference check") {
  Rng rng(11);
  const std::size_t rows = 3, dim = 4, packed = dim * (dim - 1) / 2;
  ParamSet p;
  p.add("a", random_tensor(rows, dim, rng));
  p.add("b", random_tensor(rows, dim, rng));
  p.add("row", random_tensor(1, dim, rng));
  p.add("col", random_tensor(rows, 1, rng));
  p.add("diag_raw", random_tensor(rows, dim, rng));
  p.add("off", random_tensor(rows, packed, rng, 0.5));
  p.add("ln/gain", random_tensor(1, dim, rng));
  p.add("ln/bias", random_tensor(1, dim, rng));

  Graph g;
  NodeId a = g.param("a"), b = g.param("b");
  NodeId pos = g.add_scalar(g.softplus(b), 0.5);
  std::vector<NodeId> terms;
  terms.push_back(g.sum(g.div(a, pos)));
  terms.push_back(g.sum(g.mul(g.tanh(a), g.sigmoid(b))));
  terms.push_back(g.sum(g.log(pos)));
  terms.push_back(g.mean(g.exp(g.scale(a, 0.3))));
  terms.push_back(g.sum(g.clamp(a, -0.7, 0.7)));
  terms.push_back(g.sum(g.log_sum_exp_cols(g.concat_cols({a, b}))));
  terms.push_back(g.sum(g.square(g.slice_cols(a, 1, 3))));
  terms.push_back(g.sum(g.mul(g.broadcast(g.param("row"), a), b)));
  terms.push_back(g.sum(g.mul(g.broadcast(g.param("col"), a), b)));
  terms.push_back(g.sum(g.square(g.sum_rows(a))));
  terms.push_back(g.sum(g.square(g.sum_cols(b))));
  terms.push_back(g.sum(g.neg(g.relu(g.add_scalar(a, 0.01)))));
  terms.push_back(g.sum(g.square(build_layer_norm(g, "ln", a, dim))));
  NodeId diag = g.add_scalar(g.softplus(g.param("diag_raw")), 0.3);
  terms.push_back(g.sum(g.square(g.tri_solve(diag, g.param("off"), a))));
  terms.push_back(g.sum(g.mul(g.tri_matvec(diag, g.param("off"), b), a)));
  NodeId total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);

  auto report = grad_check_report(g, p, {}, total, 1e-5);
  INFO("worst: " << report.worst_param << "[" << report.worst_index << "]");
  CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("tri_solve inverts tri_matvec") {
  Rng rng(5);
  Graph g;
  NodeId d = g.input("d", 3), l = g.input("l", 3), v = g.input("v", 3);
  g.mark_output(g.tri_solve(d, l, g.tri_matvec(d, l, v)));
  Tensor diag = random_tensor(2, 3, rng);
  for (Real& e : diag.storage()) e = 1.0 + std::abs(e);
  Tensor vin = random_tensor(2, 3, rng);
  auto out = evaluate(g, ParamSet{}, std::vector<Tensor>{diag, random_tensor(2, 3, rng), vin});
  for (std::size_t i = 0; i < vin.size(); ++i) CHECK(out[0][i] == doctest::Approx(vin[i]).epsilon(1e-12));
}

TEST_CASE("gradient is linear in the loss") {
  Rng rng(8);
  MlpSpec spec{3, 8, 1, 2, true};
  ParamSet p;
  init_mlp(p, "m", spec, rng);
  Graph g;
  NodeId x = g.input("x", 3);
  NodeId out = build_mlp(g, "m", spec, x);
  NodeId l1 = g.sum(g.square(out));
  NodeId l2 = g.sum(g.tanh(out));
  NodeId both = g.add(l1, l2);
  std::vector<Tensor> in{random_tensor(5, 3, rng)};
  auto g1 = gradient(g, p, in, l1).grads;
  auto g2 = gradient(g, p, in, l2).grads;
  auto g12 = gradient(g, p, in, both).grads;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.at(i).size(); ++j) {
      Real sum = g1.at(i)[j] + g2.at(i)[j];
      CHECK(std::abs(g12.at(i)[j] - sum) <= 1e-13 * std::max(1.0, std::abs(sum)));
    }
  }
}

TEST_CASE("evaluate is pure and safe to call concurrently") {
  Rng rng(21);
  MlpSpec spec{6, 16, 2, 4, false};
  ParamSet p;
  init_mlp(p, "m", spec, rng);
  Graph g;
  g.mark_output(build_mlp(g, "m", spec, g.input("x", 6)));
  std::vector<Tensor> in{random_tensor(8, 6, rng)};
  Tensor first = evaluate(g, p, in)[0];
  std::vector<Tensor> results(4);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < results.size(); ++t) {
    threads.emplace_back([&, t] { results[t] = evaluate(g, p, in)[0]; });
  }
  for (auto& th : threads) th.join();
  for (const auto& r : results) {
    CHECK(std::memcmp(r.data().data(), first.data().data(), first.size() * sizeof(Real)) == 0);
  }
}

TEST_CASE("random residual MLPs pass grad_check") {
  Rng rng(1234);
  for (int trial = 0; trial < 25; ++trial) {
    std::uniform_int_distribution<std::size_t> width(8, 32), depth(0, 4), io(1, 6);
    MlpSpec spec{io(rng), width(rng), depth(rng), io(rng), trial % 3 == 0};
    ParamSet p;
    init_mlp(p, "m", spec, rng);
    Graph g;
    NodeId x = g.input("x", spec.in);
    NodeId y = g.input("y", spec.out);
    NodeId loss = g.mean(g.square(g.sub(build_mlp(g, "m", spec, x), y)));
    std::vector<Tensor> in{random_tensor(3, spec.in, rng), random_tensor(3, spec.out, rng)};
    auto report = grad_check_report(g, p, in, loss, 1e-5);
    INFO("trial " << trial << " worst " << report.worst_param);
    CHECK(report.max_relative_error < 1e-4);
  }
}

TEST_CASE("ParamSet rejects duplicates and keeps declaration order") {
  ParamSet p;
  p.add("z", Tensor(1, 1));
  p.add("a", Tensor(1, 2));
  CHECK_THROWS_AS(p.add("z", Tensor(1, 1)), ValidationError);
  CHECK(p.name(0) == "z");
  CHECK(p.name(1) == "a");
  CHECK(p.scalar_count() == 3);
}
