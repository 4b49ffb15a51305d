#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include "doctest.h"
#include "pm/distributions.hpp"

using namespace pm;

namespace {

Vector vec(std::initializer_list<Real> v) {
  Vector out(Eigen::Index(v.size()));
  Eigen::Index i = 0;
  for (Real x : v) out[i++] = x;
  return out;
}

// Independent 2-D oracle through the explicit inverse and determinant.
Real explicit_2d_log_density(const Matrix& cov, const Vector& mean, const Vector& x) {
  const Real a = cov(0, 0), b = cov(0, 1), c = cov(1, 0), d = cov(1, 1);
  const Real det = a * d - b * c;
  const Real i00 = d / det, i01 = -b / det, i10 = -c / det, i11 = a / det;
  const Real u0 = x[0] - mean[0], u1 = x[1] - mean[1];
  const Real quad = u0 * (i00 * u0 + i01 * u1) + u1 * (i10 * u0 + i11 * u1);
  return -0.5 * quad - 0.5 * std::log(det) - std::log(2.0 * std::numbers::pi);
}

}  // namespace

TEST_CASE("gaussian and bernoulli log densities") {
  CHECK(log_prob(DiagGaussian::standard(1), vec({0.0})) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(log_prob(DiagGaussian::standard(1), vec({0.0})) == doctest::Approx(-0.91894).epsilon(1e-5));
  CHECK(log_prob(BernoulliVector{vec({0.0})}, vec({1.0})) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-14));

  Matrix l(2, 2);
  l << 1.0, 0.0, 0.5, 1.0;
  FullCovGaussian fc{vec({0.3, -1.2}), l};
  fc.validate();
  Matrix cov = l * l.transpose();
  CHECK(log_prob(fc, fc.mean) ==
        doctest::Approx(explicit_2d_log_density(cov, fc.mean, fc.mean)).epsilon(1e-13));
  Vector x = vec({1.7, 0.4});
  CHECK(log_prob(fc, x) ==
        doctest::Approx(explicit_2d_log_density(cov, fc.mean, x)).epsilon(1e-13));

  CHECK_THROWS_AS(log_prob(DiagGaussian::standard(2), vec({1.0})), ShapeError);
}

TEST_CASE("mixture log density reduces and integrates") {
  MixtureOfGaussians1D one{vec({1.0}), vec({0.0}), vec({0.0})};
  CHECK(log_prob(one, 0.0) == doctest::Approx(-0.918938533204673).epsilon(1e-13));

  MixtureOfGaussians1D m{vec({0.2, 0.5, 0.3}), vec({-2.0, 0.0, 3.0}), vec({-0.5, 0.1, 0.4})};
  m.validate();
  // Riemann sum on a wide grid.
  Real total = 0.0;
  const Real h = 1e-3;
  for (Real x = -15.0; x <= 15.0; x += h) total += std::exp(log_prob(m, x)) * h;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("densities integrate to one by importance sampling") {
  Rng rng(11);
  const int n = 200000;
  // 1-D diagonal Gaussian under a wider proposal N(0, 3^2).
  DiagGaussian d1{vec({0.7}), vec({-0.4})};
  DiagGaussian prop1{vec({0.0}), vec({std::log(3.0)})};
  Real acc = 0.0;
  for (int i = 0; i < n; ++i) {
    Vector x = sample(prop1, rng);
    acc += std::exp(log_prob(d1, x) - log_prob(prop1, x));
  }
  CHECK(acc / n == doctest::Approx(1.0).epsilon(0.01));

  // 2-D full covariance under N(0, 4 I).
  Matrix l(2, 2);
  l << 1.2, 0.0, -0.6, 0.7;
  FullCovGaussian d2{vec({0.5, -0.5}), l};
  DiagGaussian prop2{vec({0.0, 0.0}), vec({std::log(2.0), std::log(2.0)})};
  acc = 0.0;
  for (int i = 0; i < n; ++i) {
    Vector x = sample(prop2, rng);
    acc += std::exp(log_prob(d2, x) - log_prob(prop2, x));
  }
  CHECK(acc / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("reparameterized samples") {
  DiagGaussian d{vec({1.0, -2.0}), vec({0.3, -0.7})};
  CHECK(reparam_sample(d, vec({0.0, 0.0})) == d.mean);
  Vector z = reparam_sample(d, vec({1.0, 1.0}));
  CHECK(z[0] == doctest::Approx(1.0 + std::exp(0.3)));
  CHECK(z[1] == doctest::Approx(-2.0 + std::exp(-0.7)));

  Matrix l(2, 2);
  l << 2.0, 0.0, 1.0, 1.0;
  FullCovGaussian fc{vec({0.5, 1.5}), l};
  CHECK(reparam_sample(fc, vec({0.0, 0.0})) == fc.mean);

  // Moments of 1e5 samples within 3 standard errors.
  Rng rng(5);
  const int n = 100000;
  Vector sum = Vector::Zero(2);
  Matrix outer = Matrix::Zero(2, 2);
  std::vector<Vector> xs;
  xs.reserve(n);
  for (int i = 0; i < n; ++i) {
    xs.push_back(sample(fc, rng));
    sum += xs.back();
  }
  Vector mean = sum / n;
  for (const auto& x : xs) outer += (x - mean) * (x - mean).transpose();
  Matrix cov = outer / (n - 1);
  Matrix truth = fc.covariance();
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(mean[i] - fc.mean[i]) < 3.0 * std::sqrt(truth(i, i) / n));
    for (int j = 0; j < 2; ++j) {
      // Var of the sample covariance entry for Gaussians.
      const Real se = std::sqrt((truth(i, j) * truth(i, j) + truth(i, i) * truth(j, j)) / n);
      CHECK(std::abs(cov(i, j) - truth(i, j)) < 3.0 * se);
    }
  }
}

TEST_CASE("diagonal KL") {
  DiagGaussian p{vec({0.2, -0.4, 1.0}), vec({0.1, -0.3, 0.5})};
  CHECK(kl_diag(p, p) == 0.0);
  CHECK(kl_diag(DiagGaussian{vec({1.0}), vec({0.0})}, DiagGaussian::standard(1)) ==
        doctest::Approx(0.5).epsilon(1e-14));

  DiagGaussian q{vec({-0.3, 0.1, 0.8}), vec({0.4, 0.0, -0.2})};
  Rng rng(17);
  const int n = 1000000;
  Real mean = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    Vector z = sample(p, rng);
    const Real r = log_prob(p, z) - log_prob(q, z);
    mean += r;
    sq += r * r;
  }
  mean /= n;
  const Real se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - kl_diag(p, q)) < 3.0 * se);

  for (int t = 0; t < 200; ++t) {
    DiagGaussian a{standard_normal_vector(4, rng), standard_normal_vector(4, rng)};
    DiagGaussian b{standard_normal_vector(4, rng), standard_normal_vector(4, rng)};
    CHECK(kl_diag(a, b) >= 0.0);
    CHECK(kl_diag(a, b) > 1e-12);
    CHECK(std::abs(kl_diag(a, a)) <= 1e-12);
  }
}

TEST_CASE("entropies") {
  DiagGaussian id2 = DiagGaussian::standard(2);
  CHECK(entropy(id2) == doctest::Approx(std::log(2.0 * std::numbers::pi * std::numbers::e)));
  CHECK(entropy(id2) == doctest::Approx(2.83788).epsilon(1e-5));
  DiagGaussian scaled{id2.mean, id2.log_std.array() + 1.0};
  CHECK(entropy(scaled) - entropy(id2) == doctest::Approx(2.0));

  Matrix l(2, 2);
  l << 2.0, 0.0, 1.0, 1.0;
  FullCovGaussian fc{vec({0.0, 0.0}), l};
  Rng rng(23);
  const int n = 200000;
  Real mean = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const Real v = -log_prob(fc, sample(fc, rng));
    mean += v;
    sq += v * v;
  }
  mean /= n;
  const Real se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - entropy(fc)) < 3.0 * se);

  // Rotating the factor leaves the covariance, hence the entropy, unchanged.
  Matrix q = Eigen::HouseholderQR<Matrix>(Matrix::Random(2, 2)).householderQ();
  Matrix rotated_cov = (l * q) * (l * q).transpose();
  Matrix l2 = Eigen::LLT<Matrix>(rotated_cov).matrixL();
  FullCovGaussian fc2{fc.mean, l2};
  CHECK(entropy(fc2) == doctest::Approx(entropy(fc)).epsilon(1e-12));
  CHECK(0.5 * std::log(rotated_cov.determinant()) + std::log(2.0 * std::numbers::pi * std::numbers::e) ==
        doctest::Approx(entropy(fc)).epsilon(1e-12));
}

TEST_CASE("gmm component posterior") {
  GmmPrior one{vec({1.0}), Matrix::Zero(1, 2), Matrix::Ones(1, 2)};
  Vector r = gmm_component_posterior(vec({3.0, -1.0}), one);
  CHECK(r.size() == 1);
  CHECK(r[0] == 1.0);

  Matrix means(2, 2);
  means << -1.0, 0.0, 1.0, 0.0;
  GmmPrior sym{vec({0.5, 0.5}), means, Matrix::Ones(2, 2)};
  Vector mid = gmm_component_posterior(vec({0.0, 0.3}), sym);
  CHECK(mid[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(mid[1] == doctest::Approx(0.5).epsilon(1e-15));

  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    const int k = 2 + t % 5, dim = 1 + t % 4;
    Vector w = standard_normal_vector(std::size_t(k), rng).array().exp();
    w /= w.sum();
    GmmPrior prior{w, Matrix::Random(k, dim) * 2.0,
                   (Matrix::Random(k, dim).array() * 0.5 + 1.0).matrix()};
    prior.validate();
    Vector z = standard_normal_vector(std::size_t(dim), rng);
    // Direct unnormalized computation in extended precision.
    std::vector<long double> un(std::size_t(k), 0.0L);
    long double total = 0.0L;
    for (int c = 0; c < k; ++c) {
      long double lp = std::log((long double)prior.weights[c]);
      for (int j = 0; j < dim; ++j) {
        long double s = prior.stds(c, j);
        long double u = ((long double)z[j] - prior.means(c, j)) / s;
        lp += -0.5L * u * u - std::log(s) - 0.5L * std::log(2.0L * std::numbers::pi_v<long double>);
      }
      un[std::size_t(c)] = std::exp(lp);
      total += un[std::size_t(c)];
    }
    Vector post = gmm_component_posterior(z, prior);
    for (int c = 0; c < k; ++c) {
      CHECK(post[c] == doctest::Approx(double(un[std::size_t(c)] / total)).epsilon(1e-12));
    }
    CHECK(std::abs(post.sum() - 1.0) < 1e-9);
    CHECK(log_prob(prior, z) == doctest::Approx(double(std::log(total))).epsilon(1e-12));
  }

  // Far from every mean: no NaN, still normalized.
  Vector far = gmm_component_posterior(vec({1e4, -3e4}), sym);
  CHECK(far.allFinite());
  CHECK(std::abs(far.sum() - 1.0) < 1e-9);
}

TEST_CASE("graph density helpers agree with value versions") {
  using namespace pm::ndgrad;
  Rng rng(41);
  const std::size_t dim = 4, rows = 3;
  Graph g;
  NodeId mean = g.input("mean", dim);
  NodeId log_std = g.input("log_std", dim);
  NodeId x = g.input("x", dim);
  NodeId diag = g.input("diag", dim);
  NodeId lower = g.input("lower", dim * (dim - 1) / 2);
  NodeId lp = g.sum_cols(sym::gaussian_log_prob_elems(g, mean, log_std, x));
  NodeId lp_std = sym::standard_normal_log_prob(g, x);
  NodeId kl = sym::kl_to_standard(g, mean, log_std);
  NodeId ent = sym::diag_entropy(g, log_std);
  NodeId fc = sym::full_cov_log_prob(g, mean, diag, lower, x);
  NodeId bern = g.sum_cols(sym::bernoulli_log_prob_elems(g, mean, g.sigmoid(x)));

  auto random_tensor = [&](std::size_t c) {
    Tensor t(rows, c);
    for (Real& v : t.storage()) v = standard_normal(rng);
    return t;
  };
  Tensor tm = random_tensor(dim), ts = random_tensor(dim), tx = random_tensor(dim);
  Tensor td = random_tensor(dim), tl = random_tensor(dim * (dim - 1) / 2);
  for (Real& v : td.storage()) v = std::exp(v);
  std::vector<Tensor> inputs{tm, ts, tx, td, tl};
  std::vector<NodeId> outs{lp, lp_std, kl, ent, fc, bern};
  auto vals = evaluate(g, ParamSet{}, inputs, outs);

  for (std::size_t r = 0; r < rows; ++r) {
    DiagGaussian dg{tm.mat().row(Eigen::Index(r)).transpose(),
                    ts.mat().row(Eigen::Index(r)).transpose()};
    Vector xv = tx.mat().row(Eigen::Index(r)).transpose();
    CHECK(vals[0](r, 0) == doctest::Approx(log_prob(dg, xv)).epsilon(1e-13));
    CHECK(vals[1](r, 0) == doctest::Approx(log_prob(DiagGaussian::standard(dim), xv)).epsilon(1e-13));
    CHECK(vals[2](r, 0) == doctest::Approx(kl_diag(dg, DiagGaussian::standard(dim))).epsilon(1e-13));
    CHECK(vals[3](r, 0) == doctest::Approx(entropy(dg)).epsilon(1e-13));
    Matrix l = Matrix::Zero(Eigen::Index(dim), Eigen::Index(dim));
    for (std::size_t i = 0; i < dim; ++i) {
      l(Eigen::Index(i), Eigen::Index(i)) = td(r, i);
      for (std::size_t j = 0; j < i; ++j) l(Eigen::Index(i), Eigen::Index(j)) = tl(r, i * (i - 1) / 2 + j);
    }
    FullCovGaussian fg{dg.mean, l};
    CHECK(vals[4](r, 0) == doctest::Approx(log_prob(fg, xv)).epsilon(1e-12));
    Vector probs = xv.unaryExpr([](Real v) { return 1.0 / (1.0 + std::exp(-v)); });
    // Soft targets: sum p log s(l) + (1-p) log(1-s(l)).
    Real expect = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const Real s = 1.0 / (1.0 + std::exp(-dg.mean[Eigen::Index(i)]));
      expect += probs[Eigen::Index(i)] * std::log(s) + (1 - probs[Eigen::Index(i)]) * std::log(1 - s);
    }
    CHECK(vals[5](r, 0) == doctest::Approx(expect).epsilon(1e-12));
  }
}
