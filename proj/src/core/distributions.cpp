#include "pm/distributions.hpp"

#include <cmath>
#include <string>

namespace pm {

namespace {

void require_dim(std::size_t expected, std::size_t got, const char* what) {
  if (expected != got) {
    throw ShapeError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                     ", got " + std::to_string(got));
  }
}

bool finite(const Matrix& m) { return m.allFinite(); }

void require_simplex(const Vector& w, const char* what) {
  if (w.size() == 0) throw ValidationError(std::string(what) + ": no components");
  if ((w.array() < 0).any() || std::abs(w.sum() - 1.0) > 1e-6) {
    throw ValidationError(std::string(what) + ": weights are not on the simplex");
  }
}

}  // namespace

DiagGaussian DiagGaussian::standard(std::size_t dim) {
  return {Vector::Zero(Eigen::Index(dim)), Vector::Zero(Eigen::Index(dim))};
}

void DiagGaussian::validate() const {
  require_dim(dim(), std::size_t(log_std.size()), "DiagGaussian log_std");
  if (!finite(mean) || !finite(log_std)) throw NumericalError("DiagGaussian has non-finite fields");
}

void FullCovGaussian::validate() const {
  require_dim(dim(), std::size_t(chol_lower.rows()), "FullCovGaussian factor rows");
  require_dim(dim(), std::size_t(chol_lower.cols()), "FullCovGaussian factor cols");
  for (Eigen::Index i = 0; i < chol_lower.rows(); ++i) {
    if (!(chol_lower(i, i) > 0)) {
      throw ValidationError("FullCovGaussian factor diagonal must be positive");
    }
    for (Eigen::Index j = i + 1; j < chol_lower.cols(); ++j) {
      if (chol_lower(i, j) != 0) throw ValidationError("FullCovGaussian factor is not lower");
    }
  }
}

void MixtureOfGaussians1D::validate() const {
  require_simplex(weights, "MixtureOfGaussians1D");
  require_dim(components(), std::size_t(means.size()), "MixtureOfGaussians1D means");
  require_dim(components(), std::size_t(log_stds.size()), "MixtureOfGaussians1D log_stds");
}

Vector BernoulliVector::probs() const {
  return logits.unaryExpr([](Real l) {
    return l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
  });
}

void GmmPrior::validate() const {
  require_simplex(weights, "GmmPrior");
  require_dim(components(), std::size_t(means.rows()), "GmmPrior means");
  if (stds.rows() != means.rows() || stds.cols() != means.cols()) {
    throw ShapeError("GmmPrior stds shape differs from means");
  }
  if (!((stds.array() > 0).all())) throw ValidationError("GmmPrior stds must be positive");
}

Real log_sum_exp(const Vector& v) {
  if (v.size() == 0) return -INFINITY;
  const Real m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vector softmax(const Vector& logits) {
  Vector out = (logits.array() - log_sum_exp(logits)).exp();
  return out / out.sum();
}

Real log_prob(const DiagGaussian& d, const Vector& x) {
  require_dim(d.dim(), std::size_t(x.size()), "DiagGaussian log_prob");
  const auto u = (x - d.mean).array() * (-d.log_std.array()).exp();
  return -0.5 * u.square().sum() - d.log_std.sum() - 0.5 * Real(d.dim()) * kLog2Pi;
}

Real log_prob(const FullCovGaussian& d, const Vector& x) {
  require_dim(d.dim(), std::size_t(x.size()), "FullCovGaussian log_prob");
  Vector u = d.chol_lower.triangularView<Eigen::Lower>().solve(x - d.mean);
  return -0.5 * u.squaredNorm() - d.chol_lower.diagonal().array().log().sum() -
         0.5 * Real(d.dim()) * kLog2Pi;
}

Real log_prob(const MixtureOfGaussians1D& d, Real x) {
  Vector terms(d.weights.size());
  for (Eigen::Index c = 0; c < d.weights.size(); ++c) {
    const Real u = (x - d.means[c]) * std::exp(-d.log_stds[c]);
    terms[c] = std::log(d.weights[c]) - 0.5 * u * u - d.log_stds[c] - 0.5 * kLog2Pi;
  }
  return log_sum_exp(terms);
}

Real log_prob(const BernoulliVector& d, const Vector& x) {
  require_dim(d.dim(), std::size_t(x.size()), "BernoulliVector log_prob");
  Real total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Real l = d.logits[i];
    const Real softplus = l > 0 ? l + std::log1p(std::exp(-l)) : std::log1p(std::exp(l));
    total += x[i] * l - softplus;
  }
  return total;
}

Vector gmm_component_log_joint(const Vector& z, const GmmPrior& prior) {
  require_dim(prior.dim(), std::size_t(z.size()), "GmmPrior");
  const auto k = Eigen::Index(prior.components());
  Vector out(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    DiagGaussian comp{prior.means.row(c).transpose(),
                      prior.stds.row(c).transpose().array().log().matrix()};
    out[c] = std::log(prior.weights[c]) + log_prob(comp, z);
  }
  return out;
}

Real log_prob(const GmmPrior& d, const Vector& z) {
  return log_sum_exp(gmm_component_log_joint(z, d));
}

Vector gmm_component_posterior(const Vector& z, const GmmPrior& prior) {
  return softmax(gmm_component_log_joint(z, prior));
}

Vector reparam_sample(const DiagGaussian& d, const Vector& noise) {
  require_dim(d.dim(), std::size_t(noise.size()), "DiagGaussian noise");
  return d.mean + (d.stddev().array() * noise.array()).matrix();
}

Vector reparam_sample(const FullCovGaussian& d, const Vector& noise) {
  require_dim(d.dim(), std::size_t(noise.size()), "FullCovGaussian noise");
  return d.mean + d.chol_lower.triangularView<Eigen::Lower>() * noise;
}

Vector standard_normal_vector(std::size_t dim, Rng& rng) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = standard_normal(rng);
  return v;
}

Vector sample(const DiagGaussian& d, Rng& rng) {
  return reparam_sample(d, standard_normal_vector(d.dim(), rng));
}

Vector sample(const FullCovGaussian& d, Rng& rng) {
  return reparam_sample(d, standard_normal_vector(d.dim(), rng));
}

Real sample(const MixtureOfGaussians1D& d, Rng& rng) {
  const Real u = uniform01(rng);
  Eigen::Index c = 0;
  Real acc = d.weights[0];
  while (u >= acc && c + 1 < d.weights.size()) acc += d.weights[++c];
  return d.means[c] + std::exp(d.log_stds[c]) * standard_normal(rng);
}

Vector sample(const BernoulliVector& d, Rng& rng) {
  Vector p = d.probs();
  Vector out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) out[i] = uniform01(rng) < p[i] ? 1.0 : 0.0;
  return out;
}

Vector sample(const GmmPrior& d, Rng& rng) {
  const Real u = uniform01(rng);
  Eigen::Index c = 0;
  Real acc = d.weights[0];
  while (u >= acc && c + 1 < d.weights.size()) acc += d.weights[++c];
  Vector z(d.means.cols());
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    z[j] = d.means(c, j) + d.stds(c, j) * standard_normal(rng);
  }
  return z;
}

Real kl_diag(const DiagGaussian& p, const DiagGaussian& q) {
  require_dim(p.dim(), q.dim(), "kl_diag");
  Real kl = 0.0;
  for (Eigen::Index i = 0; i < p.mean.size(); ++i) {
    const Real ratio = std::exp(2.0 * (p.log_std[i] - q.log_std[i]));
    const Real diff = (p.mean[i] - q.mean[i]) * std::exp(-q.log_std[i]);
    kl += q.log_std[i] - p.log_std[i] + 0.5 * (ratio + diff * diff - 1.0);
  }
  return kl > 0 ? kl : 0.0;
}

Real entropy(const DiagGaussian& d) {
  return 0.5 * Real(d.dim()) * (kLog2Pi + 1.0) + d.log_std.sum();
}

Real entropy(const FullCovGaussian& d) {
  return 0.5 * Real(d.dim()) * (kLog2Pi + 1.0) + d.chol_lower.diagonal().array().log().sum();
}

namespace sym {

NodeId gaussian_log_prob_elems(Graph& g, NodeId mean, NodeId log_std, NodeId x) {
  NodeId u = g.mul(g.sub(x, mean), g.exp(g.neg(log_std)));
  NodeId quad = g.scale(g.square(u), -0.5);
  return g.add_scalar(g.sub(quad, log_std), -0.5 * kLog2Pi);
}

NodeId gaussian_log_prob(Graph& g, NodeId mean, NodeId log_std, NodeId x) {
  return g.sum_cols(gaussian_log_prob_elems(g, mean, log_std, x));
}

NodeId standard_normal_log_prob(Graph& g, NodeId x) {
  return g.sum_cols(g.add_scalar(g.scale(g.square(x), -0.5), -0.5 * kLog2Pi));
}

NodeId bernoulli_log_prob_elems(Graph& g, NodeId logits, NodeId x) {
  return g.sub(g.mul(x, logits), g.softplus(logits));
}

NodeId kl_to_standard(Graph& g, NodeId mean, NodeId log_std) {
  // 0.5 (mu^2 + s^2 - 1) - log s per entry.
  NodeId var = g.exp(g.scale(log_std, 2.0));
  NodeId inner = g.add_scalar(g.add(g.square(mean), var), -1.0);
  return g.sum_cols(g.sub(g.scale(inner, 0.5), log_std));
}

NodeId full_cov_log_prob(Graph& g, NodeId mean, NodeId diag, NodeId lower, NodeId x) {
  NodeId u = g.tri_solve(diag, lower, g.sub(x, mean));
  NodeId quad = g.scale(g.sum_cols(g.square(u)), -0.5);
  NodeId logdet = g.sum_cols(g.add_scalar(g.log(diag), 0.5 * kLog2Pi));
  return g.sub(quad, logdet);
}

NodeId diag_entropy(Graph& g, NodeId log_std) {
  return g.sum_cols(g.add_scalar(log_std, 0.5 * (kLog2Pi + 1.0)));
}

}  // namespace sym

}  // namespace pm
