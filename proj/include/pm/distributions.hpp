#pragma once

#include <cstddef>

#include "pm/common.hpp"
#include "pm/ndgrad/graph.hpp"

namespace pm {

inline constexpr Real kLog2Pi = 1.8378770664093454836;

struct DiagGaussian {
  Vector mean;
  Vector log_std;

  std::size_t dim() const { return std::size_t(mean.size()); }
  Vector stddev() const { return log_std.array().exp(); }
  void validate() const;

  static DiagGaussian standard(std::size_t dim);
};

// Covariance L L^T. L is lower triangular with a strictly positive diagonal.
struct FullCovGaussian {
  Vector mean;
  Matrix chol_lower;

  std::size_t dim() const { return std::size_t(mean.size()); }
  Matrix covariance() const { return chol_lower * chol_lower.transpose(); }
  void validate() const;
};

struct MixtureOfGaussians1D {
  Vector weights;
  Vector means;
  Vector log_stds;

  std::size_t components() const { return std::size_t(weights.size()); }
  void validate() const;
};

struct BernoulliVector {
  Vector logits;

  std::size_t dim() const { return std::size_t(logits.size()); }
  Vector probs() const;
};

// Mixture of diagonal Gaussians: K rows of means and stds over L dims.
struct GmmPrior {
  Vector weights;
  Matrix means;
  Matrix stds;

  std::size_t components() const { return std::size_t(weights.size()); }
  std::size_t dim() const { return std::size_t(means.cols()); }
  void validate() const;
};

Real log_sum_exp(const Vector& v);
Vector softmax(const Vector& logits);

Real log_prob(const DiagGaussian& d, const Vector& x);
Real log_prob(const FullCovGaussian& d, const Vector& x);
Real log_prob(const MixtureOfGaussians1D& d, Real x);
Real log_prob(const BernoulliVector& d, const Vector& x);
Real log_prob(const GmmPrior& d, const Vector& z);

Vector reparam_sample(const DiagGaussian& d, const Vector& noise);
Vector reparam_sample(const FullCovGaussian& d, const Vector& noise);

Vector sample(const DiagGaussian& d, Rng& rng);
Vector sample(const FullCovGaussian& d, Rng& rng);
Real sample(const MixtureOfGaussians1D& d, Rng& rng);
Vector sample(const BernoulliVector& d, Rng& rng);
Vector sample(const GmmPrior& d, Rng& rng);

Vector standard_normal_vector(std::size_t dim, Rng& rng);

Real kl_diag(const DiagGaussian& p, const DiagGaussian& q);

Real entropy(const DiagGaussian& d);
Real entropy(const FullCovGaussian& d);

// p(c | z) under the prior, normalized in log space.
Vector gmm_component_posterior(const Vector& z, const GmmPrior& prior);
Vector gmm_component_log_joint(const Vector& z, const GmmPrior& prior);

// Graph builders. Inputs are r x c node ids; "elems" variants return the
// per-entry log-density (r x c) and the others sum over columns (r x 1).
namespace sym {

using ndgrad::Graph;
using ndgrad::NodeId;

NodeId gaussian_log_prob_elems(Graph& g, NodeId mean, NodeId log_std, NodeId x);
NodeId gaussian_log_prob(Graph& g, NodeId mean, NodeId log_std, NodeId x);
NodeId standard_normal_log_prob(Graph& g, NodeId x);
NodeId bernoulli_log_prob_elems(Graph& g, NodeId logits, NodeId x);
// KL(N(mean, exp(log_std)^2) || N(0, I)), r x 1.
NodeId kl_to_standard(Graph& g, NodeId mean, NodeId log_std);
// Full-covariance Gaussian with factor given as positive diagonal (r x D)
// and strictly-lower packed entries (r x D(D-1)/2).
NodeId full_cov_log_prob(Graph& g, NodeId mean, NodeId diag, NodeId lower, NodeId x);
// Entropy of a diagonal Gaussian from its log_std, r x 1.
NodeId diag_entropy(Graph& g, NodeId log_std);

}  // namespace sym

}  // namespace pm
