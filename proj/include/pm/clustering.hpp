#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "pm/posterior_matching.hpp"

namespace pm {

// A VAE whose prior is a learned mixture of K diagonal Gaussians, one per
// cluster. Prior parameters: prior/logits (1 x K), prior/means and
// prior/log_std (1 x K*L, component-major).
struct VadeConfig {
  VaeConfig vae;
  std::size_t clusters = 10;

  void validate() const;
  nlohmann::json to_json() const;
  static VadeConfig from_json(const nlohmann::json& j);
};

// ELBO with the mixture prior, one z sample and responsibilities
// gamma_c = p(c | z) at that sample:
//   log p(x|z) + sum_c gamma_c (E_q log p(z|c) + log pi_c - log gamma_c) + H(q)
// "kl" is everything after the reconstruction term, negated.
ElboNodes build_vade_elbo_terms(ndgrad::Graph& g, const VadeConfig& cfg, ndgrad::NodeId x,
                                const GaussianNodes& q, ndgrad::NodeId z, ndgrad::NodeId beta);
ElboFragment vade_elbo_fragment(const VadeConfig& cfg);

// Inputs: "x" (B x d), "eps" (B x L), "beta" (1 x 1).
LossGraph build_vade_graph(const VadeConfig& cfg);

void init_vade_params(ndgrad::ParamSet& params, const VadeConfig& cfg, Rng& rng);

class VadeModel {
 public:
  VadeModel(VadeConfig config, ndgrad::ParamSet params);
  static VadeModel init(const VadeConfig& config, Rng& rng);

  const VadeConfig& config() const { return config_; }
  const VaeModel& vae() const { return vae_; }
  VaeModel& mutable_vae() { return vae_; }
  const ndgrad::ParamSet& params() const { return vae_.params(); }
  std::size_t clusters() const { return config_.clusters; }

  GmmPrior prior() const;

 private:
  VadeConfig config_;
  VaeModel vae_;
};

ElboParts vade_elbo(const Matrix& x, const VadeModel& model, Real beta, Rng& rng);
ElboParts vade_elbo_with_noise(const Matrix& x, const VadeModel& model, Real beta, const Matrix& eps);

struct TrainedVade {
  VadeModel model;
  OptimizerState optimizer;
  Rng rng;
  std::vector<nlohmann::json> metrics;
};

// Prior parameters are trained jointly from their random initialization.
TrainedVade train_vade(const Dataset& train, const VadeConfig& config, const VaeTrainConfig& tc);

Checkpoint make_vade_checkpoint(const TrainedVade& t, std::uint64_t seed);
VadeModel vade_from_checkpoint(const Checkpoint& ckpt);

inline constexpr std::size_t kDefaultClusterSamples = 50;

// (1/n) sum_j p(c | z_j), z_j ~ q_psi(. | x).
Vector cluster_posterior_full(const VadeModel& model, const Vector& x, std::size_t n_samples, Rng& rng);
// (1/n) sum_j p(c | z_j), z_j ~ q_theta(. | x_o).
Vector cluster_posterior_partial(const PoModel& po, const GmmPrior& prior, const PartialObservation& p,
                                 std::size_t n_samples, Rng& rng);

// Index of the largest entry; ties go to the smallest index.
int predict_cluster(const Vector& posterior);

// Best one-to-one matching between predicted clusters and label classes.
// Exhaustive over permutations up to 8 classes, Hungarian beyond.
Real clustering_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// Maximum-weight assignment on a square matrix; returns the column per row.
std::vector<std::size_t> max_weight_assignment(const Matrix& weights);
// O(n^3) Hungarian method; used by max_weight_assignment above 8 classes.
std::vector<std::size_t> hungarian_assignment(const Matrix& weights);

}  // namespace pm
