#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "pm/checkpoint.hpp"
#include "pm/data.hpp"
#include "pm/distributions.hpp"
#include "pm/ndgrad/mlp.hpp"
#include "pm/optim.hpp"
#include "pm/training.hpp"

namespace pm {

enum class DecoderKind { gaussian, bernoulli };

DecoderKind parse_decoder_kind(const std::string& text);
std::string to_string(DecoderKind kind);

inline constexpr Real kLogStdMin = -7.0;
inline constexpr Real kLogStdMax = 7.0;

struct VaeConfig {
  std::size_t data_dim = 0;
  std::size_t latent_dim = 2;
  std::size_t hidden = 64;
  std::size_t blocks = 2;
  bool layer_norm = false;
  DecoderKind decoder = DecoderKind::gaussian;

  void validate() const;
  nlohmann::json to_json() const;
  static VaeConfig from_json(const nlohmann::json& j);

  ndgrad::MlpSpec encoder_spec() const;
  ndgrad::MlpSpec decoder_spec() const;
};

// Graph fragments. Parameter names: enc/..., dec/..., and dec/log_std
// (1 x d) for the Gaussian decoder.
struct GaussianNodes {
  ndgrad::NodeId mean = 0;
  ndgrad::NodeId log_std = 0;
};

GaussianNodes build_encoder(ndgrad::Graph& g, const VaeConfig& cfg, ndgrad::NodeId x);

struct DecoderNodes {
  ndgrad::NodeId out = 0;      // Gaussian mean or Bernoulli logits, r x d
  ndgrad::NodeId log_std = 0;  // Gaussian only: broadcast to r x d
};

DecoderNodes build_decoder(ndgrad::Graph& g, const VaeConfig& cfg, ndgrad::NodeId z);
// log p(x_i | z) per entry, r x d.
ndgrad::NodeId build_decoder_log_prob_elems(ndgrad::Graph& g, const VaeConfig& cfg,
                                            const DecoderNodes& dec, ndgrad::NodeId x);
// Gaussian mean or Bernoulli probability, r x d.
ndgrad::NodeId build_decoder_mean(ndgrad::Graph& g, const VaeConfig& cfg, const DecoderNodes& dec);

void init_vae_params(ndgrad::ParamSet& params, const VaeConfig& cfg, Rng& rng);

// q_psi(z|x), p_phi(x|z), and the standard normal prior.
class VaeModel {
 public:
  VaeModel(VaeConfig config, ndgrad::ParamSet params);
  static VaeModel init(const VaeConfig& config, Rng& rng);

  const VaeConfig& config() const { return config_; }
  const ndgrad::ParamSet& params() const { return params_; }
  ndgrad::ParamSet& mutable_params() { return params_; }

  // Rows of x -> rows of (mean, log_std).
  void encode(const Matrix& x, Matrix& mean, Matrix& log_std) const;
  DiagGaussian encode(const Vector& x) const;
  // Rows of z -> decoder means (Gaussian mean or Bernoulli probability).
  Matrix decode_mean(const Matrix& z) const;
  // Per-entry log p(x_ij | z_i) for matching rows of z and x.
  Matrix decoder_log_prob_elems(const Matrix& z, const Matrix& x) const;
  // Samples x ~ p(x | z) for each row of z.
  Matrix sample_decoder(const Matrix& z, Rng& rng) const;

 private:
  struct Graphs;
  VaeConfig config_;
  ndgrad::ParamSet params_;
  std::shared_ptr<const Graphs> graphs_;
};

struct ElboParts {
  Real loss = 0.0;    // mean over rows of -recon + beta * kl
  Real recon = 0.0;   // mean over rows of log p(x | z)
  Real kl = 0.0;      // mean over rows of KL(q(z|x) || p(z))
};

// Batch-mean ELBO pieces for an encoder output q and a sample z drawn from it.
struct ElboNodes {
  ndgrad::NodeId loss = 0;   // -recon + beta * kl
  ndgrad::NodeId recon = 0;
  ndgrad::NodeId kl = 0;
};

ElboNodes build_elbo_terms(ndgrad::Graph& g, const VaeConfig& cfg, ndgrad::NodeId x,
                           const GaussianNodes& q, ndgrad::NodeId z, ndgrad::NodeId beta);

// Inputs: "x" (B x d), "eps" (B x L), "beta" (1 x 1). Loss is the batch
// mean of -log p(x|z) + beta KL with z = mean + exp(log_std) * eps.
LossGraph build_elbo_graph(const VaeConfig& cfg);

ElboParts elbo(const Matrix& x, const VaeModel& model, Real beta, Rng& rng);
ElboParts elbo_with_noise(const Matrix& x, const VaeModel& model, Real beta, const Matrix& eps);

ndgrad::Tensor to_tensor(const Matrix& m);
Matrix to_matrix(const ndgrad::Tensor& t);
ndgrad::Tensor noise_tensor(std::size_t rows, std::size_t cols, Rng& rng);

struct VaeTrainConfig {
  TrainerConfig trainer;
  AdamConfig adam;
  BetaSchedule beta;
  std::uint64_t seed = 0;
};

struct TrainedVae {
  VaeModel model;
  OptimizerState optimizer;
  Rng rng;
  std::vector<nlohmann::json> metrics;
};

// Dataset must be fully observed and non-empty.
TrainedVae train_vae(const Dataset& train, const VaeConfig& config, const VaeTrainConfig& tc);

Checkpoint make_vae_checkpoint(const TrainedVae& t, std::uint64_t seed);
VaeModel vae_from_checkpoint(const Checkpoint& ckpt);

}  // namespace pm
