#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "pm/masking.hpp"
#include "pm/vae.hpp"

namespace pm {

enum class HeadKind { diag, full_cov, autoregressive };

HeadKind parse_head_kind(const std::string& text);
std::string to_string(HeadKind kind);

// q_theta(z | x_o). The trunk reads encode_partial(x_o). Parameters live
// under "po/" (trunk) and "po_ar/" (autoregressive mixture network).
struct PoConfig {
  std::size_t data_dim = 0;
  std::size_t latent_dim = 2;
  HeadKind head = HeadKind::diag;
  std::size_t hidden = 128;
  std::size_t blocks = 2;
  bool layer_norm = false;
  // Autoregressive head only.
  std::size_t components = 10;
  std::size_t cond_dim = 64;
  std::size_t ar_hidden = 128;
  std::size_t ar_blocks = 2;

  void validate() const;
  nlohmann::json to_json() const;
  static PoConfig from_json(const nlohmann::json& j);

  std::size_t trunk_out() const;
};

struct PoHeadNodes {
  ndgrad::NodeId mean = 0;     // diag, full_cov
  ndgrad::NodeId log_std = 0;  // diag
  ndgrad::NodeId diag = 0;     // full_cov: positive diagonal of the Cholesky factor
  ndgrad::NodeId lower = 0;    // full_cov: packed strictly-lower entries (L > 1)
  ndgrad::NodeId cond = 0;     // autoregressive: conditioning vector
};

// `enc` is the r x 2d bitmask encoding.
PoHeadNodes build_po_head(ndgrad::Graph& g, const PoConfig& cfg, ndgrad::NodeId enc);
// log q(z | x_o), r x 1. For the autoregressive head every coordinate term
// is an independent evaluation of the mixture network.
ndgrad::NodeId build_po_log_prob(ndgrad::Graph& g, const PoConfig& cfg, const PoHeadNodes& head,
                                 ndgrad::NodeId z);

// Zero output layers, so an untrained head is the standard normal.
void init_po_params(ndgrad::ParamSet& params, const PoConfig& cfg, Rng& rng);

class PoModel;

// A posterior for one partial observation. Holds a pointer to its model,
// which must outlive it.
class PoPosterior {
 public:
  HeadKind kind() const { return kind_; }
  std::size_t dim() const;

  const DiagGaussian& diag() const;
  const FullCovGaussian& full_cov() const;
  const Vector& conditioning() const;

  Real log_prob(const Vector& z) const;
  Vector log_prob(const Matrix& z) const;  // one value per row
  Vector sample(Rng& rng) const;
  Matrix sample(std::size_t n, Rng& rng) const;
  // Analytic for Gaussian heads; Monte-Carlo with n samples for the
  // autoregressive head.
  Real entropy(Rng& rng, std::size_t n = 256) const;

 private:
  friend class PoModel;
  HeadKind kind_ = HeadKind::diag;
  DiagGaussian diag_;
  FullCovGaussian full_;
  Vector cond_;
  const PoModel* model_ = nullptr;
};

class PoModel {
 public:
  PoModel(PoConfig config, ndgrad::ParamSet params);
  static PoModel init(const PoConfig& config, Rng& rng);

  const PoConfig& config() const { return config_; }
  const ndgrad::ParamSet& params() const { return params_; }
  ndgrad::ParamSet& mutable_params() { return params_; }

  PoPosterior posterior(const PartialObservation& p) const;
  // Batched forms over an N x 2d encoding tensor.
  std::vector<PoPosterior> posteriors(const ndgrad::Tensor& enc) const;
  // Row-wise log q(z_r | x_o,r).
  Vector log_prob(const ndgrad::Tensor& enc, const Matrix& z) const;
  // One sample per row.
  Matrix sample(const ndgrad::Tensor& enc, Rng& rng) const;

  // Diagonal head only: r x L means and log-stds.
  void diag_params(const ndgrad::Tensor& enc, Matrix& mean, Matrix& log_std) const;

  // Autoregressive pieces, exposed for sampling and tests.
  Matrix conditioning(const ndgrad::Tensor& enc) const;
  Matrix ar_sample(const Matrix& cond, Rng& rng) const;
  Vector ar_log_prob(const Matrix& cond, const Matrix& z) const;

 private:
  struct Graphs;
  PoConfig config_;
  ndgrad::ParamSet params_;
  std::shared_ptr<const Graphs> graphs_;
};

// Head-kind-checked entry points for the autoregressive head.
Real ar_log_prob(const PoModel& po, const PartialObservation& p, const Vector& z);
Vector ar_sample(const PoModel& po, const PartialObservation& p, Rng& rng);

struct PmTrainMode {
  bool stop_gradient_on_z = true;
  bool freeze_vae = false;
  Real joint_elbo_weight = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static PmTrainMode from_json(const nlohmann::json& j);
};

// Builds the ELBO of the underlying model from encoder nodes and a sample.
// The default is the standard-normal-prior VAE ELBO.
using ElboFragment = std::function<ElboNodes(ndgrad::Graph& g, ndgrad::NodeId x,
                                             const GaussianNodes& q, ndgrad::NodeId z,
                                             ndgrad::NodeId beta)>;

ElboFragment standard_elbo(const VaeConfig& cfg);

// Inputs: "x" (B x d), "mask" (B x d), "eps" (B x L), "beta" (1 x 1).
// Loss: joint_elbo_weight * ELBO + L_PM, or L_PM alone when the VAE is frozen.
// Reports "pm" (and "recon", "kl" when the ELBO is part of the loss).
LossGraph build_pm_graph(const VaeConfig& vae, const PoConfig& po, const PmTrainMode& mode,
                         const ElboFragment& elbo = {});

// Batch mean of -log q_theta(z | x_o) with one z ~ q_psi(. | x) per row.
Real pm_loss(const Matrix& x, const std::vector<ObservationMask>& masks, const VaeModel& vae,
             const PoModel& po, Rng& rng);
Real pm_loss_with_noise(const Matrix& x, const std::vector<ObservationMask>& masks,
                        const VaeModel& vae, const PoModel& po, const Matrix& eps);

struct PmTrainConfig {
  TrainerConfig trainer;
  AdamConfig adam;
  BetaSchedule beta;
  MaskSampler masks;
  PmTrainMode mode;
  std::uint64_t seed = 0;
};

struct TrainedPm {
  VaeModel vae;
  PoModel po;
  OptimizerState optimizer;
  Rng rng;
  std::vector<nlohmann::json> metrics;
};

// One mask per instance per step. `vae` may carry extra parameters (such
// as a mixture prior) used by a custom ELBO fragment.
TrainedPm train_pm(const Dataset& train, const VaeModel& vae, const PoConfig& po,
                   const PmTrainConfig& config, const ElboFragment& elbo = {});

// Moments restricted to the names present in `like`.
OptimizerState restrict_optimizer(const OptimizerState& opt, const ndgrad::ParamSet& like);

Checkpoint make_po_checkpoint(const TrainedPm& t, std::uint64_t seed,
                              const std::string& vae_digest);
PoModel po_from_checkpoint(const Checkpoint& ckpt);

// Exact check that the Posterior Matching objective and the conditional
// likelihood form differ by a constant in theta, on a toy where z is
// categorical and x_u is a short binary vector.
struct Theorem1Toy {
  std::size_t components = 2;  // K <= 16
  std::size_t unobserved = 1;  // |u| <= 4
  std::size_t thetas = 10;
  std::uint64_t seed = 0;
  // q_psi is the exact posterior of a prior table and p(x_u | z).
  bool consistent = false;
  // p(x_u | x_o) puts all mass on one configuration.
  bool point_mass = false;

  void validate() const;
};

// Probability tables for one observed context.
struct Theorem1Tables {
  Vector data;         // p(x_u | x_o), 2^|u|
  Matrix q_psi;        // q_psi(z | x_o, x_u): row per configuration, K columns
  Matrix likelihood;   // p_phi(x_u | z, x_o): row per configuration, K columns
  Vector prior;        // consistent toys: the table q_psi came from
};

Theorem1Tables make_theorem1_tables(const Theorem1Toy& toy, Rng& rng);

struct Theorem1Values {
  Real a = 0.0;
  Real b = 0.0;
  Real b_first_term = 0.0;  // E[-log p_{theta,phi}(x_u | x_o)]
  Vector grad_a;
  Vector grad_b;
};

Theorem1Values theorem1_objectives(const Theorem1Tables& tables, const Vector& theta_logits);

struct Theorem1Report {
  Real objective_gap_variance = 0.0;
  Real gradient_max_diff = 0.0;
  Real gap_mean = 0.0;
  std::vector<Real> objective_a;
  std::vector<Real> objective_b;

  nlohmann::json to_json() const;
};

Theorem1Report verify_theorem1(const Theorem1Toy& toy);

}  // namespace pm
