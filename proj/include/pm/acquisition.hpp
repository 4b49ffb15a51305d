#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "pm/conditional_likelihood.hpp"
#include "pm/posterior_matching.hpp"

namespace pm {

// One shared trunk over encode_partial(x_o) with d diagonal Gaussian heads,
// q_omega^(i)(z | x_o). Parameters live under "la/". Output layout: all
// means (feature-major, d x L) followed by all log-stds.
struct LookaheadConfig {
  std::size_t data_dim = 0;
  std::size_t latent_dim = 2;
  std::size_t hidden = 128;
  std::size_t blocks = 2;
  bool layer_norm = false;

  void validate() const;
  nlohmann::json to_json() const;
  static LookaheadConfig from_json(const nlohmann::json& j);
};

struct LookaheadHeads {
  ndgrad::NodeId mean = 0;     // r x dL
  ndgrad::NodeId log_std = 0;  // r x dL
};

LookaheadHeads build_lookahead(ndgrad::Graph& g, const LookaheadConfig& cfg, ndgrad::NodeId enc);
void init_lookahead_params(ndgrad::ParamSet& params, const LookaheadConfig& cfg, Rng& rng);

class LookaheadModel {
 public:
  LookaheadModel(LookaheadConfig config, ndgrad::ParamSet params);
  static LookaheadModel init(const LookaheadConfig& config, Rng& rng);

  const LookaheadConfig& config() const { return config_; }
  const ndgrad::ParamSet& params() const { return params_; }
  ndgrad::ParamSet& mutable_params() { return params_; }

  // Head i for one partial observation.
  DiagGaussian head(const PartialObservation& p, std::size_t i) const;
  // Entropy of every head from one trunk evaluation.
  Vector entropies(const PartialObservation& p) const;

 private:
  struct Graphs;
  LookaheadConfig config_;
  ndgrad::ParamSet params_;
  std::shared_ptr<const Graphs> graphs_;
};

// Evaluation counts for the cost accounting checks.
struct AcquisitionCounters {
  std::size_t lookahead_posteriors = 0;  // q_theta(z | x_o, x_i) evaluations
  std::size_t trunk_evaluations = 0;     // lookahead network evaluations
};

AcquisitionCounters& acquisition_counters();  // per thread
void reset_acquisition_counters();

// Mean over k draws of H(q_theta(z | x_o, x_i = s_j)).
Real expected_entropy_sampling(const VaeModel& vae, const PoModel& po, const PartialObservation& p,
                               std::size_t i, std::size_t k, Rng& rng);
// The same quantity for every unobserved feature in one batch of k * |u|
// posterior evaluations; observed entries are +infinity.
Vector expected_entropies_sampling(const VaeModel& vae, const PoModel& po,
                                   const PartialObservation& p, std::size_t k, Rng& rng);
// H(q(z|x_o)) minus the expected entropies.
Vector information_gain_sampling(const VaeModel& vae, const PoModel& po,
                                 const PartialObservation& p, std::size_t k, Rng& rng);

// argmin over unobserved features; ties go to the smallest index.
std::size_t argmin_unobserved(const Vector& scores, const ObservationMask& mask);
std::size_t greedy_step_sampling(const VaeModel& vae, const PoModel& po,
                                 const PartialObservation& p, std::size_t k, Rng& rng);
std::size_t greedy_step_lookahead(const LookaheadModel& la, const PartialObservation& p);

// Per-instance lookahead targets: for each selected feature, the mean and
// (biased) variance of k samples z_j ~ q_theta(. | x_o, x_i^(j)). The loss
// only depends on the samples through these.
struct LookaheadTargets {
  Matrix weight;  // B x dL, 1 where the feature was selected
  Matrix mean;    // B x dL
  Matrix var;     // B x dL
};

LookaheadTargets sample_lookahead_targets(const VaeModel& vae, const PoModel& po, const Matrix& x,
                                          const std::vector<ObservationMask>& masks, std::size_t k,
                                          std::size_t subsample, Rng& rng);

// Inputs: "enc" (B x 2d), "weight", "mean", "var" (B x dL). Batch mean of
// sum_{i in S} (1/k) sum_j -log q_omega^(i)(z_j | x_o).
LossGraph build_lookahead_graph(const LookaheadConfig& cfg);

Real lookahead_loss(const VaeModel& vae, const PoModel& po, const LookaheadModel& la,
                    const Matrix& x, const std::vector<ObservationMask>& masks, std::size_t k,
                    std::size_t subsample, Rng& rng);

struct LookaheadTrainConfig {
  TrainerConfig trainer;
  AdamConfig adam;
  MaskSampler masks;
  std::size_t samples = 16;    // k
  std::size_t subsample = 32;  // features per instance per step
  std::uint64_t seed = 0;
};

struct TrainedLookahead {
  LookaheadModel model;
  OptimizerState optimizer;
  Rng rng;
  std::vector<nlohmann::json> metrics;
};

// The VAE and partially observed encoder stay frozen.
TrainedLookahead train_lookahead(const Dataset& train, const VaeModel& vae, const PoModel& po,
                                 const LookaheadConfig& cfg, const LookaheadTrainConfig& config);

Checkpoint make_lookahead_checkpoint(const TrainedLookahead& t, std::uint64_t seed,
                                     const std::string& po_digest);
LookaheadModel lookahead_from_checkpoint(const Checkpoint& ckpt);

enum class AcquisitionPolicy { random, sampling, lookahead };

AcquisitionPolicy parse_policy(const std::string& text);
std::string to_string(AcquisitionPolicy policy);

struct EpisodeConfig {
  std::size_t budget = 10;
  AcquisitionPolicy policy = AcquisitionPolicy::sampling;
  std::size_t n_latents = kDefaultImputationLatents;
  std::size_t samples = 16;  // k for the sampling policy
};

struct AcquisitionTrajectory {
  std::vector<std::size_t> acquired;
  std::vector<Real> rmse;            // budget + 1 entries, first before any acquisition
  std::vector<Real> select_seconds;  // budget entries

  // JSON lines {instance_id, step, chosen_index, rmse, select_seconds}.
  std::vector<nlohmann::json> records(std::size_t instance_id) const;
};

// RMSE is over all d coordinates of the imputation, with revealed
// coordinates set to their true values.
AcquisitionTrajectory run_episode(const VaeModel& vae, const PoModel& po, const LookaheadModel* la,
                                  const Vector& x_true, const ObservationMask& initial_mask,
                                  const EpisodeConfig& config, Rng& rng);

struct TimingStats {
  Real mean = 0.0;
  Real sd = 0.0;
};

struct BenchReport {
  TimingStats sampling;   // seconds per greedy step
  TimingStats lookahead;
  Real ratio = 0.0;       // sampling mean / lookahead mean
  std::size_t k = 0;
  std::size_t unobserved = 0;

  nlohmann::json to_json() const;
};

BenchReport bench_acquisition(const VaeModel& vae, const PoModel& po, const LookaheadModel& la,
                              const PartialObservation& p, std::size_t k, std::size_t trials,
                              Rng& rng);

struct LinearFit {
  Real slope = 0.0;
  Real intercept = 0.0;
  Real r2 = 0.0;
};

LinearFit fit_linear(const std::vector<Real>& x, const std::vector<Real>& y);

}  // namespace pm
