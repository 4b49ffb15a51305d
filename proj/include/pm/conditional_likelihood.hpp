#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "pm/posterior_matching.hpp"

namespace pm {

struct LikelihoodEstimate {
  Real value = 0.0;  // nats
  std::size_t n_samples = 0;
  Real standard_error = 0.0;
  Real max_weight = 0.0;  // largest normalized importance weight
  bool degenerate = false;  // max_weight > 0.99

  nlohmann::json to_json() const;
};

// log((1/n) sum exp(lw)) with a delta-method standard error. Only
// non-positive arguments are ever exponentiated.
LikelihoodEstimate log_mean_exp_estimate(const Vector& log_weights);

// Instrumentation: the largest argument passed to exp() by the estimators
// on this thread since the last reset.
Real max_exp_argument_seen();
void reset_exp_instrumentation();

// Standard normal prior unless `prior` is given.
LikelihoodEstimate estimate_joint_ll(const VaeModel& vae, const Vector& x, std::size_t n, Rng& rng,
                                     const GmmPrior* prior = nullptr);
LikelihoodEstimate estimate_observed_ll(const VaeModel& vae, const PoModel& po,
                                        const PartialObservation& p, std::size_t n, Rng& rng,
                                        const GmmPrior* prior = nullptr);
// Joint over observed ratio; the two runs are independent and their
// standard errors add in quadrature.
LikelihoodEstimate conditional_ll(const VaeModel& vae, const PoModel& po, const Vector& x,
                                  const ObservationMask& mask, std::size_t n, Rng& rng,
                                  const GmmPrior* prior = nullptr);

inline constexpr std::size_t kDefaultImputationLatents = 50;

struct Imputation {
  Vector point;     // observed entries copied, unobserved = mean of decoder means
  Matrix decoded;   // decoder mean for each latent sample, n x d
};

Imputation impute(const VaeModel& vae, const PoModel& po, const PartialObservation& p,
                  std::size_t n_latents, Rng& rng);

// Zero-filled x through q_psi (its mean) and the decoder mean. No mask is
// given to the network.
Vector zero_impute_baseline(const VaeModel& vae, const PartialObservation& p);

// Root-mean-square error over unobserved coordinates; on standardized data
// this is the NRMSE. An empty unobserved set yields 0 with count 0.
struct SquaredError {
  Real sum = 0.0;
  std::size_t count = 0;

  void add(const Vector& truth, const Vector& estimate, const ObservationMask& mask);
  Real rmse() const;
};

struct EvalRecord {
  std::size_t instance_id = 0;
  std::size_t mask_id = 0;
  Real conditional_ll = 0.0;
  Real se = 0.0;
  Real nrmse = 0.0;

  nlohmann::json to_json() const;
};

}  // namespace pm
