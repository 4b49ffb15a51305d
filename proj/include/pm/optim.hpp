#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pm/ndgrad/param_set.hpp"

namespace pm {

struct AdamConfig {
  Real base_lr = 1e-3;
  Real decay_rate = 0.9;
  std::size_t decay_every = 5000;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;

  void validate() const;
};

// Moments exist only for the trainable parameters.
struct OptimizerState {
  AdamConfig config;
  ndgrad::ParamSet m;
  ndgrad::ParamSet v;
  std::size_t step = 0;  // number of updates applied so far

  static OptimizerState for_params(const ndgrad::ParamSet& trainable, const AdamConfig& config);
};

// base_lr * decay_rate^floor(step / decay_every), step counted from 0.
Real learning_rate(const AdamConfig& config, std::size_t step);

// Updates every parameter that has moments in `state`; gradients are looked
// up by name. Throws NumericalError on a non-finite gradient, leaving params
// and state untouched.
void adam_step(ndgrad::ParamSet& params, const ndgrad::ParamSet& grads, OptimizerState& state);

struct BetaSchedule {
  enum class Kind { constant, monotonic, cyclical };
  Kind kind = Kind::constant;
  std::size_t delay_steps = 0;
  // monotonic: length of the linear ramp after the delay.
  // cyclical: cycle length; ramps over the first half, holds for the second.
  std::size_t period = 0;
  Real final_value = 1.0;

  void validate() const;
  // Monotonic schedule that reaches final_value at step total_steps - 1.
  static BetaSchedule monotonic_to_end(std::size_t delay, std::size_t total_steps,
                                       Real final_value = 1.0);
};

BetaSchedule::Kind parse_beta_kind(const std::string& text);
std::string to_string(BetaSchedule::Kind kind);

Real beta_value(const BetaSchedule& schedule, std::size_t step);

}  // namespace pm
