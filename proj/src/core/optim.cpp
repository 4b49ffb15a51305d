#include "pm/optim.hpp"

#include <algorithm>
#include <cmath>

namespace pm {

using ndgrad::ParamSet;
using ndgrad::Tensor;

void AdamConfig::validate() const {
  if (!(base_lr > 0 && decay_rate > 0 && decay_rate <= 1 && decay_every > 0)) {
    throw ValidationError("optimizer needs lr > 0, 0 < decay_rate <= 1, decay_every > 0");
  }
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0)) {
    throw ValidationError("optimizer betas must lie in [0, 1) and eps must be positive");
  }
}

OptimizerState OptimizerState::for_params(const ParamSet& trainable, const AdamConfig& config) {
  config.validate();
  OptimizerState s;
  s.config = config;
  s.m = trainable.zeros_like();
  s.v = trainable.zeros_like();
  return s;
}

Real learning_rate(const AdamConfig& config, std::size_t step) {
  return config.base_lr * std::pow(config.decay_rate, Real(step / config.decay_every));
}

void adam_step(ParamSet& params, const ParamSet& grads, OptimizerState& state) {
  std::vector<const Tensor*> g(state.m.size());
  for (std::size_t k = 0; k < state.m.size(); ++k) {
    const std::string& name = state.m.name(k);
    const Tensor& grad = grads.at(name);
    if (grad.shape() != params.at(name).shape()) {
      throw ShapeError("gradient for '" + name + "' has shape " + ndgrad::to_string(grad.shape()));
    }
    if (!grad.all_finite()) throw NumericalError("non-finite gradient for parameter '" + name + "'");
    g[k] = &grad;
  }
  const AdamConfig& c = state.config;
  const Real lr = learning_rate(c, state.step);
  const Real t = Real(state.step + 1);
  const Real bc1 = 1.0 - std::pow(c.beta1, t);
  const Real bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < state.m.size(); ++k) {
    Tensor& p = params.at(state.m.name(k));
    Tensor& m = state.m.at(k);
    Tensor& v = state.v.at(k);
    const Tensor& grad = *g[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
      const Real mhat = m[i] / bc1;
      const Real vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
  ++state.step;
}

void BetaSchedule::validate() const {
  if (!(final_value >= 0)) throw ValidationError("beta final value must be non-negative");
  if (kind == Kind::cyclical && period < 2) {
    throw ValidationError("cyclical beta schedule needs a period of at least 2 steps");
  }
}

BetaSchedule BetaSchedule::monotonic_to_end(std::size_t delay, std::size_t total_steps,
                                            Real final_value) {
  BetaSchedule s;
  s.kind = Kind::monotonic;
  s.delay_steps = delay;
  s.period = total_steps > delay + 1 ? total_steps - 1 - delay : 0;
  s.final_value = final_value;
  return s;
}

BetaSchedule::Kind parse_beta_kind(const std::string& text) {
  if (text == "constant") return BetaSchedule::Kind::constant;
  if (text == "monotonic") return BetaSchedule::Kind::monotonic;
  if (text == "cyclical") return BetaSchedule::Kind::cyclical;
  throw ValidationError("unknown beta schedule '" + text + "'");
}

std::string to_string(BetaSchedule::Kind kind) {
  switch (kind) {
    case BetaSchedule::Kind::constant: return "constant";
    case BetaSchedule::Kind::monotonic: return "monotonic";
    case BetaSchedule::Kind::cyclical: return "cyclical";
  }
  return "?";
}

Real beta_value(const BetaSchedule& s, std::size_t step) {
  if (step < s.delay_steps) return 0.0;
  const std::size_t t = step - s.delay_steps;
  switch (s.kind) {
    case BetaSchedule::Kind::constant:
      return s.final_value;
    case BetaSchedule::Kind::monotonic:
      if (s.period == 0) return s.final_value;
      return s.final_value * std::min<Real>(1.0, Real(t) / Real(s.period));
    case BetaSchedule::Kind::cyclical: {
      const Real half = Real(s.period) / 2.0;
      return s.final_value * std::min<Real>(1.0, Real(t % s.period) / half);
    }
  }
  return s.final_value;
}

}  // namespace pm
