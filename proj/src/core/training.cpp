#include "pm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pm/data.hpp"

namespace pm {

using ndgrad::ParamSet;
using ndgrad::Tensor;

void TrainerConfig::validate() const {
  if (steps == 0) throw ValidationError("training needs at least one step");
  if (batch_size == 0) throw ValidationError("batch size must be positive");
  if (!(noise_sigma >= 0)) throw ValidationError("noise sigma must be non-negative");
  if (log_every == 0) throw ValidationError("log_every must be positive");
}

void apply_precision(ParamSet& params, Precision precision) {
  if (precision == Precision::f32) params.round_to_float();
}

namespace {

// Only optimized tensors are rounded; frozen ones stay bit-identical.
void round_trainable(ParamSet& params, const OptimizerState& opt, Precision precision) {
  if (precision != Precision::f32) return;
  for (std::size_t k = 0; k < opt.m.size(); ++k) {
    Tensor& t = params.at(opt.m.name(k));
    for (Real& v : t.storage()) v = Real(float(v));
  }
}

}  // namespace

void run_training(const Matrix& data, const LossGraph& loss, ParamSet& params,
                  OptimizerState& opt, Rng& rng, const TrainerConfig& config,
                  const BatchInputs& inputs, std::vector<nlohmann::json>& metrics,
                  const std::function<void(std::size_t, nlohmann::json&)>& annotate) {
  config.validate();
  const auto n = std::size_t(data.rows());
  if (n == 0) throw ValidationError("training data is empty");
  const std::size_t batch = std::min(config.batch_size, n);

  round_trainable(params, opt, config.precision);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;

  // Position of each reported node among the graph's marked outputs.
  std::vector<std::size_t> slots;
  const auto& outs = loss.graph.outputs();
  for (const auto& r : loss.reported) {
    auto it = std::find(outs.begin(), outs.end(), r.second);
    if (it == outs.end()) throw ValidationError("reported node '" + r.first + "' is not a graph output");
    slots.push_back(std::size_t(it - outs.begin()));
  }

  std::vector<Real> window(loss.reported.size() + 1, 0.0);
  std::vector<Real> values(window.size(), 0.0);
  std::size_t window_count = 0;
  std::vector<std::size_t> idx(batch);
  // Snapshot refreshed at every log point; handed back on divergence.
  ParamSet last_good = params;
  std::size_t last_good_step = opt.step;

  for (std::size_t s = 0; s < config.steps; ++s) {
    const std::size_t step = opt.step;
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx[b] = order[cursor++];
    }
    Matrix x(Eigen::Index(batch), data.cols());
    for (std::size_t b = 0; b < batch; ++b) x.row(Eigen::Index(b)) = data.row(Eigen::Index(idx[b]));
    if (config.noise_sigma > 0) x = augment_noise(x, config.noise_sigma, rng);

    std::vector<Tensor> in = inputs(x, idx, step, rng);
    ndgrad::GradientResult g = ndgrad::gradient(loss.graph, params, in, loss.loss);
    values[0] = g.value;
    for (std::size_t t = 0; t < loss.reported.size(); ++t) values[t + 1] = g.outputs[slots[t]].item();
    for (std::size_t t = 0; t < values.size(); ++t) {
      if (!std::isfinite(values[t])) {
        const std::string what = t == 0 ? "loss" : loss.reported[t - 1].first;
        throw DivergenceError("training diverged at step " + std::to_string(step) +
                                  ": non-finite " + what,
                              std::move(last_good), last_good_step);
      }
      window[t] += values[t];
    }
    ++window_count;

    try {
      adam_step(params, g.grads, opt);
    } catch (const NumericalError& e) {
      throw DivergenceError(std::string("training diverged at step ") + std::to_string(step) +
                                ": " + e.what(),
                            std::move(last_good), last_good_step);
    }
    round_trainable(params, opt, config.precision);
    apply_precision(opt.m, config.precision);
    apply_precision(opt.v, config.precision);

    const bool last = s + 1 == config.steps;
    if ((step + 1) % config.log_every == 0 || last) {
      nlohmann::json rec;
      rec["step"] = step + 1;
      rec["loss"] = window[0] / Real(window_count);
      for (std::size_t t = 1; t < window.size(); ++t) {
        rec[loss.reported[t - 1].first] = window[t] / Real(window_count);
      }
      rec["lr"] = learning_rate(opt.config, step);
      if (annotate) annotate(step, rec);
      metrics.push_back(std::move(rec));
      std::fill(window.begin(), window.end(), 0.0);
      window_count = 0;
      last_good = params;
      last_good_step = opt.step;
    }
  }
}

}  // namespace pm
