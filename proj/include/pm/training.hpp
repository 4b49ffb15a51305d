#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "pm/common.hpp"
#include "pm/ndgrad/graph.hpp"
#include "pm/optim.hpp"

namespace pm {

// A scalar training loss plus named scalar diagnostics from the same graph.
// Reported nodes are marked as graph outputs so one forward pass serves both.
struct LossGraph {
  ndgrad::Graph graph;
  ndgrad::NodeId loss = 0;
  std::vector<std::pair<std::string, ndgrad::NodeId>> reported;

  void report(std::string name, ndgrad::NodeId node) {
    reported.emplace_back(std::move(name), node);
    graph.mark_output(node);
  }
};

struct TrainerConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 128;
  Real noise_sigma = 0.0;  // Gaussian noise added to each minibatch
  Precision precision = Precision::f32;
  std::size_t log_every = 100;

  void validate() const;
};

// Produces the graph inputs for one minibatch (rows of the data matrix).
using BatchInputs = std::function<std::vector<ndgrad::Tensor>(
    const Matrix& batch, const std::vector<std::size_t>& indices, std::size_t step, Rng& rng)>;

// Raised when the loss or a gradient stops being finite. Carries the
// parameters from the most recent log point and the step count they reflect.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, ndgrad::ParamSet last_good, std::size_t step)
      : NumericalError(what), last_good_(std::move(last_good)), step_(step) {}
  const ndgrad::ParamSet& last_good() const { return last_good_; }
  std::size_t step() const { return step_; }

 private:
  ndgrad::ParamSet last_good_;
  std::size_t step_;
};

// Minibatches are drawn by walking seeded permutations of the rows. Only the
// parameters with moments in `opt` are updated. One metrics record (window
// means of the loss and reported values) is appended every log_every steps
// and at the final step.
void run_training(const Matrix& data, const LossGraph& loss, ndgrad::ParamSet& params,
                  OptimizerState& opt, Rng& rng, const TrainerConfig& config,
                  const BatchInputs& inputs, std::vector<nlohmann::json>& metrics,
                  const std::function<void(std::size_t step, nlohmann::json&)>& annotate = {});

// Rounds every tensor to float when the precision is f32.
void apply_precision(ndgrad::ParamSet& params, Precision precision);

}  // namespace pm
