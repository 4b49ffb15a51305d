#pragma once

#include <span>

#include "pm/ndgrad/graph.hpp"

namespace pm::ndgrad {

struct GradCheckReport {
  Real max_relative_error = 0.0;
  std::string worst_param;  // empty when there are no parameters
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients with central differences of step `eps`.
// Per scalar the error is |analytic - cd| / max(|analytic|, |cd|, 1e-8);
// the report carries the maximum. A graph without parameters reports 0.
// The analytic side runs in double; the difference quotient is formed from
// long double forward passes so roundoff does not swamp small gradients.
GradCheckReport grad_check_report(const Graph& graph, const ParamSet& params,
                                  std::span<const Tensor> inputs, NodeId loss, Real eps);

Real grad_check(const Graph& graph, const ParamSet& params,
                std::span<const Tensor> inputs, NodeId loss, Real eps);

}  // namespace pm::ndgrad
