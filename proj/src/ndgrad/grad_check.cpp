#include "pm/ndgrad/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace pm::ndgrad {

GradCheckReport grad_check_report(const Graph& graph, const ParamSet& params,
                                  std::span<const Tensor> inputs, NodeId loss, Real eps) {
  GradCheckReport report;
  GradientResult analytic = gradient(graph, params, inputs, loss);
  std::vector<NodeId> target{loss};

  ParamSet probe = params;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    Tensor& t = probe.at(p);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const Real saved = t[i];
      t[i] = saved + eps;
      const long double up = evaluate_extended(graph, probe, inputs, target)[0].item();
      t[i] = saved - eps;
      const long double down = evaluate_extended(graph, probe, inputs, target)[0].item();
      const long double step = (long double)(saved + eps) - (long double)(saved - eps);
      t[i] = saved;

      const Real cd = Real((up - down) / step);
      const Real an = analytic.grads.at(p)[i];
      const Real denom = std::max({std::abs(an), std::abs(cd), 1e-8});
      const Real err = std::abs(an - cd) / denom;
      ++report.checked;
      if (err > report.max_relative_error || !std::isfinite(err)) {
        report.max_relative_error = std::isfinite(err) ? err : INFINITY;
        report.worst_param = probe.name(p);
        report.worst_index = i;
      }
    }
  }
  return report;
}

Real grad_check(const Graph& graph, const ParamSet& params, std::span<const Tensor> inputs,
                NodeId loss, Real eps) {
  return grad_check_report(graph, params, inputs, loss, eps).max_relative_error;
}

}  // namespace pm::ndgrad
