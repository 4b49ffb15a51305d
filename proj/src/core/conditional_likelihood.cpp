#include "pm/conditional_likelihood.hpp"

#include <algorithm>
#include <cmath>

namespace pm {

namespace {

constexpr std::size_t kChunk = 2048;

thread_local Real g_max_exp_argument = -std::numeric_limits<Real>::infinity();

Real guarded_exp(Real a) {
  g_max_exp_argument = std::max(g_max_exp_argument, a);
  return std::exp(a);
}

Real log_prior(const Vector& z, const GmmPrior* prior) {
  if (prior) return log_prob(*prior, z);
  return -0.5 * z.squaredNorm() - 0.5 * Real(z.size()) * kLog2Pi;
}

// Sum over the selected columns of log p(x_i | z_j) for each row z_j.
Vector decoder_log_lik(const VaeModel& vae, const Matrix& z, const Vector& x,
                       const std::vector<std::size_t>& columns) {
  Vector out(z.rows());
  if (columns.empty()) {
    out.setZero();
    return out;
  }
  for (Eigen::Index start = 0; start < z.rows(); start += Eigen::Index(kChunk)) {
    const Eigen::Index rows = std::min<Eigen::Index>(Eigen::Index(kChunk), z.rows() - start);
    Matrix xs = x.transpose().replicate(rows, 1);
    Matrix lp = vae.decoder_log_prob_elems(z.middleRows(start, rows), xs);
    for (Eigen::Index r = 0; r < rows; ++r) {
      Real s = 0.0;
      for (std::size_t c : columns) s += lp(r, Eigen::Index(c));
      out[start + r] = s;
    }
  }
  return out;
}

std::vector<std::size_t> all_columns(std::size_t d) {
  std::vector<std::size_t> c(d);
  for (std::size_t i = 0; i < d; ++i) c[i] = i;
  return c;
}

void check_samples(std::size_t n) {
  if (n == 0) throw ValidationError("likelihood estimate needs at least one sample");
}

}  // namespace

nlohmann::json LikelihoodEstimate::to_json() const {
  return {{"value", value},
          {"n_samples", n_samples},
          {"standard_error", standard_error},
          {"max_weight", max_weight},
          {"degenerate", degenerate}};
}

Real max_exp_argument_seen() { return g_max_exp_argument; }

void reset_exp_instrumentation() { g_max_exp_argument = -std::numeric_limits<Real>::infinity(); }

LikelihoodEstimate log_mean_exp_estimate(const Vector& lw) {
  check_samples(std::size_t(lw.size()));
  if (!lw.allFinite()) throw NumericalError("importance weights are not finite");
  const Real top = lw.maxCoeff();
  const auto n = Real(lw.size());
  Vector w(lw.size());
  for (Eigen::Index j = 0; j < lw.size(); ++j) w[j] = guarded_exp(lw[j] - top);
  const Real sum = w.sum();
  const Real mean = sum / n;
  LikelihoodEstimate e;
  e.value = top + std::log(mean);
  e.n_samples = std::size_t(lw.size());
  if (lw.size() > 1) {
    const Real var = (w.array() - mean).square().sum() / (n - 1);
    e.standard_error = std::sqrt(var / n) / mean;
  }
  e.max_weight = 1.0 / sum;  // the largest scaled weight is exactly 1
  e.degenerate = e.max_weight > 0.99 && lw.size() > 1;
  if (!std::isfinite(e.value)) throw NumericalError("likelihood estimate is not finite");
  return e;
}

LikelihoodEstimate estimate_joint_ll(const VaeModel& vae, const Vector& x, std::size_t n, Rng& rng,
                                     const GmmPrior* prior) {
  check_samples(n);
  const std::size_t d = vae.config().data_dim;
  if (std::size_t(x.size()) != d) throw ShapeError("estimate_joint_ll: data dimension mismatch");
  if (!x.allFinite()) throw ValidationError("estimate_joint_ll: x must be fully observed");
  const DiagGaussian q = vae.encode(x);
  Matrix z(static_cast<Eigen::Index>(n), q.mean.size());
  for (Eigen::Index j = 0; j < z.rows(); ++j) z.row(j) = sample(q, rng).transpose();
  Vector lw = decoder_log_lik(vae, z, x, all_columns(d));
  for (Eigen::Index j = 0; j < z.rows(); ++j) {
    const Vector zj = z.row(j).transpose();
    lw[j] += log_prior(zj, prior) - log_prob(q, zj);
  }
  return log_mean_exp_estimate(lw);
}

LikelihoodEstimate estimate_observed_ll(const VaeModel& vae, const PoModel& po,
                                        const PartialObservation& p, std::size_t n, Rng& rng,
                                        const GmmPrior* prior) {
  check_samples(n);
  p.validate();
  const std::size_t d = vae.config().data_dim;
  if (p.mask.dim() != d) throw ShapeError("estimate_observed_ll: mask dimension mismatch");
  Vector x = p.values;
  for (std::size_t i = 0; i < d; ++i) {
    if (!p.mask.observed(i)) x[Eigen::Index(i)] = 0.0;
  }
  const PoPosterior q = po.posterior(p);
  const Matrix z = q.sample(n, rng);
  Vector lw = decoder_log_lik(vae, z, x, p.mask.observed_indices());
  const Vector lq = q.log_prob(z);
  for (Eigen::Index j = 0; j < z.rows(); ++j) lw[j] += log_prior(z.row(j).transpose(), prior) - lq[j];
  return log_mean_exp_estimate(lw);
}

LikelihoodEstimate conditional_ll(const VaeModel& vae, const PoModel& po, const Vector& x,
                                  const ObservationMask& mask, std::size_t n, Rng& rng,
                                  const GmmPrior* prior) {
  LikelihoodEstimate joint = estimate_joint_ll(vae, x, n, rng, prior);
  LikelihoodEstimate observed = estimate_observed_ll(vae, po, {x, mask}, n, rng, prior);
  LikelihoodEstimate e;
  e.value = joint.value - observed.value;
  e.n_samples = n;
  e.standard_error = std::hypot(joint.standard_error, observed.standard_error);
  e.max_weight = std::max(joint.max_weight, observed.max_weight);
  e.degenerate = joint.degenerate || observed.degenerate;
  return e;
}

Imputation impute(const VaeModel& vae, const PoModel& po, const PartialObservation& p,
                  std::size_t n_latents, Rng& rng) {
  if (n_latents == 0) throw ValidationError("impute needs at least one latent sample");
  p.validate();
  const Matrix z = po.posterior(p).sample(n_latents, rng);
  Imputation out;
  out.decoded = vae.decode_mean(z);
  out.point = out.decoded.colwise().mean().transpose();
  for (std::size_t i = 0; i < p.mask.dim(); ++i) {
    if (p.mask.observed(i)) out.point[Eigen::Index(i)] = p.values[Eigen::Index(i)];
  }
  return out;
}

Vector zero_impute_baseline(const VaeModel& vae, const PartialObservation& p) {
  p.validate();
  Vector x = p.values;
  for (std::size_t i = 0; i < p.mask.dim(); ++i) {
    if (!p.mask.observed(i)) x[Eigen::Index(i)] = 0.0;
  }
  const DiagGaussian q = vae.encode(x);
  return vae.decode_mean(Matrix(q.mean.transpose())).row(0).transpose();
}

void SquaredError::add(const Vector& truth, const Vector& estimate, const ObservationMask& mask) {
  if (truth.size() != estimate.size() || std::size_t(truth.size()) != mask.dim()) {
    throw ShapeError("squared error: vector and mask sizes differ");
  }
  for (std::size_t i = 0; i < mask.dim(); ++i) {
    if (mask.observed(i)) continue;
    const Real e = truth[Eigen::Index(i)] - estimate[Eigen::Index(i)];
    sum += e * e;
    ++count;
  }
}

Real SquaredError::rmse() const { return count == 0 ? 0.0 : std::sqrt(sum / Real(count)); }

nlohmann::json EvalRecord::to_json() const {
  return {{"instance_id", instance_id},
          {"mask_id", mask_id},
          {"conditional_ll", conditional_ll},
          {"se", se},
          {"nrmse", nrmse}};
}

}  // namespace pm
