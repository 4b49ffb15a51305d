#include "pm/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace pm {

using ndgrad::Graph;
using ndgrad::NodeId;
using ndgrad::ParamSet;
using ndgrad::Tensor;

void VadeConfig::validate() const {
  vae.validate();
  if (clusters < 1) throw ValidationError("vade needs at least one cluster");
}

nlohmann::json VadeConfig::to_json() const { return {{"vae", vae.to_json()}, {"clusters", clusters}}; }

VadeConfig VadeConfig::from_json(const nlohmann::json& j) {
  VadeConfig c;
  try {
    c.vae = VaeConfig::from_json(j.at("vae"));
    c.clusters = j.at("clusters").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed vade config: ") + e.what());
  }
  c.validate();
  return c;
}

ElboNodes build_vade_elbo_terms(Graph& g, const VadeConfig& cfg, NodeId x, const GaussianNodes& q,
                                NodeId z, NodeId beta) {
  const std::size_t k = cfg.clusters, l = cfg.vae.latent_dim;
  DecoderNodes dec = build_decoder(g, cfg.vae, z);
  ElboNodes e;
  e.recon = g.mean(g.sum_cols(build_decoder_log_prob_elems(g, cfg.vae, dec, x)));

  NodeId logits = g.param("prior/logits");
  NodeId means = g.param("prior/means");
  NodeId log_stds = g.clamp(g.param("prior/log_std"), kLogStdMin, kLogStdMax);
  NodeId q_var = g.exp(g.scale(q.log_std, 2.0));
  std::vector<NodeId> joint, expected;
  for (std::size_t c = 0; c < k; ++c) {
    NodeId mc = g.broadcast(g.slice_cols(means, c * l, (c + 1) * l), z);
    NodeId sc = g.broadcast(g.slice_cols(log_stds, c * l, (c + 1) * l), z);
    joint.push_back(sym::gaussian_log_prob(g, mc, sc, z));
    // E_q log N(z; m_c, s_c^2), analytic in the encoder moments.
    NodeId inner = g.add(g.scale(sc, 2.0),
                         g.mul(g.add(q_var, g.square(g.sub(q.mean, mc))), g.exp(g.scale(sc, -2.0))));
    expected.push_back(g.add_scalar(g.scale(g.sum_cols(inner), -0.5), -0.5 * Real(l) * kLog2Pi));
  }
  NodeId lj = g.concat_cols(joint);
  NodeId log_pi = g.broadcast(g.sub(logits, g.broadcast(g.log_sum_exp_cols(logits), logits)), lj);
  lj = g.add(lj, log_pi);
  NodeId log_gamma = g.sub(lj, g.broadcast(g.log_sum_exp_cols(lj), lj));
  NodeId gamma = g.exp(log_gamma);
  NodeId per_c = g.sub(g.add(g.concat_cols(expected), log_pi), log_gamma);
  NodeId term = g.sum_cols(g.mul(gamma, per_c));
  e.kl = g.mean(g.neg(g.add(term, sym::diag_entropy(g, q.log_std))));
  e.loss = g.add(g.neg(e.recon), g.mul(beta, e.kl));
  g.set_label(e.loss, "vade/loss");
  g.set_label(e.recon, "vade/recon");
  g.set_label(e.kl, "vade/kl");
  return e;
}

ElboFragment vade_elbo_fragment(const VadeConfig& cfg) {
  cfg.validate();
  return [cfg](Graph& g, NodeId x, const GaussianNodes& q, NodeId z, NodeId beta) {
    return build_vade_elbo_terms(g, cfg, x, q, z, beta);
  };
}

LossGraph build_vade_graph(const VadeConfig& cfg) {
  cfg.validate();
  LossGraph lg;
  Graph& g = lg.graph;
  NodeId x = g.input("x", cfg.vae.data_dim);
  NodeId eps = g.input("eps", cfg.vae.latent_dim);
  NodeId beta = g.input("beta", 1);
  GaussianNodes q = build_encoder(g, cfg.vae, x);
  NodeId z = g.add(q.mean, g.mul(g.exp(q.log_std), eps));
  ElboNodes e = build_vade_elbo_terms(g, cfg, x, q, z, beta);
  lg.loss = e.loss;
  lg.report("recon", e.recon);
  lg.report("kl", e.kl);
  return lg;
}

void init_vade_params(ParamSet& params, const VadeConfig& cfg, Rng& rng) {
  cfg.validate();
  init_vae_params(params, cfg.vae, rng);
  const std::size_t k = cfg.clusters, l = cfg.vae.latent_dim;
  Tensor means(1, k * l);
  for (std::size_t i = 0; i < means.size(); ++i) means[i] = standard_normal(rng);
  params.add("prior/logits", Tensor(1, k));
  params.add("prior/means", std::move(means));
  params.add("prior/log_std", Tensor(1, k * l));
}

VadeModel::VadeModel(VadeConfig config, ParamSet params)
    : config_(std::move(config)), vae_(config_.vae, std::move(params)) {
  config_.validate();
  const std::size_t k = config_.clusters, l = config_.vae.latent_dim;
  const std::pair<const char*, std::size_t> expected[] = {
      {"prior/logits", k}, {"prior/means", k * l}, {"prior/log_std", k * l}};
  for (const auto& [name, cols] : expected) {
    if (!vae_.params().contains(name)) throw ValidationError(std::string("vade parameters lack '") + name + "'");
    const Tensor& t = vae_.params().at(name);
    if (t.rows() != 1 || t.cols() != cols) {
      throw ShapeError(std::string("vade parameter '") + name + "' has shape " + ndgrad::to_string(t.shape()) +
                       ", expected 1x" + std::to_string(cols));
    }
  }
}

VadeModel VadeModel::init(const VadeConfig& config, Rng& rng) {
  ParamSet params;
  init_vade_params(params, config, rng);
  return VadeModel(config, std::move(params));
}

GmmPrior VadeModel::prior() const {
  const auto k = Eigen::Index(config_.clusters), l = Eigen::Index(config_.vae.latent_dim);
  const ParamSet& p = vae_.params();
  GmmPrior g;
  g.weights = softmax(p.at("prior/logits").to_matrix().row(0).transpose());
  g.means.resize(k, l);
  g.stds.resize(k, l);
  const Tensor& m = p.at("prior/means");
  const Tensor& s = p.at("prior/log_std");
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index j = 0; j < l; ++j) {
      const auto i = std::size_t(c * l + j);
      g.means(c, j) = m[i];
      g.stds(c, j) = std::exp(std::clamp(s[i], kLogStdMin, kLogStdMax));
    }
  }
  return g;
}

namespace {

const LossGraph& cached_vade_graph(const VadeConfig& cfg) {
  thread_local std::vector<std::pair<std::string, std::shared_ptr<LossGraph>>> cache;
  const std::string key = cfg.to_json().dump();
  for (const auto& [k, g] : cache) {
    if (k == key) return *g;
  }
  cache.emplace_back(key, std::make_shared<LossGraph>(build_vade_graph(cfg)));
  return *cache.back().second;
}

}  // namespace

ElboParts vade_elbo_with_noise(const Matrix& x, const VadeModel& model, Real beta, const Matrix& eps) {
  const VadeConfig& cfg = model.config();
  if (std::size_t(x.cols()) != cfg.vae.data_dim) throw ShapeError("vade elbo: data dimension mismatch");
  const LossGraph& lg = cached_vade_graph(cfg);
  std::vector<Tensor> in{to_tensor(x), to_tensor(eps), Tensor::scalar(beta)};
  std::vector<NodeId> outs{lg.loss, lg.reported[0].second, lg.reported[1].second};
  auto v = ndgrad::evaluate(lg.graph, model.params(), in, outs);
  ElboParts p{v[0].item(), v[1].item(), v[2].item()};
  if (!std::isfinite(p.recon)) throw NumericalError("vade elbo: reconstruction term is not finite");
  if (!std::isfinite(p.kl)) throw NumericalError("vade elbo: prior term is not finite");
  if (!std::isfinite(p.loss)) throw NumericalError("vade elbo: loss is not finite");
  return p;
}

ElboParts vade_elbo(const Matrix& x, const VadeModel& model, Real beta, Rng& rng) {
  Matrix eps = to_matrix(noise_tensor(std::size_t(x.rows()), model.config().vae.latent_dim, rng));
  return vade_elbo_with_noise(x, model, beta, eps);
}

TrainedVade train_vade(const Dataset& train, const VadeConfig& config, const VaeTrainConfig& tc) {
  if (train.size() == 0) throw ValidationError("train_vade: dataset is empty");
  if (train.dim() != config.vae.data_dim) {
    throw ValidationError("train_vade: data has " + std::to_string(train.dim()) +
                          " features, config expects " + std::to_string(config.vae.data_dim));
  }
  if (!train.x.allFinite()) throw ValidationError("train_vade: training data must be fully observed");
  tc.beta.validate();
  Rng rng(tc.seed);
  VadeModel model = VadeModel::init(config, rng);
  OptimizerState opt = OptimizerState::for_params(model.params(), tc.adam);
  LossGraph lg = build_vade_graph(config);
  std::vector<nlohmann::json> metrics;
  const BetaSchedule beta = tc.beta;
  const std::size_t l = config.vae.latent_dim;
  auto inputs = [&](const Matrix& x, const std::vector<std::size_t>&, std::size_t step, Rng& r) {
    return std::vector<Tensor>{to_tensor(x), noise_tensor(std::size_t(x.rows()), l, r),
                               Tensor::scalar(beta_value(beta, step))};
  };
  auto annotate = [&](std::size_t step, nlohmann::json& rec) { rec["beta"] = beta_value(beta, step); };
  ParamSet params = model.params();
  run_training(train.x, lg, params, opt, rng, tc.trainer, inputs, metrics, annotate);
  model.mutable_vae().mutable_params().assign_from(params);
  return {std::move(model), std::move(opt), rng, std::move(metrics)};
}

Checkpoint make_vade_checkpoint(const TrainedVade& t, std::uint64_t seed) {
  Checkpoint c;
  c.model_kind = "vade";
  c.config = t.model.config().to_json();
  c.params = t.model.params();
  c.optimizer = t.optimizer;
  c.seed = seed;
  c.rng_state = rng_to_string(t.rng);
  c.step = t.optimizer.step;
  c.links = {{"clusters", t.model.clusters()}};
  return c;
}

VadeModel vade_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.model_kind != "vade") {
    throw ValidationError("checkpoint holds a '" + ckpt.model_kind + "' model, expected a vade model");
  }
  return VadeModel(VadeConfig::from_json(ckpt.config), ckpt.params);
}

// ---------------------------------------------------------------- prediction

namespace {

Vector mean_responsibilities(const Matrix& z, const GmmPrior& prior) {
  Vector acc = Vector::Zero(Eigen::Index(prior.components()));
  for (Eigen::Index j = 0; j < z.rows(); ++j) acc += gmm_component_posterior(z.row(j).transpose(), prior);
  return acc / Real(z.rows());
}

void check_samples(std::size_t n) {
  if (n == 0) throw ValidationError("cluster posterior needs at least one sample");
}

}  // namespace

Vector cluster_posterior_full(const VadeModel& model, const Vector& x, std::size_t n_samples, Rng& rng) {
  check_samples(n_samples);
  if (std::size_t(x.size()) != model.config().vae.data_dim) {
    throw ShapeError("cluster_posterior_full: data dimension mismatch");
  }
  const DiagGaussian q = model.vae().encode(x);
  Matrix z(static_cast<Eigen::Index>(n_samples), q.mean.size());
  for (Eigen::Index j = 0; j < z.rows(); ++j) z.row(j) = sample(q, rng).transpose();
  return mean_responsibilities(z, model.prior());
}

Vector cluster_posterior_partial(const PoModel& po, const GmmPrior& prior, const PartialObservation& p,
                                 std::size_t n_samples, Rng& rng) {
  check_samples(n_samples);
  prior.validate();
  if (prior.dim() != po.config().latent_dim) throw ShapeError("cluster_posterior_partial: latent size mismatch");
  return mean_responsibilities(po.posterior(p).sample(n_samples, rng), prior);
}

int predict_cluster(const Vector& posterior) {
  if (posterior.size() == 0) throw ValidationError("predict_cluster: empty posterior");
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < posterior.size(); ++c) {
    if (posterior[c] > posterior[best]) best = c;
  }
  return int(best);
}

// ---------------------------------------------------------------- accuracy

std::vector<std::size_t> max_weight_assignment(const Matrix& weights) {
  if (weights.rows() != weights.cols()) throw ShapeError("assignment needs a square weight matrix");
  const auto n = std::size_t(weights.rows());
  std::vector<std::size_t> result(n);
  if (n == 0) return result;
  if (n > 8) return hungarian_assignment(weights);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Real best = -std::numeric_limits<Real>::infinity();
  do {
    Real s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += weights(Eigen::Index(r), Eigen::Index(perm[r]));
    if (s > best) {
      best = s;
      result = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return result;
}

std::vector<std::size_t> hungarian_assignment(const Matrix& weights) {
  if (weights.rows() != weights.cols()) throw ShapeError("assignment needs a square weight matrix");
  const auto n = std::size_t(weights.rows());
  std::vector<std::size_t> result(n);
  if (n == 0) return result;
  // Potentials on cost = -weight, 1-based arrays.
  const Real inf = std::numeric_limits<Real>::infinity();
  std::vector<Real> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<Real> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      Real delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const Real cur = -weights(Eigen::Index(i0 - 1), Eigen::Index(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) result[match[j] - 1] = j - 1;
  return result;
}

Real clustering_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty()) throw ValidationError("clustering_accuracy: no predictions");
  if (predictions.size() != labels.size()) {
    throw ValidationError("clustering_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  }
  auto index_of = [](const std::vector<int>& v) {
    std::map<int, std::size_t> idx;
    for (int x : v) idx.emplace(x, 0);
    std::size_t i = 0;
    for (auto& [key, value] : idx) value = i++;
    return idx;
  };
  const auto pi = index_of(predictions), li = index_of(labels);
  const std::size_t n = std::max(pi.size(), li.size());
  Matrix confusion = Matrix::Zero(Eigen::Index(n), Eigen::Index(n));
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    confusion(Eigen::Index(pi.at(predictions[i])), Eigen::Index(li.at(labels[i]))) += 1.0;
  }
  const std::vector<std::size_t> match = max_weight_assignment(confusion);
  Real hits = 0.0;
  for (std::size_t r = 0; r < n; ++r) hits += confusion(Eigen::Index(r), Eigen::Index(match[r]));
  return hits / Real(predictions.size());
}

}  // namespace pm
