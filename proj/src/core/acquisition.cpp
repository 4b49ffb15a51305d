#include "pm/acquisition.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace pm {

using ndgrad::Graph;
using ndgrad::NodeId;
using ndgrad::ParamSet;
using ndgrad::Tensor;

namespace {

thread_local AcquisitionCounters g_counters;

ndgrad::MlpSpec lookahead_spec(const LookaheadConfig& c) {
  return {2 * c.data_dim, c.hidden, c.blocks, 2 * c.data_dim * c.latent_dim, c.layer_norm};
}

// Entropy of a diagonal Gaussian from its log-stds.
Real diag_entropy_from_log_std(const Eigen::Ref<const Matrix>& log_std) {
  return log_std.sum() + 0.5 * Real(log_std.size()) * (1.0 + kLog2Pi);
}

// Uniform subset of `size` elements, in draw order.
std::vector<std::size_t> random_subset(std::vector<std::size_t> items, std::size_t size, Rng& rng) {
  size = std::min(size, items.size());
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
  items.resize(size);
  return items;
}

// Rows of (x, mask) with one feature of each row revealed to a sampled
// value. Row r reveals feature `features[r / k]` for instance `owner[r]`.
struct RevealBatch {
  Matrix x;
  std::vector<ObservationMask> masks;
  std::vector<std::size_t> feature;  // per row
};

// For each (instance, feature) pair, k draws x_i ~ p(x_i | x_o) through
// z ~ q_theta(. | x_o) and the decoder, then the revealed encodings.
RevealBatch reveal_samples(const VaeModel& vae, const PoModel& po, const Matrix& x,
                           const std::vector<ObservationMask>& masks,
                           const std::vector<std::vector<std::size_t>>& features, std::size_t k,
                           Rng& rng) {
  std::size_t rows = 0;
  for (const auto& f : features) rows += f.size() * k;
  RevealBatch b;
  b.x.resize(Eigen::Index(rows), x.cols());
  b.masks.reserve(rows);
  b.feature.reserve(rows);
  std::size_t r = 0;
  for (std::size_t n = 0; n < features.size(); ++n) {
    for (std::size_t i : features[n]) {
      for (std::size_t j = 0; j < k; ++j, ++r) {
        b.x.row(Eigen::Index(r)) = x.row(Eigen::Index(n));
        b.masks.push_back(masks[n]);
        b.feature.push_back(i);
      }
    }
  }
  if (rows == 0) return b;
  const Matrix z_base = po.sample(encode_batch(b.x, b.masks), rng);
  const Matrix xs = vae.sample_decoder(z_base, rng);
  for (std::size_t q = 0; q < rows; ++q) {
    const auto row = Eigen::Index(q), col = Eigen::Index(b.feature[q]);
    b.x(row, col) = xs(row, col);
    b.masks[q].set(b.feature[q], true);
  }
  return b;
}

void check_instance(const VaeModel& vae, const PoModel& po, const PartialObservation& p) {
  p.validate();
  if (p.mask.dim() != vae.config().data_dim || p.mask.dim() != po.config().data_dim) {
    throw ShapeError("acquisition: observation dimension does not match the models");
  }
}

// Mean posterior entropy per requested feature, k samples each.
Vector expected_entropies(const VaeModel& vae, const PoModel& po, const PartialObservation& p,
                          const std::vector<std::size_t>& features, std::size_t k, Rng& rng) {
  if (k == 0) throw ValidationError("expected entropy needs k >= 1 samples");
  check_instance(vae, po, p);
  Matrix x = p.values.transpose();
  for (std::size_t i = 0; i < p.mask.dim(); ++i) {
    if (!p.mask.observed(i)) x(0, Eigen::Index(i)) = 0.0;
  }
  RevealBatch b = reveal_samples(vae, po, x, {p.mask}, {features}, k, rng);
  Vector out = Vector::Zero(Eigen::Index(features.size()));
  if (features.empty()) return out;
  const std::vector<PoPosterior> posts = po.posteriors(encode_batch(b.x, b.masks));
  g_counters.lookahead_posteriors += posts.size();
  for (std::size_t r = 0; r < posts.size(); ++r) out[Eigen::Index(r / k)] += posts[r].entropy(rng);
  return out / Real(k);
}

}  // namespace

// ---------------------------------------------------------------- network

void LookaheadConfig::validate() const {
  if (data_dim == 0 || latent_dim == 0) {
    throw ValidationError("lookahead config needs data_dim and latent_dim");
  }
  if (hidden == 0 && blocks > 0) throw ValidationError("lookahead residual blocks need hidden > 0");
}

nlohmann::json LookaheadConfig::to_json() const {
  return {{"data_dim", data_dim}, {"latent_dim", latent_dim}, {"hidden", hidden},
          {"blocks", blocks},     {"layer_norm", layer_norm}};
}

LookaheadConfig LookaheadConfig::from_json(const nlohmann::json& j) {
  LookaheadConfig c;
  try {
    c.data_dim = j.at("data_dim").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.blocks = j.at("blocks").get<std::size_t>();
    c.layer_norm = j.at("layer_norm").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed lookahead config: ") + e.what());
  }
  c.validate();
  return c;
}

LookaheadHeads build_lookahead(Graph& g, const LookaheadConfig& cfg, NodeId enc) {
  const std::size_t width = cfg.data_dim * cfg.latent_dim;
  NodeId out = ndgrad::build_mlp(g, "la", lookahead_spec(cfg), enc);
  return {g.slice_cols(out, 0, width),
          g.clamp(g.slice_cols(out, width, 2 * width), kLogStdMin, kLogStdMax)};
}

void init_lookahead_params(ParamSet& params, const LookaheadConfig& cfg, Rng& rng) {
  cfg.validate();
  ndgrad::init_mlp(params, "la", lookahead_spec(cfg), rng, ndgrad::OutputInit::zero);
}

struct LookaheadModel::Graphs {
  Graph trunk;
  LookaheadHeads heads;
};

LookaheadModel::LookaheadModel(LookaheadConfig config, ParamSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  auto gr = std::make_shared<Graphs>();
  gr->heads = build_lookahead(gr->trunk, config_, gr->trunk.input("enc", 2 * config_.data_dim));
  for (const auto& name : gr->trunk.param_names()) {
    if (!params_.contains(name)) throw ValidationError("lookahead parameters lack '" + name + "'");
  }
  graphs_ = std::move(gr);
}

LookaheadModel LookaheadModel::init(const LookaheadConfig& config, Rng& rng) {
  ParamSet params;
  init_lookahead_params(params, config, rng);
  return LookaheadModel(config, std::move(params));
}

namespace {

void trunk_outputs(const Graph& g, const LookaheadHeads& h, const ParamSet& params,
                   const LookaheadConfig& cfg, const PartialObservation& p, Matrix& mean,
                   Matrix& log_std) {
  p.validate();
  if (p.mask.dim() != cfg.data_dim) throw ShapeError("lookahead: observation dimension mismatch");
  std::vector<Tensor> in{Tensor::from_matrix(Matrix(encode_partial(p).transpose()))};
  std::vector<NodeId> outs{h.mean, h.log_std};
  auto v = ndgrad::evaluate(g, params, in, outs);
  ++g_counters.trunk_evaluations;
  mean = v[0].to_matrix();
  log_std = v[1].to_matrix();
}

}  // namespace

DiagGaussian LookaheadModel::head(const PartialObservation& p, std::size_t i) const {
  if (i >= config_.data_dim) throw ValidationError("lookahead head index out of range");
  Matrix mean, log_std;
  trunk_outputs(graphs_->trunk, graphs_->heads, params_, config_, p, mean, log_std);
  const auto l = Eigen::Index(config_.latent_dim);
  return {mean.row(0).segment(Eigen::Index(i) * l, l).transpose(),
          log_std.row(0).segment(Eigen::Index(i) * l, l).transpose()};
}

Vector LookaheadModel::entropies(const PartialObservation& p) const {
  Matrix mean, log_std;
  trunk_outputs(graphs_->trunk, graphs_->heads, params_, config_, p, mean, log_std);
  const auto d = Eigen::Index(config_.data_dim), l = Eigen::Index(config_.latent_dim);
  Vector h(d);
  for (Eigen::Index i = 0; i < d; ++i) h[i] = diag_entropy_from_log_std(log_std.row(0).segment(i * l, l));
  return h;
}

// ---------------------------------------------------------------- greedy steps

AcquisitionCounters& acquisition_counters() { return g_counters; }

void reset_acquisition_counters() { g_counters = {}; }

Real expected_entropy_sampling(const VaeModel& vae, const PoModel& po, const PartialObservation& p,
                               std::size_t i, std::size_t k, Rng& rng) {
  if (i >= p.mask.dim()) throw ValidationError("expected entropy: feature index out of range");
  if (p.mask.observed(i)) throw ValidationError("expected entropy: feature is already observed");
  return expected_entropies(vae, po, p, {i}, k, rng)[0];
}

Vector expected_entropies_sampling(const VaeModel& vae, const PoModel& po,
                                   const PartialObservation& p, std::size_t k, Rng& rng) {
  const std::vector<std::size_t> u = p.mask.unobserved_indices();
  const Vector h = expected_entropies(vae, po, p, u, k, rng);
  Vector out = Vector::Constant(Eigen::Index(p.mask.dim()), std::numeric_limits<Real>::infinity());
  for (std::size_t n = 0; n < u.size(); ++n) out[Eigen::Index(u[n])] = h[Eigen::Index(n)];
  return out;
}

Vector information_gain_sampling(const VaeModel& vae, const PoModel& po,
                                 const PartialObservation& p, std::size_t k, Rng& rng) {
  const Vector h = expected_entropies_sampling(vae, po, p, k, rng);
  const Real base = po.posterior(p).entropy(rng);
  Vector gain(h.size());
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    gain[i] = std::isinf(h[i]) ? -std::numeric_limits<Real>::infinity() : base - h[i];
  }
  return gain;
}

std::size_t argmin_unobserved(const Vector& scores, const ObservationMask& mask) {
  if (std::size_t(scores.size()) != mask.dim()) throw ShapeError("argmin: score and mask sizes differ");
  std::size_t best = mask.dim();
  for (std::size_t i = 0; i < mask.dim(); ++i) {
    if (mask.observed(i)) continue;
    const Real s = scores[Eigen::Index(i)];
    if (std::isnan(s)) throw NumericalError("acquisition score for feature " + std::to_string(i) + " is NaN");
    if (best == mask.dim() || s < scores[Eigen::Index(best)]) best = i;
  }
  if (best == mask.dim()) throw ValidationError("no unobserved feature left to acquire");
  return best;
}

std::size_t greedy_step_sampling(const VaeModel& vae, const PoModel& po,
                                 const PartialObservation& p, std::size_t k, Rng& rng) {
  return argmin_unobserved(expected_entropies_sampling(vae, po, p, k, rng), p.mask);
}

std::size_t greedy_step_lookahead(const LookaheadModel& la, const PartialObservation& p) {
  return argmin_unobserved(la.entropies(p), p.mask);
}

// ---------------------------------------------------------------- training

LookaheadTargets sample_lookahead_targets(const VaeModel& vae, const PoModel& po, const Matrix& x,
                                          const std::vector<ObservationMask>& masks, std::size_t k,
                                          std::size_t subsample, Rng& rng) {
  if (k == 0) throw ValidationError("lookahead targets need k >= 1 samples");
  if (subsample == 0) throw ValidationError("lookahead targets need a positive feature subsample");
  if (std::size_t(x.rows()) != masks.size()) throw ShapeError("lookahead targets: one mask per row");
  const std::size_t d = vae.config().data_dim, l = vae.config().latent_dim;
  if (std::size_t(x.cols()) != d) throw ShapeError("lookahead targets: data dimension mismatch");
  std::vector<std::vector<std::size_t>> features(masks.size());
  for (std::size_t n = 0; n < masks.size(); ++n) {
    features[n] = random_subset(masks[n].unobserved_indices(), subsample, rng);
  }
  RevealBatch b = reveal_samples(vae, po, x, masks, features, k, rng);
  const auto rows = x.rows(), width = Eigen::Index(d * l);
  LookaheadTargets t{Matrix::Zero(rows, width), Matrix::Zero(rows, width), Matrix::Zero(rows, width)};
  if (b.masks.empty()) return t;
  const Matrix z = po.sample(encode_batch(b.x, b.masks), rng);
  g_counters.lookahead_posteriors += std::size_t(z.rows());
  std::size_t r = 0;
  for (std::size_t n = 0; n < masks.size(); ++n) {
    for (std::size_t i : features[n]) {
      const Matrix block = z.middleRows(Eigen::Index(r), Eigen::Index(k));
      r += k;
      const Vector m1 = block.colwise().mean().transpose();
      const Vector var = (block.rowwise() - m1.transpose()).array().square().colwise().mean().transpose();
      const Eigen::Index off = Eigen::Index(i * l);
      t.weight.row(Eigen::Index(n)).segment(off, Eigen::Index(l)).setOnes();
      t.mean.row(Eigen::Index(n)).segment(off, Eigen::Index(l)) = m1.transpose();
      t.var.row(Eigen::Index(n)).segment(off, Eigen::Index(l)) = var.transpose();
    }
  }
  return t;
}

LossGraph build_lookahead_graph(const LookaheadConfig& cfg) {
  cfg.validate();
  const std::size_t width = cfg.data_dim * cfg.latent_dim;
  LossGraph lg;
  Graph& g = lg.graph;
  NodeId enc = g.input("enc", 2 * cfg.data_dim);
  NodeId weight = g.input("weight", width);
  NodeId m1 = g.input("mean", width);
  NodeId var = g.input("var", width);
  LookaheadHeads h = build_lookahead(g, cfg, enc);
  // (1/k) sum_j (z_j - mu)^2 = var + (mean - mu)^2
  NodeId quad = g.add(var, g.square(g.sub(m1, h.mean)));
  NodeId inv_var = g.exp(g.scale(h.log_std, -2.0));
  NodeId nll = g.add_scalar(g.add(h.log_std, g.scale(g.mul(quad, inv_var), 0.5)), 0.5 * kLog2Pi);
  lg.loss = g.mean(g.sum_cols(g.mul(weight, nll)));
  g.set_label(lg.loss, "lookahead_loss");
  g.mark_output(lg.loss);
  return lg;
}

namespace {

std::vector<Tensor> lookahead_inputs(const VaeModel& vae, const PoModel& po, const Matrix& x,
                                     const std::vector<ObservationMask>& masks, std::size_t k,
                                     std::size_t subsample, Rng& rng) {
  LookaheadTargets t = sample_lookahead_targets(vae, po, x, masks, k, subsample, rng);
  return {encode_batch(x, masks), Tensor::from_matrix(t.weight), Tensor::from_matrix(t.mean),
          Tensor::from_matrix(t.var)};
}

}  // namespace

Real lookahead_loss(const VaeModel& vae, const PoModel& po, const LookaheadModel& la,
                    const Matrix& x, const std::vector<ObservationMask>& masks, std::size_t k,
                    std::size_t subsample, Rng& rng) {
  const LossGraph lg = build_lookahead_graph(la.config());
  auto in = lookahead_inputs(vae, po, x, masks, k, subsample, rng);
  std::vector<NodeId> outs{lg.loss};
  return ndgrad::evaluate(lg.graph, la.params(), in, outs)[0].item();
}

TrainedLookahead train_lookahead(const Dataset& train, const VaeModel& vae, const PoModel& po,
                                 const LookaheadConfig& cfg, const LookaheadTrainConfig& config) {
  if (train.size() == 0) throw ValidationError("train_lookahead: dataset is empty");
  if (train.dim() != vae.config().data_dim || cfg.data_dim != train.dim() ||
      po.config().data_dim != train.dim()) {
    throw ValidationError("train_lookahead: data dimension mismatch");
  }
  if (cfg.latent_dim != vae.config().latent_dim) {
    throw ValidationError("train_lookahead: latent dimension differs from the VAE");
  }
  if (!train.x.allFinite()) throw ValidationError("train_lookahead: training data must be fully observed");
  if (config.samples == 0 || config.subsample == 0) {
    throw ValidationError("train_lookahead: samples and subsample must be positive");
  }
  config.masks.validate();

  Rng rng(config.seed);
  LookaheadModel la = LookaheadModel::init(cfg, rng);
  LossGraph lg = build_lookahead_graph(cfg);
  ParamSet params = la.params();
  OptimizerState opt = OptimizerState::for_params(params, config.adam);
  const std::size_t d = train.dim();
  auto inputs = [&](const Matrix& x, const std::vector<std::size_t>&, std::size_t, Rng& r) {
    std::vector<ObservationMask> masks;
    masks.reserve(std::size_t(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) masks.push_back(config.masks(d, r));
    return lookahead_inputs(vae, po, x, masks, config.samples, config.subsample, r);
  };
  std::vector<nlohmann::json> metrics;
  run_training(train.x, lg, params, opt, rng, config.trainer, inputs, metrics);
  la.mutable_params().assign_from(params);
  return {std::move(la), std::move(opt), rng, std::move(metrics)};
}

Checkpoint make_lookahead_checkpoint(const TrainedLookahead& t, std::uint64_t seed,
                                     const std::string& po_digest) {
  Checkpoint c;
  c.model_kind = "lookahead";
  c.config = t.model.config().to_json();
  c.params = t.model.params();
  c.optimizer = t.optimizer;
  c.seed = seed;
  c.rng_state = rng_to_string(t.rng);
  c.step = t.optimizer.step;
  c.links = {{"po_digest", po_digest}};
  return c;
}

LookaheadModel lookahead_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.model_kind != "lookahead") {
    throw ValidationError("checkpoint holds a '" + ckpt.model_kind + "' model, expected a lookahead network");
  }
  return LookaheadModel(LookaheadConfig::from_json(ckpt.config), ckpt.params);
}

// ---------------------------------------------------------------- episodes

AcquisitionPolicy parse_policy(const std::string& text) {
  if (text == "random") return AcquisitionPolicy::random;
  if (text == "sampling") return AcquisitionPolicy::sampling;
  if (text == "lookahead") return AcquisitionPolicy::lookahead;
  throw ValidationError("unknown acquisition policy '" + text + "' (random, sampling, lookahead)");
}

std::string to_string(AcquisitionPolicy policy) {
  switch (policy) {
    case AcquisitionPolicy::random: return "random";
    case AcquisitionPolicy::sampling: return "sampling";
    case AcquisitionPolicy::lookahead: return "lookahead";
  }
  return "?";
}

std::vector<nlohmann::json> AcquisitionTrajectory::records(std::size_t instance_id) const {
  std::vector<nlohmann::json> out;
  for (std::size_t s = 0; s < rmse.size(); ++s) {
    nlohmann::json rec{{"instance_id", instance_id}, {"step", s}, {"rmse", rmse[s]}};
    if (s == 0) {
      rec["chosen_index"] = nullptr;
      rec["select_seconds"] = 0.0;
    } else {
      rec["chosen_index"] = acquired.at(s - 1);
      rec["select_seconds"] = select_seconds.at(s - 1);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

namespace {

Real full_rmse(const VaeModel& vae, const PoModel& po, const Vector& x_true,
               const ObservationMask& mask, std::size_t n_latents, Rng& rng) {
  const Imputation imp = impute(vae, po, {x_true, mask}, n_latents, rng);
  return std::sqrt((imp.point - x_true).squaredNorm() / Real(x_true.size()));
}

}  // namespace

AcquisitionTrajectory run_episode(const VaeModel& vae, const PoModel& po, const LookaheadModel* la,
                                  const Vector& x_true, const ObservationMask& initial_mask,
                                  const EpisodeConfig& config, Rng& rng) {
  if (!x_true.allFinite()) throw ValidationError("run_episode: x must be fully observed");
  PartialObservation p{x_true, initial_mask};
  check_instance(vae, po, p);
  const std::size_t free = initial_mask.dim() - initial_mask.observed_count();
  if (config.budget > free) {
    throw ValidationError("run_episode: budget " + std::to_string(config.budget) + " exceeds the " +
                          std::to_string(free) + " unobserved features");
  }
  if (config.policy == AcquisitionPolicy::lookahead) {
    if (!la) throw ValidationError("run_episode: the lookahead policy needs a lookahead network");
    if (la->config().data_dim != initial_mask.dim()) throw ShapeError("run_episode: lookahead dimension mismatch");
  }
  AcquisitionTrajectory t;
  t.rmse.push_back(full_rmse(vae, po, x_true, p.mask, config.n_latents, rng));
  for (std::size_t step = 0; step < config.budget; ++step) {
    const auto start = std::chrono::steady_clock::now();
    std::size_t chosen = 0;
    switch (config.policy) {
      case AcquisitionPolicy::random: {
        const auto u = p.mask.unobserved_indices();
        std::uniform_int_distribution<std::size_t> pick(0, u.size() - 1);
        chosen = u[pick(rng)];
        break;
      }
      case AcquisitionPolicy::sampling:
        chosen = greedy_step_sampling(vae, po, p, config.samples, rng);
        break;
      case AcquisitionPolicy::lookahead: chosen = greedy_step_lookahead(*la, p); break;
    }
    const std::chrono::duration<Real> elapsed = std::chrono::steady_clock::now() - start;
    p.mask.set(chosen, true);
    t.acquired.push_back(chosen);
    t.select_seconds.push_back(elapsed.count());
    t.rmse.push_back(full_rmse(vae, po, x_true, p.mask, config.n_latents, rng));
  }
  return t;
}

// ---------------------------------------------------------------- timing

nlohmann::json BenchReport::to_json() const {
  return {{"sampling_mean_s", sampling.mean}, {"sampling_sd_s", sampling.sd},
          {"lookahead_mean_s", lookahead.mean}, {"lookahead_sd_s", lookahead.sd},
          {"ratio", ratio}, {"k", k}, {"unobserved", unobserved}};
}

namespace {

TimingStats stats(const std::vector<Real>& v) {
  TimingStats s;
  for (Real x : v) s.mean += x;
  s.mean /= Real(v.size());
  if (v.size() > 1) {
    Real ss = 0.0;
    for (Real x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / Real(v.size() - 1));
  }
  return s;
}

}  // namespace

BenchReport bench_acquisition(const VaeModel& vae, const PoModel& po, const LookaheadModel& la,
                              const PartialObservation& p, std::size_t k, std::size_t trials,
                              Rng& rng) {
  if (trials == 0) throw ValidationError("bench_acquisition needs at least one trial");
  check_instance(vae, po, p);
  if (p.mask.observed_count() == p.mask.dim()) throw ValidationError("bench_acquisition: nothing left to acquire");
  using clock = std::chrono::steady_clock;
  std::vector<Real> ts, tl;
  for (std::size_t t = 0; t < trials; ++t) {
    auto a = clock::now();
    greedy_step_sampling(vae, po, p, k, rng);
    auto b = clock::now();
    greedy_step_lookahead(la, p);
    auto c = clock::now();
    ts.push_back(std::chrono::duration<Real>(b - a).count());
    tl.push_back(std::chrono::duration<Real>(c - b).count());
  }
  BenchReport r;
  r.sampling = stats(ts);
  r.lookahead = stats(tl);
  r.ratio = r.sampling.mean / std::max(r.lookahead.mean, std::numeric_limits<Real>::min());
  r.k = k;
  r.unobserved = p.mask.dim() - p.mask.observed_count();
  return r;
}

LinearFit fit_linear(const std::vector<Real>& x, const std::vector<Real>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("fit_linear needs two or more (x, y) pairs");
  const auto n = Real(x.size());
  Real mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  Real sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ValidationError("fit_linear: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  Real ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real e = y[i] - f.intercept - f.slope * x[i];
    ss_res += e * e;
  }
  f.r2 = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
  return f;
}

}  // namespace pm
