#include "pm/posterior_matching.hpp"

#include <algorithm>
#include <cmath>

namespace pm {

using ndgrad::Graph;
using ndgrad::NodeId;
using ndgrad::ParamSet;
using ndgrad::Tensor;

namespace {

const Real kSoftplusOne = std::log(std::exp(1.0) - 1.0);  // softplus(kSoftplusOne) = 1

std::size_t packed_size(std::size_t l) { return l * (l - 1) / 2; }

ndgrad::MlpSpec trunk_spec(const PoConfig& c) {
  return {2 * c.data_dim, c.hidden, c.blocks, c.trunk_out(), c.layer_norm};
}

ndgrad::MlpSpec ar_spec(const PoConfig& c) {
  return {c.cond_dim + 2 * c.latent_dim, c.ar_hidden, c.ar_blocks,
          c.latent_dim * 3 * c.components, c.layer_norm};
}

// Indicator of the coordinates before i.
Tensor prefix_mask(std::size_t dim, std::size_t i) {
  Tensor m(1, dim);
  for (std::size_t j = 0; j < i; ++j) m[j] = 1.0;
  return m;
}

// Sum over coordinates of log q(z_i | cond, z_<i). Each coordinate runs the
// mixture network on its own masked copy of z, so the terms are independent.
NodeId ar_log_prob_nodes(Graph& g, const PoConfig& c, NodeId cond, NodeId z) {
  const std::size_t l = c.latent_dim, k = c.components;
  NodeId total = 0;
  for (std::size_t i = 0; i < l; ++i) {
    NodeId m = g.broadcast(g.constant(prefix_mask(l, i), "ar/mask" + std::to_string(i)), z);
    NodeId out = ndgrad::build_mlp(g, "po_ar", ar_spec(c), g.concat_cols({cond, g.mul(z, m), m}));
    NodeId block = g.slice_cols(out, 3 * k * i, 3 * k * (i + 1));
    NodeId logits = g.slice_cols(block, 0, k);
    NodeId means = g.slice_cols(block, k, 2 * k);
    NodeId log_std = g.clamp(g.slice_cols(block, 2 * k, 3 * k), kLogStdMin, kLogStdMax);
    NodeId log_w = g.sub(logits, g.broadcast(g.log_sum_exp_cols(logits), logits));
    NodeId zi = g.broadcast(g.slice_cols(z, i, i + 1), means);
    NodeId term = g.log_sum_exp_cols(g.add(log_w, sym::gaussian_log_prob_elems(g, means, log_std, zi)));
    total = i == 0 ? term : g.add(total, term);
  }
  return total;
}

}  // namespace

HeadKind parse_head_kind(const std::string& text) {
  if (text == "diag") return HeadKind::diag;
  if (text == "full_cov") return HeadKind::full_cov;
  if (text == "autoregressive" || text == "ar") return HeadKind::autoregressive;
  throw ValidationError("unknown posterior head '" + text + "'");
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::diag: return "diag";
    case HeadKind::full_cov: return "full_cov";
    case HeadKind::autoregressive: return "autoregressive";
  }
  return "?";
}

void PoConfig::validate() const {
  if (data_dim == 0 || latent_dim == 0) throw ValidationError("po config needs data_dim and latent_dim");
  if (hidden == 0 && blocks > 0) throw ValidationError("po residual blocks need hidden > 0");
  if (head == HeadKind::autoregressive) {
    if (components == 0) throw ValidationError("autoregressive head needs at least one component");
    if (cond_dim == 0) throw ValidationError("autoregressive head needs cond_dim > 0");
    if (ar_hidden == 0 && ar_blocks > 0) throw ValidationError("ar residual blocks need ar_hidden > 0");
  }
}

nlohmann::json PoConfig::to_json() const {
  return {{"data_dim", data_dim},   {"latent_dim", latent_dim}, {"head", to_string(head)},
          {"hidden", hidden},       {"blocks", blocks},         {"layer_norm", layer_norm},
          {"components", components}, {"cond_dim", cond_dim},   {"ar_hidden", ar_hidden},
          {"ar_blocks", ar_blocks}};
}

PoConfig PoConfig::from_json(const nlohmann::json& j) {
  PoConfig c;
  try {
    c.data_dim = j.at("data_dim").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.head = parse_head_kind(j.at("head").get<std::string>());
    c.hidden = j.at("hidden").get<std::size_t>();
    c.blocks = j.at("blocks").get<std::size_t>();
    c.layer_norm = j.at("layer_norm").get<bool>();
    c.components = j.at("components").get<std::size_t>();
    c.cond_dim = j.at("cond_dim").get<std::size_t>();
    c.ar_hidden = j.at("ar_hidden").get<std::size_t>();
    c.ar_blocks = j.at("ar_blocks").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed po config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t PoConfig::trunk_out() const {
  switch (head) {
    case HeadKind::diag: return 2 * latent_dim;
    case HeadKind::full_cov: return 2 * latent_dim + packed_size(latent_dim);
    case HeadKind::autoregressive: return cond_dim;
  }
  return 0;
}

PoHeadNodes build_po_head(Graph& g, const PoConfig& c, NodeId enc) {
  NodeId out = ndgrad::build_mlp(g, "po", trunk_spec(c), enc);
  const std::size_t l = c.latent_dim;
  PoHeadNodes h;
  switch (c.head) {
    case HeadKind::diag:
      h.mean = g.slice_cols(out, 0, l);
      h.log_std = g.clamp(g.slice_cols(out, l, 2 * l), kLogStdMin, kLogStdMax);
      break;
    case HeadKind::full_cov:
      h.mean = g.slice_cols(out, 0, l);
      h.diag = g.clamp(g.softplus(g.add_scalar(g.slice_cols(out, l, 2 * l), kSoftplusOne)),
                       std::exp(kLogStdMin), std::exp(kLogStdMax));
      if (l > 1) h.lower = g.slice_cols(out, 2 * l, 2 * l + packed_size(l));
      break;
    case HeadKind::autoregressive:
      h.cond = out;
      break;
  }
  return h;
}

NodeId build_po_log_prob(Graph& g, const PoConfig& c, const PoHeadNodes& h, NodeId z) {
  switch (c.head) {
    case HeadKind::diag:
      return sym::gaussian_log_prob(g, h.mean, h.log_std, z);
    case HeadKind::full_cov:
      if (c.latent_dim == 1) return sym::gaussian_log_prob(g, h.mean, g.log(h.diag), z);
      return sym::full_cov_log_prob(g, h.mean, h.diag, h.lower, z);
    case HeadKind::autoregressive:
      return ar_log_prob_nodes(g, c, h.cond, z);
  }
  throw ValidationError("unknown posterior head");
}

void init_po_params(ParamSet& params, const PoConfig& c, Rng& rng) {
  c.validate();
  if (c.head == HeadKind::autoregressive) {
    ndgrad::init_mlp(params, "po", trunk_spec(c), rng);
    ndgrad::init_mlp(params, "po_ar", ar_spec(c), rng, ndgrad::OutputInit::zero);
  } else {
    ndgrad::init_mlp(params, "po", trunk_spec(c), rng, ndgrad::OutputInit::zero);
  }
}

// ---------------------------------------------------------------- model

struct PoModel::Graphs {
  Graph trunk;
  PoHeadNodes head;
  Graph log_prob;
  NodeId lp = 0;
  Graph ar_step;  // inputs cond, masked z, mask -> raw mixture outputs
  NodeId ar_out = 0;
  Graph ar_lp;    // inputs cond, z -> log q
  NodeId ar_lp_out = 0;
};

PoModel::PoModel(PoConfig config, ParamSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const PoConfig& c = config_;
  auto gr = std::make_shared<Graphs>();
  gr->head = build_po_head(gr->trunk, c, gr->trunk.input("enc", 2 * c.data_dim));
  {
    NodeId enc = gr->log_prob.input("enc", 2 * c.data_dim);
    NodeId z = gr->log_prob.input("z", c.latent_dim);
    gr->lp = build_po_log_prob(gr->log_prob, c, build_po_head(gr->log_prob, c, enc), z);
  }
  if (c.head == HeadKind::autoregressive) {
    Graph& g = gr->ar_step;
    NodeId cond = g.input("cond", c.cond_dim);
    NodeId zin = g.input("z", c.latent_dim);
    NodeId m = g.input("mask", c.latent_dim);
    gr->ar_out = ndgrad::build_mlp(g, "po_ar", ar_spec(c), g.concat_cols({cond, zin, m}));
    NodeId cond2 = gr->ar_lp.input("cond", c.cond_dim);
    NodeId z2 = gr->ar_lp.input("z", c.latent_dim);
    gr->ar_lp_out = ar_log_prob_nodes(gr->ar_lp, c, cond2, z2);
  }
  for (const auto& name : gr->log_prob.param_names()) {
    if (!params_.contains(name)) throw ValidationError("po parameters lack '" + name + "'");
  }
  graphs_ = std::move(gr);
}

PoModel PoModel::init(const PoConfig& config, Rng& rng) {
  ParamSet params;
  init_po_params(params, config, rng);
  return PoModel(config, std::move(params));
}

std::vector<PoPosterior> PoModel::posteriors(const Tensor& enc) const {
  const PoConfig& c = config_;
  const PoHeadNodes& h = graphs_->head;
  std::vector<Tensor> in{enc};
  std::vector<NodeId> outs;
  switch (c.head) {
    case HeadKind::diag: outs = {h.mean, h.log_std}; break;
    case HeadKind::full_cov:
      outs = {h.mean, h.diag};
      if (c.latent_dim > 1) outs.push_back(h.lower);
      break;
    case HeadKind::autoregressive: outs = {h.cond}; break;
  }
  auto v = ndgrad::evaluate(graphs_->trunk, params_, in, outs);
  std::vector<PoPosterior> result(enc.rows());
  const auto l = Eigen::Index(c.latent_dim);
  for (std::size_t r = 0; r < enc.rows(); ++r) {
    PoPosterior& p = result[r];
    p.kind_ = c.head;
    p.model_ = this;
    const auto row = Eigen::Index(r);
    switch (c.head) {
      case HeadKind::diag:
        p.diag_.mean = v[0].mat().row(row).transpose();
        p.diag_.log_std = v[1].mat().row(row).transpose();
        break;
      case HeadKind::full_cov: {
        p.full_.mean = v[0].mat().row(row).transpose();
        Matrix chol = Matrix::Zero(l, l);
        for (Eigen::Index i = 0; i < l; ++i) {
          chol(i, i) = v[1].mat()(row, i);
          for (Eigen::Index j = 0; j < i; ++j) chol(i, j) = v[2].mat()(row, i * (i - 1) / 2 + j);
        }
        p.full_.chol_lower = std::move(chol);
        break;
      }
      case HeadKind::autoregressive:
        p.cond_ = v[0].mat().row(row).transpose();
        break;
    }
  }
  return result;
}

PoPosterior PoModel::posterior(const PartialObservation& p) const {
  p.validate();
  if (p.mask.dim() != config_.data_dim) throw ShapeError("partial observation has the wrong dimension");
  Tensor enc = Tensor::from_matrix(encode_partial(p).transpose());
  return posteriors(enc).front();
}

Vector PoModel::log_prob(const Tensor& enc, const Matrix& z) const {
  std::vector<Tensor> in{enc, to_tensor(z)};
  std::vector<NodeId> outs{graphs_->lp};
  return to_matrix(ndgrad::evaluate(graphs_->log_prob, params_, in, outs)[0]).col(0);
}

void PoModel::diag_params(const Tensor& enc, Matrix& mean, Matrix& log_std) const {
  if (config_.head != HeadKind::diag) throw ValidationError("diag_params needs the diagonal head");
  std::vector<Tensor> in{enc};
  std::vector<NodeId> outs{graphs_->head.mean, graphs_->head.log_std};
  auto v = ndgrad::evaluate(graphs_->trunk, params_, in, outs);
  mean = to_matrix(v[0]);
  log_std = to_matrix(v[1]);
}

Matrix PoModel::conditioning(const Tensor& enc) const {
  if (config_.head != HeadKind::autoregressive) {
    throw ValidationError("conditioning vectors exist only for the autoregressive head");
  }
  std::vector<Tensor> in{enc};
  std::vector<NodeId> outs{graphs_->head.cond};
  return to_matrix(ndgrad::evaluate(graphs_->trunk, params_, in, outs)[0]);
}

Matrix PoModel::ar_sample(const Matrix& cond, Rng& rng) const {
  const PoConfig& c = config_;
  if (c.head != HeadKind::autoregressive) throw ValidationError("ar_sample needs the autoregressive head");
  const Eigen::Index n = cond.rows();
  const auto l = Eigen::Index(c.latent_dim), k = Eigen::Index(c.components);
  Matrix z = Matrix::Zero(n, l);
  Matrix m = Matrix::Zero(n, l);
  const Tensor cond_t = to_tensor(cond);
  Vector w(k);
  // Strictly sequential: coordinate i needs z_<i.
  for (Eigen::Index i = 0; i < l; ++i) {
    std::vector<Tensor> in{cond_t, to_tensor(z.cwiseProduct(m)), to_tensor(m)};
    std::vector<NodeId> outs{graphs_->ar_out};
    const Tensor out = ndgrad::evaluate(graphs_->ar_step, params_, in, outs)[0];
    const Eigen::Index base = 3 * k * i;
    for (Eigen::Index r = 0; r < n; ++r) {
      auto row = out.mat().row(r);
      for (Eigen::Index j = 0; j < k; ++j) w[j] = row(base + j);
      w = softmax(w);
      Real u = uniform01(rng);
      Eigen::Index comp = 0;
      for (; comp + 1 < k; ++comp) {
        u -= w[comp];
        if (u < 0) break;
      }
      const Real mean = row(base + k + comp);
      const Real ls = std::clamp<Real>(row(base + 2 * k + comp), kLogStdMin, kLogStdMax);
      z(r, i) = mean + std::exp(ls) * standard_normal(rng);
    }
    m.col(i).setOnes();
  }
  return z;
}

Vector PoModel::ar_log_prob(const Matrix& cond, const Matrix& z) const {
  if (config_.head != HeadKind::autoregressive) {
    throw ValidationError("ar_log_prob needs the autoregressive head");
  }
  std::vector<Tensor> in{to_tensor(cond), to_tensor(z)};
  std::vector<NodeId> outs{graphs_->ar_lp_out};
  return to_matrix(ndgrad::evaluate(graphs_->ar_lp, params_, in, outs)[0]).col(0);
}

Matrix PoModel::sample(const Tensor& enc, Rng& rng) const {
  if (config_.head == HeadKind::autoregressive) return ar_sample(conditioning(enc), rng);
  std::vector<PoPosterior> ps = posteriors(enc);
  Matrix z(Eigen::Index(ps.size()), Eigen::Index(config_.latent_dim));
  for (std::size_t r = 0; r < ps.size(); ++r) z.row(Eigen::Index(r)) = ps[r].sample(rng).transpose();
  return z;
}

// ---------------------------------------------------------------- posterior

std::size_t PoPosterior::dim() const { return model_->config().latent_dim; }

const DiagGaussian& PoPosterior::diag() const {
  if (kind_ != HeadKind::diag) throw ValidationError("posterior is not diagonal Gaussian");
  return diag_;
}

const FullCovGaussian& PoPosterior::full_cov() const {
  if (kind_ != HeadKind::full_cov) throw ValidationError("posterior is not full-covariance Gaussian");
  return full_;
}

const Vector& PoPosterior::conditioning() const {
  if (kind_ != HeadKind::autoregressive) throw ValidationError("posterior is not autoregressive");
  return cond_;
}

Real PoPosterior::log_prob(const Vector& z) const {
  return log_prob(Matrix(z.transpose()))[0];
}

Vector PoPosterior::log_prob(const Matrix& z) const {
  if (std::size_t(z.cols()) != dim()) throw ShapeError("posterior log_prob: latent dimension mismatch");
  Vector out(z.rows());
  switch (kind_) {
    case HeadKind::diag:
      for (Eigen::Index r = 0; r < z.rows(); ++r) out[r] = pm::log_prob(diag_, Vector(z.row(r).transpose()));
      return out;
    case HeadKind::full_cov:
      for (Eigen::Index r = 0; r < z.rows(); ++r) out[r] = pm::log_prob(full_, Vector(z.row(r).transpose()));
      return out;
    case HeadKind::autoregressive:
      return model_->ar_log_prob(cond_.transpose().replicate(z.rows(), 1), z);
  }
  return out;
}

Vector PoPosterior::sample(Rng& rng) const { return sample(1, rng).row(0).transpose(); }

Matrix PoPosterior::sample(std::size_t n, Rng& rng) const {
  Matrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim()));
  switch (kind_) {
    case HeadKind::diag:
      for (Eigen::Index r = 0; r < z.rows(); ++r) z.row(r) = pm::sample(diag_, rng).transpose();
      return z;
    case HeadKind::full_cov:
      for (Eigen::Index r = 0; r < z.rows(); ++r) z.row(r) = pm::sample(full_, rng).transpose();
      return z;
    case HeadKind::autoregressive:
      return model_->ar_sample(cond_.transpose().replicate(Eigen::Index(n), 1), rng);
  }
  return z;
}

Real PoPosterior::entropy(Rng& rng, std::size_t n) const {
  switch (kind_) {
    case HeadKind::diag: return pm::entropy(diag_);
    case HeadKind::full_cov: return pm::entropy(full_);
    case HeadKind::autoregressive: {
      if (n == 0) throw ValidationError("entropy estimate needs at least one sample");
      return -log_prob(sample(n, rng)).mean();
    }
  }
  return 0.0;
}

Real ar_log_prob(const PoModel& po, const PartialObservation& p, const Vector& z) {
  if (po.config().head != HeadKind::autoregressive) {
    throw ValidationError("ar_log_prob: model head is " + to_string(po.config().head));
  }
  return po.posterior(p).log_prob(z);
}

Vector ar_sample(const PoModel& po, const PartialObservation& p, Rng& rng) {
  if (po.config().head != HeadKind::autoregressive) {
    throw ValidationError("ar_sample: model head is " + to_string(po.config().head));
  }
  return po.posterior(p).sample(rng);
}

// ---------------------------------------------------------------- loss

void PmTrainMode::validate() const {
  if (freeze_vae && !stop_gradient_on_z) {
    throw ValidationError("freeze_vae requires stop_gradient_on_z");
  }
  if (!(joint_elbo_weight >= 0)) throw ValidationError("joint_elbo_weight must be non-negative");
}

nlohmann::json PmTrainMode::to_json() const {
  return {{"stop_gradient_on_z", stop_gradient_on_z},
          {"freeze_vae", freeze_vae},
          {"joint_elbo_weight", joint_elbo_weight}};
}

PmTrainMode PmTrainMode::from_json(const nlohmann::json& j) {
  PmTrainMode m;
  try {
    m.stop_gradient_on_z = j.value("stop_gradient_on_z", m.stop_gradient_on_z);
    m.freeze_vae = j.value("freeze_vae", m.freeze_vae);
    m.joint_elbo_weight = j.value("joint_elbo_weight", m.joint_elbo_weight);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed training mode: ") + e.what());
  }
  m.validate();
  return m;
}

ElboFragment standard_elbo(const VaeConfig& cfg) {
  return [cfg](Graph& g, NodeId x, const GaussianNodes& q, NodeId z, NodeId beta) {
    return build_elbo_terms(g, cfg, x, q, z, beta);
  };
}

LossGraph build_pm_graph(const VaeConfig& vae, const PoConfig& po, const PmTrainMode& mode,
                         const ElboFragment& elbo) {
  mode.validate();
  if (vae.data_dim != po.data_dim || vae.latent_dim != po.latent_dim) {
    throw ValidationError("po config does not match the vae dimensions");
  }
  LossGraph lg;
  Graph& g = lg.graph;
  NodeId x = g.input("x", vae.data_dim);
  NodeId mask = g.input("mask", vae.data_dim);
  NodeId eps = g.input("eps", vae.latent_dim);
  NodeId beta = g.input("beta", 1);
  GaussianNodes q = build_encoder(g, vae, x);
  NodeId z = g.add(q.mean, g.mul(g.exp(q.log_std), eps));
  NodeId target = mode.stop_gradient_on_z ? g.stop_gradient(z) : z;
  NodeId enc = g.concat_cols({g.mul(x, mask), mask});
  PoHeadNodes head = build_po_head(g, po, enc);
  NodeId pm = g.neg(g.mean(build_po_log_prob(g, po, head, target)));
  g.set_label(pm, "pm/loss");
  if (mode.freeze_vae || mode.joint_elbo_weight == 0) {
    lg.loss = pm;
  } else {
    ElboNodes e = (elbo ? elbo : standard_elbo(vae))(g, x, q, z, beta);
    lg.loss = g.add(g.scale(e.loss, mode.joint_elbo_weight), pm);
    lg.report("recon", e.recon);
    lg.report("kl", e.kl);
  }
  lg.report("pm", pm);
  return lg;
}

Real pm_loss_with_noise(const Matrix& x, const std::vector<ObservationMask>& masks,
                        const VaeModel& vae, const PoModel& po, const Matrix& eps) {
  if (masks.size() != std::size_t(x.rows())) throw ShapeError("pm_loss: one mask per row is required");
  if (!x.allFinite()) throw ValidationError("pm_loss: x must be fully observed");
  PmTrainMode frozen;
  frozen.freeze_vae = true;
  LossGraph lg = build_pm_graph(vae.config(), po.config(), frozen);
  ParamSet params = ParamSet::merged(vae.params().subset("enc/"), po.params());
  std::vector<Tensor> in{to_tensor(x), mask_tensor(masks), to_tensor(eps), Tensor::scalar(0.0)};
  std::vector<NodeId> outs{lg.loss};
  const Real v = ndgrad::evaluate(lg.graph, params, in, outs)[0].item();
  if (!std::isfinite(v)) throw NumericalError("pm_loss: log q(z | x_o) is not finite");
  return v;
}

Real pm_loss(const Matrix& x, const std::vector<ObservationMask>& masks, const VaeModel& vae,
             const PoModel& po, Rng& rng) {
  Matrix eps = to_matrix(noise_tensor(std::size_t(x.rows()), vae.config().latent_dim, rng));
  return pm_loss_with_noise(x, masks, vae, po, eps);
}

// ---------------------------------------------------------------- training

OptimizerState restrict_optimizer(const OptimizerState& opt, const ParamSet& like) {
  OptimizerState out;
  out.config = opt.config;
  out.step = opt.step;
  for (std::size_t k = 0; k < opt.m.size(); ++k) {
    const std::string& name = opt.m.name(k);
    if (!like.contains(name)) continue;
    out.m.add(name, opt.m.at(k));
    out.v.add(name, opt.v.at(name));
  }
  return out;
}

TrainedPm train_pm(const Dataset& train, const VaeModel& vae, const PoConfig& po_cfg,
                   const PmTrainConfig& config, const ElboFragment& elbo) {
  if (train.size() == 0) throw ValidationError("train_pm: dataset is empty");
  if (train.dim() != vae.config().data_dim) throw ValidationError("train_pm: data dimension mismatch");
  if (!train.x.allFinite()) throw ValidationError("train_pm: training data must be fully observed");
  config.mode.validate();
  config.masks.validate();
  config.beta.validate();

  Rng rng(config.seed);
  PoModel po = PoModel::init(po_cfg, rng);
  LossGraph lg = build_pm_graph(vae.config(), po_cfg, config.mode, elbo);
  ParamSet params = ParamSet::merged(vae.params(), po.params());
  OptimizerState opt =
      OptimizerState::for_params(config.mode.freeze_vae ? po.params() : params, config.adam);

  const std::size_t d = train.dim(), l = vae.config().latent_dim;
  const MaskSampler sampler = config.masks;
  const BetaSchedule beta = config.beta;
  auto inputs = [&](const Matrix& x, const std::vector<std::size_t>&, std::size_t step, Rng& r) {
    std::vector<ObservationMask> masks;
    masks.reserve(std::size_t(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) masks.push_back(sampler(d, r));
    return std::vector<Tensor>{to_tensor(x), mask_tensor(masks),
                               noise_tensor(std::size_t(x.rows()), l, r),
                               Tensor::scalar(beta_value(beta, step))};
  };
  auto annotate = [&](std::size_t step, nlohmann::json& rec) { rec["beta"] = beta_value(beta, step); };
  std::vector<nlohmann::json> metrics;
  run_training(train.x, lg, params, opt, rng, config.trainer, inputs, metrics, annotate);

  VaeModel vae_out = vae;
  vae_out.mutable_params().assign_from(params);
  po.mutable_params().assign_from(params);
  return {std::move(vae_out), std::move(po), std::move(opt), rng, std::move(metrics)};
}

Checkpoint make_po_checkpoint(const TrainedPm& t, std::uint64_t seed, const std::string& vae_digest) {
  Checkpoint c;
  c.model_kind = "po";
  c.config = t.po.config().to_json();
  c.params = t.po.params();
  c.optimizer = restrict_optimizer(t.optimizer, t.po.params());
  c.seed = seed;
  c.rng_state = rng_to_string(t.rng);
  c.step = t.optimizer.step;
  c.links = {{"vae_digest", vae_digest}, {"head", to_string(t.po.config().head)}};
  return c;
}

PoModel po_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.model_kind != "po") {
    throw ValidationError("checkpoint holds a '" + ckpt.model_kind + "' model, expected a po encoder");
  }
  return PoModel(PoConfig::from_json(ckpt.config), ckpt.params);
}

// ---------------------------------------------------------------- theorem 1

void Theorem1Toy::validate() const {
  if (components < 1 || components > 16) {
    throw ValidationError("theorem toy needs 1 <= K <= 16 latent states to be enumerable");
  }
  if (unobserved < 1 || unobserved > 4) {
    throw ValidationError("theorem toy needs 1 <= |u| <= 4 binary unobserved features");
  }
  if (thetas < 2) throw ValidationError("theorem toy needs at least two theta draws");
  if (consistent && point_mass) {
    throw ValidationError("a consistent toy cannot also have a point-mass data distribution");
  }
}

Theorem1Tables make_theorem1_tables(const Theorem1Toy& toy, Rng& rng) {
  toy.validate();
  const auto k = Eigen::Index(toy.components);
  const Eigen::Index n = Eigen::Index(1) << toy.unobserved;
  auto random_simplex = [&](Eigen::Index size) {
    Vector v(size);
    for (Eigen::Index i = 0; i < size; ++i) v[i] = 1.5 * standard_normal(rng);
    return softmax(v);
  };
  // Factorized Bernoulli decoder over the unobserved bits.
  Matrix bit_probs(k, Eigen::Index(toy.unobserved));
  for (Eigen::Index z = 0; z < k; ++z) {
    for (Eigen::Index j = 0; j < bit_probs.cols(); ++j) bit_probs(z, j) = 0.05 + 0.9 * uniform01(rng);
  }
  Theorem1Tables t;
  t.likelihood.resize(n, k);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index z = 0; z < k; ++z) {
      Real p = 1.0;
      for (Eigen::Index j = 0; j < bit_probs.cols(); ++j) {
        p *= ((c >> j) & 1) ? bit_probs(z, j) : 1.0 - bit_probs(z, j);
      }
      t.likelihood(c, z) = p;
    }
  }
  t.q_psi.resize(n, k);
  if (toy.consistent) {
    t.prior = random_simplex(k);
    t.data = t.likelihood * t.prior;
    for (Eigen::Index c = 0; c < n; ++c) {
      t.q_psi.row(c) = t.likelihood.row(c).cwiseProduct(t.prior.transpose()) / t.data[c];
    }
  } else {
    if (toy.point_mass) {
      t.data = Vector::Zero(n);
      t.data[Eigen::Index(rng() % std::uint64_t(n))] = 1.0;
    } else {
      t.data = random_simplex(n);
    }
    for (Eigen::Index c = 0; c < n; ++c) t.q_psi.row(c) = random_simplex(k).transpose();
  }
  return t;
}

Theorem1Values theorem1_objectives(const Theorem1Tables& t, const Vector& theta_logits) {
  const auto k = std::size_t(t.q_psi.cols());
  if (std::size_t(theta_logits.size()) != k) throw ShapeError("theta has the wrong number of logits");
  Graph g;
  NodeId theta = g.param("theta");
  NodeId log_q = g.sub(theta, g.broadcast(g.log_sum_exp_cols(theta), theta));
  NodeId a = 0, b = 0, first = 0;
  bool any = false;
  for (Eigen::Index c = 0; c < t.q_psi.rows(); ++c) {
    const Real pc = t.data[c];
    if (pc == 0) continue;
    Tensor q = Tensor::from_matrix(t.q_psi.row(c));
    Tensor log_q_psi = Tensor::from_matrix(t.q_psi.row(c).array().log().matrix());
    Tensor log_lik = Tensor::from_matrix(t.likelihood.row(c).array().log().matrix());
    NodeId qn = g.constant(q), lqn = g.constant(log_q_psi), lln = g.constant(log_lik);
    // A: KL(q_psi(z|x) || q_theta(z|x_o)).
    NodeId kl_a = g.sum(g.mul(qn, g.sub(lqn, log_q)));
    // B: -log p(x_u|x_o) + KL(q_psi(z|x) || q_theta(z|x_o, x_u)).
    NodeId joint = g.add(log_q, lln);
    NodeId log_px = g.log_sum_exp_cols(joint);
    NodeId log_post = g.sub(joint, g.broadcast(log_px, joint));
    NodeId kl_b = g.sum(g.mul(qn, g.sub(lqn, log_post)));
    NodeId ta = g.scale(kl_a, pc);
    NodeId tf = g.scale(g.neg(log_px), pc);
    NodeId tb = g.add(tf, g.scale(kl_b, pc));
    a = any ? g.add(a, ta) : ta;
    b = any ? g.add(b, tb) : tb;
    first = any ? g.add(first, tf) : tf;
    any = true;
  }
  g.mark_output(first);
  ParamSet params;
  params.add("theta", Tensor::from_matrix(theta_logits.transpose()));
  ndgrad::GradientResult ga = ndgrad::gradient(g, params, {}, a);
  ndgrad::GradientResult gb = ndgrad::gradient(g, params, {}, b);
  Theorem1Values v;
  v.a = ga.value;
  v.b = gb.value;
  v.b_first_term = gb.outputs.at(0).item();
  v.grad_a = ga.grads.at("theta").to_matrix().row(0).transpose();
  v.grad_b = gb.grads.at("theta").to_matrix().row(0).transpose();
  return v;
}

nlohmann::json Theorem1Report::to_json() const {
  return {{"objective_gap_variance", objective_gap_variance},
          {"gradient_max_diff", gradient_max_diff},
          {"gap_mean", gap_mean},
          {"objective_a", objective_a},
          {"objective_b", objective_b}};
}

Theorem1Report verify_theorem1(const Theorem1Toy& toy) {
  Rng rng(toy.seed);
  Theorem1Tables t = make_theorem1_tables(toy, rng);
  Theorem1Report r;
  std::vector<Real> gaps;
  for (std::size_t s = 0; s < toy.thetas; ++s) {
    Vector theta(Eigen::Index(toy.components));
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = 2.0 * standard_normal(rng);
    Theorem1Values v = theorem1_objectives(t, theta);
    r.objective_a.push_back(v.a);
    r.objective_b.push_back(v.b);
    gaps.push_back(v.a - v.b);
    r.gradient_max_diff = std::max(r.gradient_max_diff, (v.grad_a - v.grad_b).cwiseAbs().maxCoeff());
  }
  Real mean = 0.0;
  for (Real g : gaps) mean += g;
  mean /= Real(gaps.size());
  Real var = 0.0;
  for (Real g : gaps) var += (g - mean) * (g - mean);
  r.gap_mean = mean;
  r.objective_gap_variance = var / Real(gaps.size());
  return r;
}

}  // namespace pm
