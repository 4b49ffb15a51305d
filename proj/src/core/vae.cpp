#include "pm/vae.hpp"

#include <cmath>

namespace pm {

using ndgrad::Graph;
using ndgrad::NodeId;
using ndgrad::ParamSet;
using ndgrad::Tensor;

DecoderKind parse_decoder_kind(const std::string& text) {
  if (text == "gaussian") return DecoderKind::gaussian;
  if (text == "bernoulli") return DecoderKind::bernoulli;
  throw ValidationError("unknown decoder kind '" + text + "'");
}

std::string to_string(DecoderKind kind) {
  return kind == DecoderKind::gaussian ? "gaussian" : "bernoulli";
}

void VaeConfig::validate() const {
  if (data_dim == 0) throw ValidationError("vae data_dim must be positive");
  if (latent_dim == 0) throw ValidationError("vae latent_dim must be positive");
  if (hidden == 0 && blocks > 0) throw ValidationError("residual blocks need hidden > 0");
}

nlohmann::json VaeConfig::to_json() const {
  return {{"data_dim", data_dim}, {"latent_dim", latent_dim}, {"hidden", hidden},
          {"blocks", blocks},     {"layer_norm", layer_norm}, {"decoder", to_string(decoder)}};
}

VaeConfig VaeConfig::from_json(const nlohmann::json& j) {
  VaeConfig c;
  try {
    c.data_dim = j.at("data_dim").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.blocks = j.at("blocks").get<std::size_t>();
    c.layer_norm = j.at("layer_norm").get<bool>();
    c.decoder = parse_decoder_kind(j.at("decoder").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed vae config: ") + e.what());
  }
  c.validate();
  return c;
}

ndgrad::MlpSpec VaeConfig::encoder_spec() const {
  return {data_dim, hidden, blocks, 2 * latent_dim, layer_norm};
}

ndgrad::MlpSpec VaeConfig::decoder_spec() const {
  return {latent_dim, hidden, blocks, data_dim, layer_norm};
}

GaussianNodes build_encoder(Graph& g, const VaeConfig& cfg, NodeId x) {
  NodeId out = ndgrad::build_mlp(g, "enc", cfg.encoder_spec(), x);
  const std::size_t l = cfg.latent_dim;
  GaussianNodes n;
  n.mean = g.slice_cols(out, 0, l);
  n.log_std = g.clamp(g.slice_cols(out, l, 2 * l), kLogStdMin, kLogStdMax);
  return n;
}

DecoderNodes build_decoder(Graph& g, const VaeConfig& cfg, NodeId z) {
  DecoderNodes n;
  n.out = ndgrad::build_mlp(g, "dec", cfg.decoder_spec(), z);
  if (cfg.decoder == DecoderKind::gaussian) {
    NodeId ls = g.clamp(g.param("dec/log_std"), kLogStdMin, kLogStdMax);
    n.log_std = g.broadcast(ls, n.out);
  }
  return n;
}

NodeId build_decoder_log_prob_elems(Graph& g, const VaeConfig& cfg, const DecoderNodes& dec,
                                    NodeId x) {
  if (cfg.decoder == DecoderKind::gaussian) {
    return sym::gaussian_log_prob_elems(g, dec.out, dec.log_std, x);
  }
  return sym::bernoulli_log_prob_elems(g, dec.out, x);
}

NodeId build_decoder_mean(Graph& g, const VaeConfig& cfg, const DecoderNodes& dec) {
  return cfg.decoder == DecoderKind::gaussian ? dec.out : g.sigmoid(dec.out);
}

void init_vae_params(ParamSet& params, const VaeConfig& cfg, Rng& rng) {
  cfg.validate();
  ndgrad::init_mlp(params, "enc", cfg.encoder_spec(), rng);
  ndgrad::init_mlp(params, "dec", cfg.decoder_spec(), rng);
  if (cfg.decoder == DecoderKind::gaussian) params.add("dec/log_std", Tensor(1, cfg.data_dim));
}

Tensor to_tensor(const Matrix& m) { return Tensor::from_matrix(m); }

Matrix to_matrix(const Tensor& t) { return t.to_matrix(); }

Tensor noise_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t(rows, cols);
  for (Real& v : t.storage()) v = standard_normal(rng);
  return t;
}

// ---------------------------------------------------------------- model

struct VaeModel::Graphs {
  Graph encoder;
  NodeId enc_mean = 0, enc_log_std = 0;
  Graph decoder;
  NodeId dec_mean = 0;
  Graph decoder_lp;
  NodeId lp_elems = 0;
};

VaeModel::VaeModel(VaeConfig config, ParamSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  auto gr = std::make_shared<Graphs>();
  {
    NodeId x = gr->encoder.input("x", config_.data_dim);
    GaussianNodes e = build_encoder(gr->encoder, config_, x);
    gr->enc_mean = e.mean;
    gr->enc_log_std = e.log_std;
  }
  {
    NodeId z = gr->decoder.input("z", config_.latent_dim);
    gr->dec_mean = build_decoder_mean(gr->decoder, config_, build_decoder(gr->decoder, config_, z));
  }
  {
    NodeId z = gr->decoder_lp.input("z", config_.latent_dim);
    NodeId x = gr->decoder_lp.input("x", config_.data_dim);
    DecoderNodes d = build_decoder(gr->decoder_lp, config_, z);
    gr->lp_elems = build_decoder_log_prob_elems(gr->decoder_lp, config_, d, x);
  }
  // Fail early on a parameter set that does not fit the configuration.
  for (const Graph* g : {&gr->encoder, &gr->decoder}) {
    for (const auto& name : g->param_names()) {
      if (!params_.contains(name)) throw ValidationError("vae parameters lack '" + name + "'");
    }
  }
  graphs_ = std::move(gr);
}

VaeModel VaeModel::init(const VaeConfig& config, Rng& rng) {
  ParamSet params;
  init_vae_params(params, config, rng);
  return VaeModel(config, std::move(params));
}

void VaeModel::encode(const Matrix& x, Matrix& mean, Matrix& log_std) const {
  std::vector<Tensor> in{to_tensor(x)};
  std::vector<NodeId> outs{graphs_->enc_mean, graphs_->enc_log_std};
  auto v = ndgrad::evaluate(graphs_->encoder, params_, in, outs);
  mean = to_matrix(v[0]);
  log_std = to_matrix(v[1]);
}

DiagGaussian VaeModel::encode(const Vector& x) const {
  Matrix m, s;
  encode(Matrix(x.transpose()), m, s);
  return {m.row(0).transpose(), s.row(0).transpose()};
}

Matrix VaeModel::decode_mean(const Matrix& z) const {
  std::vector<Tensor> in{to_tensor(z)};
  std::vector<NodeId> outs{graphs_->dec_mean};
  return to_matrix(ndgrad::evaluate(graphs_->decoder, params_, in, outs)[0]);
}

Matrix VaeModel::decoder_log_prob_elems(const Matrix& z, const Matrix& x) const {
  std::vector<Tensor> in{to_tensor(z), to_tensor(x)};
  std::vector<NodeId> outs{graphs_->lp_elems};
  return to_matrix(ndgrad::evaluate(graphs_->decoder_lp, params_, in, outs)[0]);
}

Matrix VaeModel::sample_decoder(const Matrix& z, Rng& rng) const {
  Matrix mean = decode_mean(z);
  Matrix out(mean.rows(), mean.cols());
  if (config_.decoder == DecoderKind::bernoulli) {
    for (Eigen::Index i = 0; i < mean.rows(); ++i) {
      for (Eigen::Index j = 0; j < mean.cols(); ++j) out(i, j) = uniform01(rng) < mean(i, j) ? 1.0 : 0.0;
    }
    return out;
  }
  const Tensor& ls = params_.at("dec/log_std");
  for (Eigen::Index i = 0; i < mean.rows(); ++i) {
    for (Eigen::Index j = 0; j < mean.cols(); ++j) {
      const Real s = std::exp(std::clamp(ls[std::size_t(j)], kLogStdMin, kLogStdMax));
      out(i, j) = mean(i, j) + s * standard_normal(rng);
    }
  }
  return out;
}

// ---------------------------------------------------------------- elbo

ElboNodes build_elbo_terms(Graph& g, const VaeConfig& cfg, NodeId x, const GaussianNodes& q,
                           NodeId z, NodeId beta) {
  DecoderNodes dec = build_decoder(g, cfg, z);
  ElboNodes e;
  e.recon = g.mean(g.sum_cols(build_decoder_log_prob_elems(g, cfg, dec, x)));
  e.kl = g.mean(sym::kl_to_standard(g, q.mean, q.log_std));
  e.loss = g.add(g.neg(e.recon), g.mul(beta, e.kl));
  g.set_label(e.loss, "elbo/loss");
  g.set_label(e.recon, "elbo/recon");
  g.set_label(e.kl, "elbo/kl");
  return e;
}

LossGraph build_elbo_graph(const VaeConfig& cfg) {
  LossGraph lg;
  Graph& g = lg.graph;
  NodeId x = g.input("x", cfg.data_dim);
  NodeId eps = g.input("eps", cfg.latent_dim);
  NodeId beta = g.input("beta", 1);
  GaussianNodes q = build_encoder(g, cfg, x);
  NodeId z = g.add(q.mean, g.mul(g.exp(q.log_std), eps));
  ElboNodes e = build_elbo_terms(g, cfg, x, q, z, beta);
  lg.loss = e.loss;
  lg.report("recon", e.recon);
  lg.report("kl", e.kl);
  return lg;
}

namespace {

const LossGraph& cached_elbo_graph(const VaeConfig& cfg) {
  // Small per-thread cache keyed by configuration.
  thread_local std::vector<std::pair<std::string, std::shared_ptr<LossGraph>>> cache;
  const std::string key = cfg.to_json().dump();
  for (const auto& [k, g] : cache) {
    if (k == key) return *g;
  }
  cache.emplace_back(key, std::make_shared<LossGraph>(build_elbo_graph(cfg)));
  return *cache.back().second;
}

}  // namespace

ElboParts elbo_with_noise(const Matrix& x, const VaeModel& model, Real beta, const Matrix& eps) {
  const VaeConfig& cfg = model.config();
  if (std::size_t(x.cols()) != cfg.data_dim) throw ShapeError("elbo: data dimension mismatch");
  const LossGraph& lg = cached_elbo_graph(cfg);
  std::vector<Tensor> in{to_tensor(x), to_tensor(eps), Tensor::scalar(beta)};
  std::vector<NodeId> outs{lg.loss, lg.reported[0].second, lg.reported[1].second};
  auto v = ndgrad::evaluate(lg.graph, model.params(), in, outs);
  ElboParts p{v[0].item(), v[1].item(), v[2].item()};
  if (!std::isfinite(p.recon)) throw NumericalError("elbo: reconstruction term is not finite");
  if (!std::isfinite(p.kl)) throw NumericalError("elbo: kl term is not finite");
  if (!std::isfinite(p.loss)) throw NumericalError("elbo: loss is not finite");
  return p;
}

ElboParts elbo(const Matrix& x, const VaeModel& model, Real beta, Rng& rng) {
  Matrix eps = to_matrix(noise_tensor(std::size_t(x.rows()), model.config().latent_dim, rng));
  return elbo_with_noise(x, model, beta, eps);
}

// ---------------------------------------------------------------- training

TrainedVae train_vae(const Dataset& train, const VaeConfig& config, const VaeTrainConfig& tc) {
  if (train.size() == 0) throw ValidationError("train_vae: dataset is empty");
  if (train.dim() != config.data_dim) {
    throw ValidationError("train_vae: data has " + std::to_string(train.dim()) +
                          " features, config expects " + std::to_string(config.data_dim));
  }
  if (!train.x.allFinite()) throw ValidationError("train_vae: training data must be fully observed");
  tc.beta.validate();
  Rng rng(tc.seed);
  VaeModel model = VaeModel::init(config, rng);
  OptimizerState opt = OptimizerState::for_params(model.params(), tc.adam);
  LossGraph lg = build_elbo_graph(config);
  std::vector<nlohmann::json> metrics;
  const BetaSchedule beta = tc.beta;
  auto inputs = [&](const Matrix& x, const std::vector<std::size_t>&, std::size_t step, Rng& r) {
    return std::vector<Tensor>{to_tensor(x), noise_tensor(std::size_t(x.rows()), config.latent_dim, r),
                               Tensor::scalar(beta_value(beta, step))};
  };
  auto annotate = [&](std::size_t step, nlohmann::json& rec) { rec["beta"] = beta_value(beta, step); };
  run_training(train.x, lg, model.mutable_params(), opt, rng, tc.trainer, inputs, metrics, annotate);
  return {std::move(model), std::move(opt), rng, std::move(metrics)};
}

Checkpoint make_vae_checkpoint(const TrainedVae& t, std::uint64_t seed) {
  Checkpoint c;
  c.model_kind = "vae";
  c.config = t.model.config().to_json();
  c.params = t.model.params();
  c.optimizer = t.optimizer;
  c.seed = seed;
  c.rng_state = rng_to_string(t.rng);
  c.step = t.optimizer.step;
  return c;
}

VaeModel vae_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.model_kind != "vae" && ckpt.model_kind != "vade") {
    throw ValidationError("checkpoint holds a '" + ckpt.model_kind + "' model, expected a vae");
  }
  return VaeModel(VaeConfig::from_json(ckpt.config.contains("vae") ? ckpt.config.at("vae") : ckpt.config),
                  ckpt.params);
}

}  // namespace pm
