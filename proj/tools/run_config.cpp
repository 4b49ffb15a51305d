#include "run_config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"

namespace pm::cli {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& raw, const char* expected) {
  throw ValidationError("config key '" + key + "': '" + raw + "' is not " + expected);
}

std::size_t parse_size(const std::string& key, const std::string& raw) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    if (!raw.empty() && raw[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(raw, &pos);
  } catch (const std::exception&) {
    bad_value(key, raw, "a non-negative integer");
  }
  if (pos != raw.size()) bad_value(key, raw, "a non-negative integer");
  return std::size_t(v);
}

Real parse_real(const std::string& key, const std::string& raw) {
  std::size_t pos = 0;
  Real v = 0.0;
  try {
    v = std::stod(raw, &pos);
  } catch (const std::exception&) {
    bad_value(key, raw, "a number");
  }
  if (pos != raw.size() || !std::isfinite(v)) bad_value(key, raw, "a finite number");
  return v;
}

void read_optim(ConfigTable& t, const std::string& s, OptimSection& o) {
  o.trainer.steps = t.get_size(s + ".steps", o.trainer.steps);
  o.trainer.batch_size = t.get_size(s + ".batch_size", o.trainer.batch_size);
  o.trainer.noise_sigma = t.get_real(s + ".noise_sigma", o.trainer.noise_sigma);
  o.trainer.log_every = t.get_size(s + ".log_every", o.trainer.log_every);
  o.adam.base_lr = t.get_real(s + ".lr", o.adam.base_lr);
  o.adam.decay_rate = t.get_real(s + ".decay_rate", o.adam.decay_rate);
  o.adam.decay_every = t.get_size(s + ".decay_every", o.adam.decay_every);
  o.beta.kind = parse_beta_kind(t.get_string(s + ".beta_schedule", to_string(o.beta.kind)));
  o.beta.delay_steps = t.get_size(s + ".beta_delay", o.beta.delay_steps);
  o.beta.period = t.get_size(s + ".beta_period", o.beta.period);
  o.beta.final_value = t.get_real(s + ".beta_final", o.beta.final_value);
}

nlohmann::json optim_json(const OptimSection& o) {
  return {{"steps", o.trainer.steps},
          {"batch_size", o.trainer.batch_size},
          {"noise_sigma", o.trainer.noise_sigma},
          {"log_every", o.trainer.log_every},
          {"lr", o.adam.base_lr},
          {"decay_rate", o.adam.decay_rate},
          {"decay_every", o.adam.decay_every},
          {"beta_schedule", to_string(o.beta.kind)},
          {"beta_delay", o.beta.delay_steps},
          {"beta_period", o.beta.period},
          {"beta_final", o.beta.final_value}};
}

void read_masks(ConfigTable& t, const std::string& s, MaskSampler& m) {
  m.kind = parse_mask_sampler_kind(t.get_string(s + ".mask", to_string(m.kind)));
  m.p = t.get_real(s + ".mask_p", m.p);
  m.lo = t.get_real(s + ".mask_lo", m.lo);
  m.hi = t.get_real(s + ".mask_hi", m.hi);
}

nlohmann::json masks_json(const MaskSampler& m) {
  return {{"mask", to_string(m.kind)}, {"mask_p", m.p}, {"mask_lo", m.lo}, {"mask_hi", m.hi}};
}

std::string delimiter_name(const std::string& d) { return d == "\t" ? "tab" : d; }

}  // namespace

// ---------------------------------------------------------------- table

ConfigTable ConfigTable::from_stream(std::istream& in, const std::string& origin) {
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ValidationError(origin + ": " + e.what());
  }
  ConfigTable t;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!t.values_.emplace(item.fullname(), item.inputs).second) {
      throw ValidationError(origin + ": key '" + item.fullname() + "' is set twice");
    }
  }
  return t;
}

ConfigTable ConfigTable::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  return from_stream(in, "config file '" + path + "'");
}

ConfigTable ConfigTable::from_string(const std::string& text) {
  std::istringstream in(text);
  return from_stream(in, "config text");
}

const std::vector<std::string>* ConfigTable::single(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  if (it->second.size() != 1) throw ValidationError("config key '" + key + "' expects a single value");
  return &it->second;
}

std::string ConfigTable::get_string(const std::string& key, const std::string& fallback) {
  const auto* v = single(key);
  return v ? v->front() : fallback;
}

std::size_t ConfigTable::get_size(const std::string& key, std::size_t fallback) {
  const auto* v = single(key);
  return v ? parse_size(key, v->front()) : fallback;
}

std::uint64_t ConfigTable::get_u64(const std::string& key, std::uint64_t fallback) {
  return get_size(key, fallback);
}

Real ConfigTable::get_real(const std::string& key, Real fallback) {
  const auto* v = single(key);
  return v ? parse_real(key, v->front()) : fallback;
}

bool ConfigTable::get_bool(const std::string& key, bool fallback) {
  const auto* v = single(key);
  if (!v) return fallback;
  if (v->front() == "true") return true;
  if (v->front() == "false") return false;
  bad_value(key, v->front(), "true or false");
}

std::vector<Real> ConfigTable::get_reals(const std::string& key, const std::vector<Real>& fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  std::vector<Real> out;
  for (const auto& raw : it->second) out.push_back(parse_real(key, raw));
  return out;
}

std::vector<std::size_t> ConfigTable::get_sizes(const std::string& key,
                                                const std::vector<std::size_t>& fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  std::vector<std::size_t> out;
  for (const auto& raw : it->second) out.push_back(parse_size(key, raw));
  return out;
}

void ConfigTable::reject_unknown() const {
  for (const auto& [key, v] : values_) {
    if (!used_.count(key)) throw ValidationError("unknown config key '" + key + "'");
  }
}

// ---------------------------------------------------------------- run config

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.vae.latent_dim = 8;
  c.vae.hidden = 128;
  c.po.hidden = 128;
  c.po.blocks = 2;
  c.lookahead.hidden = 128;
  c.pm_masks.kind = MaskSampler::Kind::bernoulli;
  c.lookahead_masks.kind = MaskSampler::Kind::uniform_fraction;
  return c;
}

RunConfig RunConfig::parse(ConfigTable& t) {
  RunConfig c = defaults();
  c.seed = t.get_u64("run.seed", c.seed);
  c.precision = parse_precision(t.get_string("run.precision", to_string(c.precision)));

  DataSection& d = c.data;
  d.source = t.get_string("data.source", d.source);
  d.path = t.get_string("data.path", d.path);
  d.labels_path = t.get_string("data.labels_path", d.labels_path);
  d.delimiter = t.get_string("data.delimiter", d.delimiter);
  if (d.delimiter == "tab") d.delimiter = "\t";
  d.standardize = t.get_bool("data.standardize", d.standardize);
  d.split.train = t.get_real("data.train_fraction", d.split.train);
  d.split.valid = t.get_real("data.valid_fraction", d.split.valid);
  d.split_seed = t.get_u64("data.split_seed", d.split_seed);
  d.seed = t.get_u64("data.seed", d.seed);
  d.gmm.components = t.get_size("data.gmm.components", d.gmm.components);
  d.gmm.dim = t.get_size("data.gmm.dim", d.gmm.dim);
  d.gmm.instances = t.get_size("data.gmm.instances", d.gmm.instances);
  d.gmm.separation = t.get_real("data.gmm.separation", d.gmm.separation);
  d.gmm.factor_rank = t.get_size("data.gmm.factor_rank", d.gmm.factor_rank);
  d.gmm.factor_scale = t.get_real("data.gmm.factor_scale", d.gmm.factor_scale);
  d.gmm.noise_std = t.get_real("data.gmm.noise_std", d.gmm.noise_std);
  d.gmm.equal_weights = t.get_bool("data.gmm.equal_weights", d.gmm.equal_weights);
  d.image_side = t.get_size("data.image_side", d.image_side);
  d.binarize = t.get_bool("data.binarize", d.binarize);
  d.threshold = t.get_real("data.threshold", d.threshold);

  c.vae.latent_dim = t.get_size("vae.latent_dim", c.vae.latent_dim);
  c.vae.hidden = t.get_size("vae.hidden", c.vae.hidden);
  c.vae.blocks = t.get_size("vae.blocks", c.vae.blocks);
  c.vae.layer_norm = t.get_bool("vae.layer_norm", c.vae.layer_norm);
  c.vae.decoder = parse_decoder_kind(t.get_string("vae.decoder", to_string(c.vae.decoder)));
  c.clusters = t.get_size("vade.clusters", c.clusters);

  c.po.head = parse_head_kind(t.get_string("pm.head", to_string(c.po.head)));
  c.po.hidden = t.get_size("pm.hidden", c.po.hidden);
  c.po.blocks = t.get_size("pm.blocks", c.po.blocks);
  c.po.layer_norm = t.get_bool("pm.layer_norm", c.po.layer_norm);
  c.po.components = t.get_size("pm.components", c.po.components);
  c.po.cond_dim = t.get_size("pm.cond_dim", c.po.cond_dim);
  c.po.ar_hidden = t.get_size("pm.ar_hidden", c.po.ar_hidden);
  c.po.ar_blocks = t.get_size("pm.ar_blocks", c.po.ar_blocks);
  c.pm_mode.stop_gradient_on_z = t.get_bool("pm.stop_gradient", c.pm_mode.stop_gradient_on_z);
  c.pm_mode.freeze_vae = t.get_bool("pm.freeze_vae", c.pm_mode.freeze_vae);
  c.pm_mode.joint_elbo_weight = t.get_real("pm.joint_elbo_weight", c.pm_mode.joint_elbo_weight);
  read_masks(t, "pm", c.pm_masks);

  c.lookahead.hidden = t.get_size("lookahead.hidden", c.lookahead.hidden);
  c.lookahead.blocks = t.get_size("lookahead.blocks", c.lookahead.blocks);
  c.lookahead.layer_norm = t.get_bool("lookahead.layer_norm", c.lookahead.layer_norm);
  c.lookahead_samples = t.get_size("lookahead.samples", c.lookahead_samples);
  c.lookahead_subsample = t.get_size("lookahead.subsample", c.lookahead_subsample);
  read_masks(t, "lookahead", c.lookahead_masks);

  read_optim(t, "optim.vae", c.optim_vae);
  read_optim(t, "optim.pm", c.optim_pm);
  read_optim(t, "optim.lookahead", c.optim_lookahead);
  read_optim(t, "optim.vade", c.optim_vade);

  c.eval.n_samples = t.get_size("eval.n_samples", c.eval.n_samples);
  c.eval.masks = t.get_size("eval.masks", c.eval.masks);
  c.eval.instances = t.get_size("eval.instances", c.eval.instances);
  c.eval.mask_p = t.get_real("eval.mask_p", c.eval.mask_p);
  c.eval.n_latents = t.get_size("eval.n_latents", c.eval.n_latents);

  c.acquire.budget = t.get_size("acquire.budget", c.acquire.budget);
  c.acquire.samples = t.get_size("acquire.samples", c.acquire.samples);
  c.acquire.instances = t.get_size("acquire.instances", c.acquire.instances);
  c.acquire.n_latents = t.get_size("acquire.n_latents", c.acquire.n_latents);
  c.acquire.policy = parse_policy(t.get_string("acquire.policy", to_string(c.acquire.policy)));

  c.cluster.fractions = t.get_reals("cluster.fractions", c.cluster.fractions);
  c.cluster.n_samples = t.get_size("cluster.n_samples", c.cluster.n_samples);
  c.cluster.instances = t.get_size("cluster.instances", c.cluster.instances);

  c.bench.trials = t.get_size("bench.trials", c.bench.trials);
  c.bench.samples = t.get_size("bench.samples", c.bench.samples);
  c.bench.scaling_samples = t.get_sizes("bench.scaling_samples", c.bench.scaling_samples);
  c.bench.scaling_observed = t.get_reals("bench.scaling_observed", c.bench.scaling_observed);
  c.bench.scaling_trials = t.get_size("bench.scaling_trials", c.bench.scaling_trials);

  c.theorem.toys = t.get_size("theorem1.toys", c.theorem.toys);
  c.theorem.max_components = t.get_size("theorem1.max_components", c.theorem.max_components);
  c.theorem.max_unobserved = t.get_size("theorem1.max_unobserved", c.theorem.max_unobserved);
  c.theorem.thetas = t.get_size("theorem1.thetas", c.theorem.thetas);

  t.reject_unknown();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  const DataSection& d = data;
  if (d.source != "gmm" && d.source != "synthetic" && d.source != "tabular" && d.source != "idx") {
    throw ValidationError("data.source must be gmm, synthetic, tabular or idx, got '" + d.source + "'");
  }
  if (d.source != "gmm" && d.path.empty()) throw ValidationError("data.path is required for source " + d.source);
  if (d.delimiter.size() != 1) throw ValidationError("data.delimiter must be one character or 'tab'");
  if (!(d.split.train > 0.0) || d.split.valid < 0.0 || d.split.train + d.split.valid > 1.0) {
    throw ValidationError("data split fractions must satisfy 0 < train, 0 <= valid, train + valid <= 1");
  }
  if (d.source == "gmm") d.gmm.validate();
  if (d.image_side == 0) throw ValidationError("data.image_side must be positive");
  if (clusters < 1) throw ValidationError("vade.clusters must be at least 1");
  pm_mode.validate();
  pm_masks.validate();
  lookahead_masks.validate();
  if (lookahead_samples == 0 || lookahead_subsample == 0) {
    throw ValidationError("lookahead.samples and lookahead.subsample must be positive");
  }
  for (const OptimSection* o : {&optim_vae, &optim_pm, &optim_lookahead, &optim_vade}) {
    o->trainer.validate();
    o->adam.validate();
    o->beta.validate();
  }
  if (eval.n_samples == 0 || eval.masks == 0 || eval.n_latents == 0) {
    throw ValidationError("eval.n_samples, eval.masks and eval.n_latents must be positive");
  }
  if (!(eval.mask_p >= 0.0 && eval.mask_p <= 1.0)) throw ValidationError("eval.mask_p must lie in [0, 1]");
  if (acquire.samples == 0 || acquire.n_latents == 0 || acquire.instances == 0) {
    throw ValidationError("acquire.samples, acquire.n_latents and acquire.instances must be positive");
  }
  if (cluster.fractions.empty() || cluster.n_samples == 0) {
    throw ValidationError("cluster.fractions must be non-empty and cluster.n_samples positive");
  }
  for (Real f : cluster.fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("cluster.fractions entries must lie in [0, 1]");
  }
  if (bench.trials == 0 || bench.samples == 0 || bench.scaling_trials == 0) {
    throw ValidationError("bench trial and sample counts must be positive");
  }
  for (Real f : bench.scaling_observed) {
    if (!(f >= 0.0 && f < 1.0)) throw ValidationError("bench.scaling_observed entries must lie in [0, 1)");
  }
  if (theorem.toys == 0) throw ValidationError("theorem1.toys must be positive");
  Theorem1Toy probe;
  probe.components = theorem.max_components;
  probe.unobserved = theorem.max_unobserved;
  probe.thetas = theorem.thetas;
  probe.validate();
}

nlohmann::json RunConfig::to_json() const {
  const DataSection& d = data;
  nlohmann::json j;
  j["run"] = {{"seed", seed}, {"precision", to_string(precision)}};
  j["data"] = {{"source", d.source},
               {"path", d.path},
               {"labels_path", d.labels_path},
               {"delimiter", delimiter_name(d.delimiter)},
               {"standardize", d.standardize},
               {"train_fraction", d.split.train},
               {"valid_fraction", d.split.valid},
               {"split_seed", d.split_seed},
               {"seed", d.seed},
               {"gmm", d.gmm.to_json()},
               {"image_side", d.image_side},
               {"binarize", d.binarize},
               {"threshold", d.threshold}};
  j["vae"] = {{"latent_dim", vae.latent_dim},
              {"hidden", vae.hidden},
              {"blocks", vae.blocks},
              {"layer_norm", vae.layer_norm},
              {"decoder", to_string(vae.decoder)}};
  j["vade"] = {{"clusters", clusters}};
  nlohmann::json pm = {{"head", to_string(po.head)},
                       {"hidden", po.hidden},
                       {"blocks", po.blocks},
                       {"layer_norm", po.layer_norm},
                       {"components", po.components},
                       {"cond_dim", po.cond_dim},
                       {"ar_hidden", po.ar_hidden},
                       {"ar_blocks", po.ar_blocks},
                       {"stop_gradient", pm_mode.stop_gradient_on_z},
                       {"freeze_vae", pm_mode.freeze_vae},
                       {"joint_elbo_weight", pm_mode.joint_elbo_weight}};
  pm.update(masks_json(pm_masks));
  j["pm"] = pm;
  nlohmann::json la = {{"hidden", lookahead.hidden},
                       {"blocks", lookahead.blocks},
                       {"layer_norm", lookahead.layer_norm},
                       {"samples", lookahead_samples},
                       {"subsample", lookahead_subsample}};
  la.update(masks_json(lookahead_masks));
  j["lookahead"] = la;
  j["optim"] = {{"vae", optim_json(optim_vae)},
                {"pm", optim_json(optim_pm)},
                {"lookahead", optim_json(optim_lookahead)},
                {"vade", optim_json(optim_vade)}};
  j["eval"] = {{"n_samples", eval.n_samples},
               {"masks", eval.masks},
               {"instances", eval.instances},
               {"mask_p", eval.mask_p},
               {"n_latents", eval.n_latents}};
  j["acquire"] = {{"budget", acquire.budget},
                  {"samples", acquire.samples},
                  {"instances", acquire.instances},
                  {"n_latents", acquire.n_latents},
                  {"policy", to_string(acquire.policy)}};
  j["cluster"] = {{"fractions", cluster.fractions},
                  {"n_samples", cluster.n_samples},
                  {"instances", cluster.instances}};
  j["bench"] = {{"trials", bench.trials},
                {"samples", bench.samples},
                {"scaling_samples", bench.scaling_samples},
                {"scaling_observed", bench.scaling_observed},
                {"scaling_trials", bench.scaling_trials}};
  j["theorem1"] = {{"toys", theorem.toys},
                   {"max_components", theorem.max_components},
                   {"max_unobserved", theorem.max_unobserved},
                   {"thetas", theorem.thetas}};
  return j;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c = RunConfig::defaults();
    c.validate();
    return c;
  }
  ConfigTable t = ConfigTable::from_file(path);
  return RunConfig::parse(t);
}

}  // namespace pm::cli
