#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include <Eigen/Core>

#include "pm/checkpoint.hpp"
#include "pm/conditional_likelihood.hpp"
#include "report.hpp"

namespace pm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- data

struct LoadedData {
  DatasetSplits splits;
  std::optional<GmmOracle> oracle;
  json info;
};

std::vector<int> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open label file '" + path + "'");
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t pos = 0;
      labels.push_back(std::stoi(line, &pos));
      if (line.find_first_not_of(" \t\r", pos) != std::string::npos) throw std::invalid_argument("junk");
    } catch (const std::exception&) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": not an integer label");
    }
  }
  return labels;
}

void attach_labels(Dataset& all, std::vector<int> labels, const std::string& origin) {
  if (labels.size() != all.size()) {
    throw ValidationError(origin + " has " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(all.size()) + " instances");
  }
  all.labels = std::move(labels);
}

LoadedData load_data(const DataSection& d) {
  LoadedData out;
  Dataset all;
  if (d.source == "gmm") {
    Rng rng(d.seed);
    GeneratedGmm g = gen_gmm(d.gmm, rng);
    all = std::move(g.data);
    out.oracle = std::move(g.oracle);
  } else if (d.source == "synthetic") {
    const fs::path dir(d.path);
    all = read_tabular((dir / "data.tsv").string(), '\t');
    attach_labels(all, read_labels((dir / "labels.tsv").string()), (dir / "labels.tsv").string());
    std::ifstream in(dir / "oracle.json");
    if (!in) throw ValidationError("cannot open '" + (dir / "oracle.json").string() + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ValidationError("oracle.json: " + std::string(e.what()));
    }
    out.oracle = GmmOracle::from_json(j);
    if (out.oracle->dim() != all.dim()) throw ValidationError("oracle dimension does not match data.tsv");
  } else if (d.source == "tabular") {
    all = read_tabular(d.path, d.delimiter[0]);
    if (!d.labels_path.empty()) attach_labels(all, read_labels(d.labels_path), d.labels_path);
  } else {
    all = load_idx_images(d.path, d.image_side, d.binarize ? std::optional<Real>(d.threshold) : std::nullopt);
    if (!d.labels_path.empty()) attach_labels(all, load_idx_labels(d.labels_path), d.labels_path);
  }
  if (all.size() == 0) throw ValidationError("dataset is empty");
  out.splits = split_dataset(all, d.split, d.split_seed, d.standardize);
  out.info = {{"source", d.source},
              {"instances", all.size()},
              {"dim", all.dim()},
              {"train", out.splits.train.size()},
              {"valid", out.splits.valid.size()},
              {"test", out.splits.test.size()},
              {"split_seed", d.split_seed},
              {"standardized", d.standardize}};
  return out;
}

std::size_t take(std::size_t configured, const Dataset& split, const char* what) {
  if (split.size() == 0) throw ValidationError(std::string(what) + " split is empty");
  return configured == 0 ? split.size() : std::min(configured, split.size());
}

// The generating mixture lives in raw units; models see standardized data.
// Densities pick up the Jacobian sum_u log sd_u.
struct OracleView {
  const GmmOracle& oracle;
  const Dataset& ref;

  Real conditional_ll(const Vector& x, const ObservationMask& mask) const {
    Real ll = oracle_conditional_log_prob(oracle, ref.destandardize(x), mask);
    for (std::size_t u : mask.unobserved_indices()) ll += std::log(ref.stddev[Eigen::Index(u)]);
    return ll;
  }

  Vector posterior_mean(const Vector& x, const ObservationMask& mask) const {
    ConditionalMixture cm = oracle_conditional(oracle, {ref.destandardize(x), mask});
    Vector m = cm.mean();
    Vector out = x;
    for (std::size_t k = 0; k < cm.unobserved.size(); ++k) {
      const auto u = Eigen::Index(cm.unobserved[k]);
      out[u] = (m[Eigen::Index(k)] - ref.mean[u]) / ref.stddev[u];
    }
    return out;
  }
};

// Bernoulli masks redrawn until at least one feature is hidden.
ObservationMask draw_eval_mask(std::size_t d, Real p, Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    ObservationMask m = sample_mask_bernoulli(d, p, rng);
    if (m.observed_count() < d) return m;
  }
  throw ValidationError("eval.mask_p leaves no unobserved features to evaluate");
}

Real rmse_on(const Vector& truth, const Vector& estimate, const ObservationMask& mask) {
  SquaredError se;
  se.add(truth, estimate, mask);
  return se.rmse();
}

// ---------------------------------------------------------------- checkpoints

struct LoadedCheckpoint {
  Checkpoint ckpt;
  std::string path;
  std::string digest;
};

class CheckpointSet {
 public:
  explicit CheckpointSet(const std::vector<std::string>& paths) {
    for (const auto& path : paths) {
      if (!checkpoint_exists(path)) throw ValidationError("checkpoint '" + path + "' not found");
      LoadedCheckpoint lc{load_checkpoint(path), path, checkpoint_digest(path)};
      const std::string kind = lc.ckpt.model_kind;
      if (!by_kind_.emplace(kind, std::move(lc)).second) {
        throw ValidationError("two " + kind + " checkpoints given");
      }
    }
  }

  const LoadedCheckpoint* find(const std::string& kind) const {
    auto it = by_kind_.find(kind);
    return it == by_kind_.end() ? nullptr : &it->second;
  }

  const LoadedCheckpoint& require(const std::string& kind) const {
    const auto* lc = find(kind);
    if (!lc) throw ValidationError("this command needs a " + kind + " checkpoint (--checkpoint)");
    return *lc;
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& [kind, lc] : by_kind_) {
      arr.push_back({{"kind", kind}, {"path", lc.path}, {"digest", lc.digest}, {"step", lc.ckpt.step}});
    }
    return arr;
  }

 private:
  std::map<std::string, LoadedCheckpoint> by_kind_;
};

void check_link(const LoadedCheckpoint& child, const char* key, const LoadedCheckpoint& parent) {
  const json& links = child.ckpt.links;
  if (!links.contains(key) || links[key] != parent.digest) {
    throw ValidationError("checkpoint '" + child.path + "' was not trained against '" + parent.path + "'");
  }
}

// The generative model under a partially observed encoder: a plain VAE or
// the VAE inside a mixture-prior model.
struct BaseModel {
  const LoadedCheckpoint* source = nullptr;
  std::optional<VadeModel> vade;
  std::optional<VaeModel> plain;
  std::optional<GmmPrior> prior;

  const VaeModel& vae() const { return vade ? vade->vae() : *plain; }
  const GmmPrior* prior_ptr() const { return prior ? &*prior : nullptr; }
};

BaseModel load_base(const CheckpointSet& set) {
  const auto* vae = set.find("vae");
  const auto* vade = set.find("vade");
  if (vae && vade) throw ValidationError("give either a vae or a vade checkpoint, not both");
  if (!vae && !vade) throw ValidationError("this command needs a vae or vade checkpoint (--checkpoint)");
  BaseModel b;
  if (vade) {
    b.source = vade;
    b.vade = vade_from_checkpoint(vade->ckpt);
    b.prior = b.vade->prior();
  } else {
    b.source = vae;
    b.plain = vae_from_checkpoint(vae->ckpt);
  }
  return b;
}

PoModel load_po(const CheckpointSet& set, const BaseModel& base, const LoadedCheckpoint** source = nullptr) {
  const auto& lc = set.require("po");
  check_link(lc, "vae_digest", *base.source);
  if (source) *source = &lc;
  return po_from_checkpoint(lc.ckpt);
}

void check_dim(const VaeModel& vae, const LoadedData& data) {
  if (vae.config().data_dim != data.splits.train.dim()) {
    throw ValidationError("model expects " + std::to_string(vae.config().data_dim) +
                          " features, data has " + std::to_string(data.splits.train.dim()));
  }
}

// ---------------------------------------------------------------- manifest

json versions() {
  std::ostringstream eigen, nl;
  eigen << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION;
  nl << NLOHMANN_JSON_VERSION_MAJOR << '.' << NLOHMANN_JSON_VERSION_MINOR << '.' << NLOHMANN_JSON_VERSION_PATCH;
  return {{"program", kProgramVersion},
          {"checkpoint_format", kCheckpointFormatVersion},
          {"eigen", eigen.str()},
          {"nlohmann_json", nl.str()},
          {"cli11", CLI11_VERSION}};
}

json manifest_for(const Invocation& inv, const CheckpointSet* inputs) {
  const RunConfig& c = inv.config;
  return {{"command", inv.command},
          {"args", inv.args},
          {"config", c.to_json()},
          {"seeds", {{"run", c.seed}, {"data", c.data.seed}, {"split", c.data.split_seed}}},
          {"inputs", inputs ? inputs->to_json() : json::array()},
          {"outputs", json::array()},
          {"versions", versions()}};
}

void add_output(json& manifest, const RunOutput& out, const std::string& name) {
  manifest["outputs"].push_back({{"name", name}, {"digest", checkpoint_digest(out.checkpoint_prefix(name))}});
}

TrainerConfig trainer(const OptimSection& o, Precision p) {
  TrainerConfig t = o.trainer;
  t.precision = p;
  return t;
}

// On divergence the last logged parameters are kept as <name>_last_good.
template <class F>
auto keep_last_good(const RunOutput& out, const std::string& name, const std::string& kind,
                    const json& config, std::uint64_t seed, F&& body) {
  try {
    return body();
  } catch (const DivergenceError& e) {
    Checkpoint c;
    c.model_kind = kind;
    c.config = config;
    c.params = e.last_good();
    c.seed = seed;
    c.step = e.step();
    save_checkpoint(c, out.checkpoint_prefix(name + "_last_good"));
    throw;
  }
}

Table summary_table(const std::vector<std::pair<std::string, json>>& entries) {
  Table t{{"metric", "value"}, {}};
  for (const auto& [k, v] : entries) t.rows.push_back({k, v});
  return t;
}

void write_training_outputs(const RunOutput& out, const std::vector<json>& metrics) {
  out.write_metrics(metrics);
  out.write_table("train_loss", aggregate_mean(metrics, "step", "loss"));
}

// ---------------------------------------------------------------- commands

void gen_synthetic(const Invocation& inv) {
  const RunConfig& c = inv.config;
  RunOutput out(inv.out);
  const std::uint64_t seed = inv.seed_given ? c.seed : c.data.seed;
  Rng rng(seed);
  GeneratedGmm g = gen_gmm(c.data.gmm, rng);
  write_tabular(out.path("data.tsv"), g.data.x, '\t');
  std::string labels;
  for (int l : g.data.labels) labels += std::to_string(l) + "\n";
  out.write_text("labels.tsv", labels);
  out.write_text("oracle.json", g.oracle.to_json().dump(2) + "\n");
  out.write_text("spec.json", c.data.gmm.to_json().dump(2) + "\n");

  std::vector<std::size_t> counts(g.oracle.components(), 0);
  for (int l : g.data.labels) ++counts.at(std::size_t(l));
  std::vector<json> records;
  Table t{{"component", "count"}, {}};
  for (std::size_t k = 0; k < counts.size(); ++k) {
    records.push_back({{"component", k}, {"weight", g.oracle.weights()[Eigen::Index(k)]}, {"count", counts[k]}});
    t.rows.push_back({k, counts[k]});
  }
  out.write_metrics(records);
  out.write_table("components", t);
  json m = manifest_for(inv, nullptr);
  m["seeds"]["generation"] = seed;
  out.write_manifest(m);
}

void train_vae_cmd(const Invocation& inv) {
  RunConfig c = inv.config;
  RunOutput out(inv.out);
  LoadedData data = load_data(c.data);
  c.vae.data_dim = data.splits.train.dim();
  VaeTrainConfig tc{trainer(c.optim_vae, c.precision), c.optim_vae.adam, c.optim_vae.beta, c.seed};
  TrainedVae t = keep_last_good(out, "vae", "vae", c.vae.to_json(), c.seed,
                                [&] { return train_vae(data.splits.train, c.vae, tc); });
  save_checkpoint(make_vae_checkpoint(t, c.seed), out.checkpoint_prefix("vae"));
  write_training_outputs(out, t.metrics);

  std::vector<std::pair<std::string, json>> summary{{"final_loss", t.metrics.back()["loss"]}};
  if (data.splits.valid.size() > 0) {
    Rng rng(c.seed);
    ElboParts e = elbo(data.splits.valid.x, t.model, 1.0, rng);
    summary.push_back({"valid_elbo", -e.loss});
    if (data.oracle) {
      Real ll = 0.0;
      const ObservationMask none = ObservationMask::none(data.splits.valid.dim());
      const OracleView view{*data.oracle, data.splits.train};
      for (std::size_t i = 0; i < data.splits.valid.size(); ++i) {
        ll += view.conditional_ll(data.splits.valid.instance(i), none);
      }
      summary.push_back({"valid_oracle_ll", ll / Real(data.splits.valid.size())});
    }
  }
  out.write_table("summary", summary_table(summary));
  json m = manifest_for(inv, nullptr);
  m["data"] = data.info;
  add_output(m, out, "vae");
  out.write_manifest(m);
}

void train_pm_cmd(const Invocation& inv) {
  RunConfig c = inv.config;
  CheckpointSet inputs(inv.checkpoints);
  BaseModel base = load_base(inputs);
  RunOutput out(inv.out);
  LoadedData data = load_data(c.data);
  check_dim(base.vae(), data);
  c.po.data_dim = base.vae().config().data_dim;
  c.po.latent_dim = base.vae().config().latent_dim;
  PmTrainConfig pc{trainer(c.optim_pm, c.precision), c.optim_pm.adam, c.optim_pm.beta,
                   c.pm_masks, c.pm_mode, c.seed};
  ElboFragment fragment = base.vade ? vade_elbo_fragment(base.vade->config()) : ElboFragment{};
  TrainedPm t = keep_last_good(out, "po", "po", c.po.to_json(), c.seed, [&] {
    return train_pm(data.splits.train, base.vae(), c.po, pc, fragment);
  });

  json m = manifest_for(inv, &inputs);
  m["data"] = data.info;
  std::string vae_digest = base.source->digest;
  if (!c.pm_mode.freeze_vae) {
    // Joint training moved the generative model; the encoder is linked to
    // the updated copy.
    OptimizerState opt = restrict_optimizer(t.optimizer, t.vae.params());
    if (base.vade) {
      TrainedVade tv{VadeModel(base.vade->config(), t.vae.params()), opt, t.rng, {}};
      save_checkpoint(make_vade_checkpoint(tv, c.seed), out.checkpoint_prefix("vade"));
      add_output(m, out, "vade");
    } else {
      TrainedVae tv{t.vae, opt, t.rng, {}};
      save_checkpoint(make_vae_checkpoint(tv, c.seed), out.checkpoint_prefix("vae"));
      add_output(m, out, "vae");
    }
    vae_digest = m["outputs"].back()["digest"].get<std::string>();
  }
  save_checkpoint(make_po_checkpoint(t, c.seed, vae_digest), out.checkpoint_prefix("po"));
  add_output(m, out, "po");
  write_training_outputs(out, t.metrics);

  std::vector<std::pair<std::string, json>> summary{{"final_loss", t.metrics.back()["loss"]}};
  if (data.splits.valid.size() > 0) {
    Rng rng(c.seed);
    std::vector<ObservationMask> masks;
    for (std::size_t i = 0; i < data.splits.valid.size(); ++i) {
      masks.push_back(c.pm_masks(data.splits.valid.dim(), rng));
    }
    summary.push_back({"valid_pm_loss", pm_loss(data.splits.valid.x, masks, t.vae, t.po, rng)});
  }
  out.write_table("summary", summary_table(summary));
  out.write_manifest(m);
}

void train_lookahead_cmd(const Invocation& inv) {
  RunConfig c = inv.config;
  CheckpointSet inputs(inv.checkpoints);
  BaseModel base = load_base(inputs);
  const LoadedCheckpoint* po_src = nullptr;
  PoModel po = load_po(inputs, base, &po_src);
  RunOutput out(inv.out);
  LoadedData data = load_data(c.data);
  check_dim(base.vae(), data);
  c.lookahead.data_dim = base.vae().config().data_dim;
  c.lookahead.latent_dim = base.vae().config().latent_dim;
  LookaheadTrainConfig lc{trainer(c.optim_lookahead, c.precision), c.optim_lookahead.adam,
                          c.lookahead_masks, c.lookahead_samples, c.lookahead_subsample, c.seed};
  TrainedLookahead t = keep_last_good(out, "lookahead", "lookahead", c.lookahead.to_json(), c.seed, [&] {
    return train_lookahead(data.splits.train, base.vae(), po, c.lookahead, lc);
  });
  save_checkpoint(make_lookahead_checkpoint(t, c.seed, po_src->digest), out.checkpoint_prefix("lookahead"));
  write_training_outputs(out, t.metrics);

  std::vector<std::pair<std::string, json>> summary{{"final_loss", t.metrics.back()["loss"]}};
  if (data.splits.valid.size() > 0) {
    Rng rng(c.seed);
    std::vector<ObservationMask> masks;
    for (std::size_t i = 0; i < data.splits.valid.size(); ++i) {
      masks.push_back(c.lookahead_masks(data.splits.valid.dim(), rng));
    }
    summary.push_back({"valid_lookahead_loss",
                       lookahead_loss(base.vae(), po, t.model, data.splits.valid.x, masks,
                                      c.lookahead_samples, c.lookahead_subsample, rng)});
  }
  out.write_table("summary", summary_table(summary));
  json m = manifest_for(inv, &inputs);
  m["data"] = data.info;
  add_output(m, out, "lookahead");
  out.write_manifest(m);
}

void train_vade_cmd(const Invocation& inv) {
  RunConfig c = inv.config;
  RunOutput out(inv.out);
  LoadedData data = load_data(c.data);
  c.vae.data_dim = data.splits.train.dim();
  VadeConfig vc{c.vae, c.clusters};
  VaeTrainConfig tc{trainer(c.optim_vade, c.precision), c.optim_vade.adam, c.optim_vade.beta, c.seed};
  TrainedVade t = keep_last_good(out, "vade", "vade", vc.to_json(), c.seed,
                                 [&] { return train_vade(data.splits.train, vc, tc); });
  save_checkpoint(make_vade_checkpoint(t, c.seed), out.checkpoint_prefix("vade"));
  write_training_outputs(out, t.metrics);

  std::vector<std::pair<std::string, json>> summary{{"final_loss", t.metrics.back()["loss"]}};
  if (data.splits.valid.size() > 0) {
    Rng rng(c.seed);
    summary.push_back({"valid_elbo", -vade_elbo(data.splits.valid.x, t.model, 1.0, rng).loss});
  }
  const Dataset& test = data.splits.test;
  if (test.size() > 0 && !test.labels.empty()) {
    Rng rng(c.seed);
    std::vector<int> pred;
    for (std::size_t i = 0; i < test.size(); ++i) {
      pred.push_back(predict_cluster(cluster_posterior_full(t.model, test.instance(i), c.cluster.n_samples, rng)));
    }
    summary.push_back({"test_accuracy", clustering_accuracy(pred, test.labels)});
  }
  out.write_table("summary", summary_table(summary));
  json m = manifest_for(inv, nullptr);
  m["data"] = data.info;
  add_output(m, out, "vade");
  out.write_manifest(m);
}

struct EvalPair {
  std::size_t instance = 0;
  std::size_t mask_id = 0;
  ObservationMask mask;
};

// Masks for the first n test instances, drawn before any model sampling so
// the protocol is fixed by the seed alone.
std::vector<EvalPair> eval_pairs(const RunConfig& c, std::size_t n, std::size_t d) {
  Rng rng(c.seed);
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < c.eval.masks; ++m) pairs.push_back({i, m, draw_eval_mask(d, c.eval.mask_p, rng)});
  }
  return pairs;
}

void write_pair_masks(const RunOutput& out, const std::vector<EvalPair>& pairs) {
  std::ostringstream s;
  std::vector<ObservationMask> masks;
  for (const auto& p : pairs) masks.push_back(p.mask);
  write_masks(s, masks);
  out.write_text("masks.txt", s.str());
}

void eval_likelihood_cmd(const Invocation& inv) {
  const RunConfig& c = inv.config;
  CheckpointSet inputs(inv.checkpoints);
  BaseModel base = load_base(inputs);
  PoModel po = load_po(inputs, base);
  RunOutput out(inv.out);
  LoadedData data = load_data(c.data);
  check_dim(base.vae(), data);
  const Dataset& test = data.splits.test;
  const std::size_t n = take(c.eval.instances, test, "test");
  const auto pairs = eval_pairs(c, n, test.dim());
  write_pair_masks(out, pairs);

  Rng rng(c.seed + 1);
  std::vector<json> records, comparisons;
  Real gap = 0.0, oracle_nrmse = 0.0, zero_nrmse = 0.0, oracle_ll = 0.0;
  std::size_t degenerate = 0;
  for (const auto& pr : pairs) {
    const Vector x = test.instance(pr.instance);
    LikelihoodEstimate est = conditional_ll(base.vae(), po, x, pr.mask, c.eval.n_samples, rng, base.prior_ptr());
    Imputation imp = impute(base.vae(), po, {x, pr.mask}, c.eval.n_latents, rng);
    EvalRecord r{pr.instance, pr.mask_id, est.value, est.standard_error, rmse_on(x, imp.point, pr.mask)};
    records.push_back(r.to_json());
    if (est.degenerate) ++degenerate;

    json cmp = {{"instance_id", pr.instance}, {"mask_id", pr.mask_id}};
    const Real zero = rmse_on(x, zero_impute_baseline(base.vae(), {x, pr.mask}), pr.mask);
    cmp["zero_nrmse"] = zero;
    zero_nrmse += zero;
    if (data.oracle) {
      const OracleView view{*data.oracle, data.splits.train};
      const Real oll = view.conditional_ll(x, pr.mask);
      const Real onr = rmse_on(x, view.posterior_mean(x, pr.mask), pr.mask);
      cmp["oracle_ll"] = oll;
      cmp["oracle_nrmse"] = onr;
      oracle_ll += oll;
      gap += std::abs(est.value - oll);
      oracle_nrmse += onr;
    }
    comparisons.push_back(cmp);
  }
  out.write_metrics(records);
  out.write_jsonl("comparisons.jsonl", comparisons);
  out.write_table("ll_by_mask", aggregate_mean(records, "mask_id", "conditional_ll"));
  out.write_table("nrmse_by_mask", aggregate_mean(records, "mask_id", "nrmse"));

  const Real count = Real(pairs.size());
  Real ll_sum = 0.0;
  for (const auto& r : records) ll_sum += r["conditional_ll"].get<Real>();
  std::vector<std::pair<std::string, json>> summary{{"pairs", pairs.size()},
                                                    {"mean_conditional_ll", ll_sum / count},
                                                    {"mean_nrmse", mean_nrmse(records)},
                                                    {"zero_baseline_nrmse", zero_nrmse / count},
                                                    {"degenerate_estimates", degenerate}};
  if (data.oracle) {
    summary.push_back({"oracle_conditional_ll", oracle_ll / count});
    summary.push_back({"mean_abs_ll_gap", gap / count});
    summary.push_back({"oracle_nrmse", oracle_nrmse / count});
  }
  out.write_table("summary", summary_table(summary));
  json m = manifest_for(inv, &inputs);
  m["data"] = data.info;
  out.write_manifest(m);
}

void impute_cmd(const Invocation& inv) {
  const RunConfig& c = inv.config;
  CheckpointSet inputs(inv.checkpoints);
  BaseModel base = load_base(inputs);
  PoModel po = load_po(inputs, base);
  RunOutput out(inv.out);
  LoadedData data = load_data(c.data);
  check_dim(base.vae(), data);
  const Dataset& test = data.splits.test;
  const std::size_t n = take(c.eval.instances, test, "test");
  const auto pairs = eval_pairs(c, n, test.dim());
  write_pair_masks(out, pairs);

  Table imputed{{"instance_id", "mask_id", "mask"}, {}};
  for (std::size_t j = 0; j < test.dim(); ++j) imputed.columns.push_back("x" + std::to_string(j));
  Rng rng(c.seed + 1);
  std::vector<json> records;
  for (const auto& pr : pairs) {
    const Vector x = test.instance(pr.instance);
    Imputation imp = impute(base.vae(), po, {x, pr.mask}, c.eval.n_latents, rng);
    const Real zero = rmse_on(x, zero_impute_baseline(base.vae(), {x, pr.mask}), pr.mask);
    records.push_back({{"instance_id", pr.instance},
                       {"mask_id", pr.mask_id},
                       {"nrmse", rmse_on(x, imp.point, pr.mask)},
                       {"zero_nrmse", zero}});
    std::vector<json> row{pr.instance, pr.mask_id, pr.mask.to_string()};
    for (Eigen::Index j = 0; j < imp.point.size(); ++j) row.push_back(imp.point[j]);
    imputed.rows.push_back(std::move(row));
  }
  out.write_metrics(records);
  out.write_table("imputations", imputed);
  Real zero_sum = 0.0;
  for (const auto& r : records) zero_sum += r["zero_nrmse"].get<Real>();
  out.write_table("summary", summary_table({{"pairs", pairs.size()},
                                            {"mean_nrmse", mean_nrmse(records)},
                                            {"zero_baseline_nrmse", zero_sum / Real(records.size())}}));
  json m = manifest_for(inv, &inputs);
  m["data"] = data.info;
  out.write_manifest(m);
}

void acquire_cmd(const Invocation& inv) {
  const RunConfig& c = inv.config;
  CheckpointSet inputs(inv.checkpoints);
  BaseModel base = load_base(inputs);
  const LoadedCheckpoint* po_src = nullptr;
  PoModel po = load_po(inputs, base, &po_src);
  std::optional<LookaheadModel> la;
  if (c.acquire.policy == AcquisitionPolicy::lookahead) {
    const auto& lc = inputs.require("lookahead");
    check_link(lc, "po_digest", *po_src);
    la = lookahead_from_checkpoint(lc.ckpt);
  }
  RunOutput out(inv.out);
  LoadedData data = load_data(c.data);
  check_dim(base.vae(), data);
  const Dataset& test = data.splits.test;
  const std::size_t n = take(c.acquire.instances, test, "test");
  const EpisodeConfig ec{c.acquire.budget, c.acquire.policy, c.acquire.n_latents, c.acquire.samples};

  Rng rng(c.seed);
  std::vector<json> metrics, timed;
  for (std::size_t i = 0; i < n; ++i) {
    AcquisitionTrajectory tr = run_episode(base.vae(), po, la ? &*la : nullptr, test.instance(i),
                                           ObservationMask::none(test.dim()), ec, rng);
    for (json r : tr.records(i)) {
      timed.push_back(r);
      r.erase("select_seconds");
      metrics.push_back(std::move(r));
    }
  }
  // Wall-clock timings are kept apart so metrics.jsonl is reproducible.
  out.write_metrics(metrics);
  out.write_jsonl("trajectories.jsonl", timed);
  out.write_table("rmse_by_step", aggregate_mean(metrics, "step", "rmse"));
  json m = manifest_for(inv, &inputs);
  m["data"] = data.info;
  out.write_manifest(m);
}

void cluster_eval_cmd(const Invocation& inv) {
  const RunConfig& c = inv.config;
  CheckpointSet inputs(inv.checkpoints);
  if (!inputs.find("vade")) throw ValidationError("cluster-eval needs a vade checkpoint (--checkpoint)");
  BaseModel base = load_base(inputs);
  PoModel po = load_po(inputs, base);
  RunOutput out(inv.out);
  LoadedData data = load_data(c.data);
  check_dim(base.vae(), data);
  const Dataset& test = data.splits.test;
  if (test.labels.empty()) throw ValidationError("cluster-eval needs labeled data");
  const std::size_t n = take(c.cluster.instances, test, "test");
  const std::vector<int> labels(test.labels.begin(), test.labels.begin() + std::ptrdiff_t(n));

  std::vector<json> records;
  for (Real f : c.cluster.fractions) {
    Rng rng(c.seed);
    std::vector<int> pred;
    for (std::size_t i = 0; i < n; ++i) {
      const ObservationMask mask = sample_mask_uniform_fraction(test.dim(), f, f, rng);
      pred.push_back(predict_cluster(
          cluster_posterior_partial(po, *base.prior, {test.instance(i), mask}, c.cluster.n_samples, rng)));
    }
    records.push_back({{"fraction", f}, {"accuracy", clustering_accuracy(pred, labels)}});
  }
  Rng rng(c.seed);
  std::vector<int> full;
  for (std::size_t i = 0; i < n; ++i) {
    full.push_back(predict_cluster(cluster_posterior_full(*base.vade, test.instance(i), c.cluster.n_samples, rng)));
  }
  out.write_metrics(records);
  out.write_table("accuracy_by_fraction", aggregate_mean(records, "fraction", "accuracy"));
  out.write_table("summary", summary_table({{"instances", n}, {"full_encoder_accuracy", clustering_accuracy(full, labels)}}));
  json m = manifest_for(inv, &inputs);
  m["data"] = data.info;
  out.write_manifest(m);
}

void bench_acquire_cmd(const Invocation& inv) {
  const RunConfig& c = inv.config;
  CheckpointSet inputs(inv.checkpoints);
  BaseModel base = load_base(inputs);
  const LoadedCheckpoint* po_src = nullptr;
  PoModel po = load_po(inputs, base, &po_src);
  const auto& lc = inputs.require("lookahead");
  check_link(lc, "po_digest", *po_src);
  LookaheadModel la = lookahead_from_checkpoint(lc.ckpt);
  RunOutput out(inv.out);
  LoadedData data = load_data(c.data);
  check_dim(base.vae(), data);
  const Dataset& test = data.splits.test;
  take(1, test, "test");
  const std::size_t d = test.dim();
  const Vector x = test.instance(0);

  Rng rng(c.seed);
  BenchReport rep = bench_acquisition(base.vae(), po, la, {x, ObservationMask::none(d)}, c.bench.samples,
                                      c.bench.trials, rng);

  // Cost of one sampling-based greedy step against k * |u|.
  std::vector<json> counts, timings;
  std::vector<Real> xs, ys;
  Table scaling{{"k", "unobserved", "k_times_unobserved", "seconds"}, {}};
  for (std::size_t k : c.bench.scaling_samples) {
    for (Real f : c.bench.scaling_observed) {
      const ObservationMask mask = sample_mask_uniform_fraction(d, f, f, rng);
      const PartialObservation p{x, mask};
      const std::size_t u = d - mask.observed_count();
      reset_acquisition_counters();
      greedy_step_sampling(base.vae(), po, p, k, rng);
      const std::size_t evals = acquisition_counters().lookahead_posteriors;
      Real total = 0.0;
      for (std::size_t t = 0; t < c.bench.scaling_trials; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        greedy_step_sampling(base.vae(), po, p, k, rng);
        total += std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0).count();
      }
      const Real secs = total / Real(c.bench.scaling_trials);
      counts.push_back({{"k", k}, {"unobserved", u}, {"posterior_evaluations", evals}});
      timings.push_back({{"k", k}, {"unobserved", u}, {"seconds", secs}});
      scaling.rows.push_back({k, u, k * u, secs});
      xs.push_back(Real(k * u));
      ys.push_back(secs);
    }
  }
  const LinearFit fit = fit_linear(xs, ys);
  json report = rep.to_json();
  report["scaling_fit"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}};
  out.write_metrics(counts);
  out.write_jsonl("timings.jsonl", timings);
  out.write_text("bench.json", report.dump(2) + "\n");
  out.write_table("scaling", scaling);
  std::cout << report.dump() << "\n";
  json m = manifest_for(inv, &inputs);
  m["data"] = data.info;
  out.write_manifest(m);
}

void verify_theorem1_cmd(const Invocation& inv) {
  const RunConfig& c = inv.config;
  const TheoremSection& ts = c.theorem;
  std::optional<RunOutput> out;
  if (!inv.out.empty()) out.emplace(inv.out);

  Rng rng(c.seed);
  std::vector<json> records;
  Real worst_var = 0.0, worst_grad = 0.0;
  for (std::size_t t = 0; t < ts.toys; ++t) {
    Theorem1Toy toy;
    const std::size_t kmin = std::min<std::size_t>(2, ts.max_components);
    toy.components = std::uniform_int_distribution<std::size_t>(kmin, ts.max_components)(rng);
    toy.unobserved = std::uniform_int_distribution<std::size_t>(1, ts.max_unobserved)(rng);
    toy.thetas = ts.thetas;
    toy.seed = rng();
    Theorem1Report r = verify_theorem1(toy);
    worst_var = std::max(worst_var, r.objective_gap_variance);
    worst_grad = std::max(worst_grad, r.gradient_max_diff);
    records.push_back({{"toy", t},
                       {"components", toy.components},
                       {"unobserved", toy.unobserved},
                       {"gap_mean", r.gap_mean},
                       {"gap_variance", r.objective_gap_variance},
                       {"gradient_max_diff", r.gradient_max_diff}});
  }
  const bool pass = worst_var < 1e-15 && worst_grad < 1e-8;
  json summary = {{"toys", ts.toys},
                  {"max_gap_variance", worst_var},
                  {"max_gradient_diff", worst_grad},
                  {"pass", pass}};
  std::cout << summary.dump() << "\n";
  if (out) {
    out->write_metrics(records);
    out->write_table("gap_variance_by_toy", aggregate_mean(records, "toy", "gap_variance"));
    out->write_table("summary", summary_table({{"max_gap_variance", worst_var},
                                               {"max_gradient_diff", worst_grad},
                                               {"pass", pass ? "true" : "false"}}));
    out->write_manifest(manifest_for(inv, nullptr));
  }
  if (!pass) throw NumericalError("objectives differ by more than a constant on some toy");
}

using Handler = void (*)(const Invocation&);

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> table{
      {"gen-synthetic", gen_synthetic},         {"train-vae", train_vae_cmd},
      {"train-pm", train_pm_cmd},               {"train-lookahead", train_lookahead_cmd},
      {"train-vade", train_vade_cmd},           {"eval-likelihood", eval_likelihood_cmd},
      {"impute", impute_cmd},                   {"acquire", acquire_cmd},
      {"cluster-eval", cluster_eval_cmd},       {"bench-acquire", bench_acquire_cmd},
      {"verify-theorem1", verify_theorem1_cmd}};
  return table;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-synthetic", "train-vae",       "train-pm",
                                              "train-lookahead", "train-vade",    "eval-likelihood",
                                              "impute",          "acquire",       "cluster-eval",
                                              "bench-acquire",   "verify-theorem1"};
  return names;
}

void execute(const Invocation& inv) {
  auto it = handlers().find(inv.command);
  if (it == handlers().end()) throw ValidationError("unknown command '" + inv.command + "'");
  it->second(inv);
}

}  // namespace pm::cli
