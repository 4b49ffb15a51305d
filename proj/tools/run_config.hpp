#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "pm/acquisition.hpp"
#include "pm/clustering.hpp"
#include "pm/data.hpp"

namespace pm::cli {

// Flat view of a TOML-style file: "section.key" -> raw values. Typed reads
// record which keys were used so the rest can be rejected.
class ConfigTable {
 public:
  static ConfigTable from_file(const std::string& path);
  static ConfigTable from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  Real get_real(const std::string& key, Real fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<Real> get_reals(const std::string& key, const std::vector<Real>& fallback);
  std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback);

  // Throws ValidationError naming the first key nobody read.
  void reject_unknown() const;

 private:
  static ConfigTable from_stream(std::istream& in, const std::string& origin);
  const std::vector<std::string>* single(const std::string& key);

  std::map<std::string, std::vector<std::string>> values_;
  std::set<std::string> used_;
};

struct OptimSection {
  TrainerConfig trainer;
  AdamConfig adam;
  BetaSchedule beta;
};

struct DataSection {
  // gmm: generate in-process; synthetic: a gen-synthetic output directory;
  // tabular: delimited file; idx: image file (+ optional labels).
  std::string source = "gmm";
  std::string path;
  std::string labels_path;
  std::string delimiter = ",";
  bool standardize = false;
  SplitFractions split;
  std::uint64_t split_seed = 0;
  std::uint64_t seed = 0;  // gmm generation
  GmmSpec gmm;
  std::size_t image_side = 16;
  bool binarize = true;
  Real threshold = 0.5;
};

struct EvalSection {
  std::size_t n_samples = 1000;  // importance samples per estimate
  std::size_t masks = 5;
  std::size_t instances = 0;     // 0 = whole test split
  Real mask_p = 0.5;
  std::size_t n_latents = kDefaultImputationLatents;
};

struct AcquireSection {
  std::size_t budget = 10;
  std::size_t samples = 16;
  std::size_t instances = 50;
  std::size_t n_latents = kDefaultImputationLatents;
  AcquisitionPolicy policy = AcquisitionPolicy::sampling;
};

struct ClusterSection {
  std::vector<Real> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::size_t n_samples = kDefaultClusterSamples;
  std::size_t instances = 0;
};

struct BenchSection {
  std::size_t trials = 5;
  std::size_t samples = 16;
  std::vector<std::size_t> scaling_samples{2, 4, 8, 16};
  std::vector<Real> scaling_observed{0.0, 0.25, 0.5, 0.75};
  std::size_t scaling_trials = 3;
};

struct TheoremSection {
  std::size_t toys = 20;
  std::size_t max_components = 16;
  std::size_t max_unobserved = 4;
  std::size_t thetas = 10;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  DataSection data;
  VaeConfig vae;             // data_dim filled from the data
  std::size_t clusters = 10; // vade
  PoConfig po;
  PmTrainMode pm_mode;
  MaskSampler pm_masks;
  LookaheadConfig lookahead;
  std::size_t lookahead_samples = 16;
  std::size_t lookahead_subsample = 32;
  MaskSampler lookahead_masks;
  OptimSection optim_vae, optim_pm, optim_lookahead, optim_vade;
  EvalSection eval;
  AcquireSection acquire;
  ClusterSection cluster;
  BenchSection bench;
  TheoremSection theorem;

  // Defaults for every field; unknown keys are an error.
  static RunConfig parse(ConfigTable& table);
  static RunConfig defaults();
  void validate() const;
  nlohmann::json to_json() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace pm::cli
