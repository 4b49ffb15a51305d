#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "pm/common.hpp"
#include "pm/masking.hpp"

namespace pm {

// Instances are rows of `x`. `mean`/`stddev` hold the training-split
// statistics used for standardization (zero/one when not standardized).
struct Dataset {
  Matrix x;
  std::vector<int> labels;  // empty when unlabeled
  Vector mean;
  Vector stddev;

  std::size_t size() const { return std::size_t(x.rows()); }
  std::size_t dim() const { return std::size_t(x.cols()); }
  Vector instance(std::size_t i) const { return x.row(Eigen::Index(i)).transpose(); }
  Matrix rows(const std::vector<std::size_t>& idx) const;
  Dataset subset(const std::vector<std::size_t>& idx) const;

  Vector standardize(const Vector& raw) const;
  Vector destandardize(const Vector& standardized) const;
};

struct SplitFractions {
  Real train = 0.8;
  Real valid = 0.1;  // remainder goes to test
};

struct DatasetSplits {
  Dataset train;
  Dataset valid;
  Dataset test;
  std::uint64_t split_seed = 0;
};

// Seeded shuffle and split. With `standardize`, statistics come from the
// training split (population std; constant columns get std 1) and are
// applied to every split.
DatasetSplits split_dataset(const Dataset& all, const SplitFractions& fractions,
                            std::uint64_t seed, bool standardize);

// Delimited numeric text, one instance per row. Blank lines are skipped.
// Errors name the offending line.
Dataset read_tabular(const std::string& path, char delimiter);
void write_tabular(const std::string& path, const Matrix& x, char delimiter);

// Reads, splits, and optionally standardizes. A train fraction of 1 keeps
// every row in train.
DatasetSplits load_tabular(const std::string& path, char delimiter, bool standardize,
                           const SplitFractions& fractions = {}, std::uint64_t seed = 0);

Matrix augment_noise(const Matrix& batch, Real sigma, Rng& rng);

// idx3 unsigned-byte images, area-averaged to target_side x target_side with
// pixels scaled to [0, 1], optionally binarized (>= threshold -> 1).
Dataset load_idx_images(const std::string& path, std::size_t target_side,
                        std::optional<Real> binarize_threshold = 0.5);
std::vector<int> load_idx_labels(const std::string& path);
// Area-weighted resampling of a square image given row-major.
std::vector<Real> downscale_area(const std::vector<Real>& image, std::size_t side,
                                 std::size_t target_side);

// Full-covariance Gaussian mixture with exact marginals and conditionals.
class GmmOracle {
 public:
  GmmOracle(Vector weights, std::vector<Vector> means, std::vector<Matrix> covs);

  std::size_t components() const { return std::size_t(weights_.size()); }
  std::size_t dim() const { return std::size_t(means_.at(0).size()); }
  const Vector& weights() const { return weights_; }
  const Vector& mean(std::size_t c) const { return means_.at(c); }
  const Matrix& cov(std::size_t c) const { return covs_.at(c); }

  Real log_prob(const Vector& x) const;
  // log p(x_o); an empty observed set gives 0.
  Real log_marginal(const Vector& x, const std::vector<std::size_t>& observed) const;
  Vector responsibilities(const Vector& x) const;
  Vector sample(Rng& rng, int* component = nullptr) const;

  nlohmann::json to_json() const;
  static GmmOracle from_json(const nlohmann::json& j);

 private:
  Vector weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covs_;
  std::vector<Matrix> chols_;
};

// p(x_u | x_o) as a Gaussian mixture over the unobserved coordinates.
struct ConditionalMixture {
  std::vector<std::size_t> unobserved;
  Vector weights;
  std::vector<Vector> means;
  std::vector<Matrix> chols;  // lower Cholesky factors of the covariances
  bool jittered = false;      // a Sigma_oo needed the 1e-9 regularizer

  Real log_prob(const Vector& x_u) const;
  Vector mean() const;
  Vector sample(Rng& rng) const;
};

ConditionalMixture oracle_conditional(const GmmOracle& oracle, const PartialObservation& p);
// Convenience: log p(x_u | x_o) evaluated at the true unobserved values.
Real oracle_conditional_log_prob(const GmmOracle& oracle, const Vector& x,
                                 const ObservationMask& mask);

struct GmmSpec {
  std::size_t components = 3;
  std::size_t dim = 8;
  std::size_t instances = 1000;
  Real separation = 3.0;     // scale of component means
  std::size_t factor_rank = 2;
  Real factor_scale = 0.6;   // A entries ~ N(0, factor_scale^2)
  Real noise_std = 0.4;      // covariance A A^T + noise_std^2 I
  bool equal_weights = true;

  void validate() const;
  nlohmann::json to_json() const;
  static GmmSpec from_json(const nlohmann::json& j);
};

struct GeneratedGmm {
  Dataset data;  // labels are the generating components
  GmmOracle oracle;
};

GeneratedGmm gen_gmm(const GmmSpec& spec, Rng& rng);
// Draws more instances from an existing oracle.
Dataset sample_oracle(const GmmOracle& oracle, std::size_t n, Rng& rng);

}  // namespace pm
