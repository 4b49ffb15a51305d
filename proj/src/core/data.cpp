#include "pm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>

#include "pm/distributions.hpp"

namespace pm {

// ---------------------------------------------------------------- datasets

Matrix Dataset::rows(const std::vector<std::size_t>& idx) const {
  Matrix out(Eigen::Index(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(Eigen::Index(r)) = x.row(Eigen::Index(idx[r]));
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.x = rows(idx);
  if (!labels.empty()) {
    for (std::size_t i : idx) out.labels.push_back(labels.at(i));
  }
  out.mean = mean;
  out.stddev = stddev;
  return out;
}

Vector Dataset::standardize(const Vector& raw) const {
  return ((raw - mean).array() / stddev.array()).matrix();
}

Vector Dataset::destandardize(const Vector& standardized) const {
  return (standardized.array() * stddev.array()).matrix() + mean;
}

DatasetSplits split_dataset(const Dataset& all, const SplitFractions& fractions,
                            std::uint64_t seed, bool standardize) {
  if (all.size() == 0) throw ValidationError("cannot split an empty dataset");
  if (!(fractions.train > 0 && fractions.valid >= 0 && fractions.train + fractions.valid <= 1.0)) {
    throw ValidationError("split fractions must satisfy 0 < train, 0 <= valid, train + valid <= 1");
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t n = all.size();
  auto n_train = std::size_t(std::llround(fractions.train * Real(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n);
  auto n_valid = std::min(n - n_train, std::size_t(std::llround(fractions.valid * Real(n))));

  auto slice = [&](std::size_t b, std::size_t e) {
    return std::vector<std::size_t>(order.begin() + long(b), order.begin() + long(e));
  };
  DatasetSplits out;
  out.split_seed = seed;
  out.train = all.subset(slice(0, n_train));
  out.valid = all.subset(slice(n_train, n_train + n_valid));
  out.test = all.subset(slice(n_train + n_valid, n));

  const auto d = all.x.cols();
  Vector mean = Vector::Zero(d), sd = Vector::Ones(d);
  if (standardize) {
    mean = out.train.x.colwise().mean().transpose();
    for (Eigen::Index j = 0; j < d; ++j) {
      const Real var = (out.train.x.col(j).array() - mean[j]).square().mean();
      sd[j] = var > 0 ? std::sqrt(var) : 1.0;
    }
  }
  for (Dataset* part : {&out.train, &out.valid, &out.test}) {
    part->mean = mean;
    part->stddev = sd;
    if (standardize) {
      part->x = ((part->x.rowwise() - mean.transpose()).array().rowwise() /
                 sd.transpose().array()).matrix();
    }
  }
  return out;
}

// ---------------------------------------------------------------- tabular

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> out;
  if (delimiter == ' ' || delimiter == '\t') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

Dataset read_tabular(const std::string& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open tabular file '" + path + "'");
  std::vector<Real> values;
  std::size_t cols = 0, rows = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    auto fields = split_fields(view, delimiter);
    if (rows == 0) {
      cols = fields.size();
    } else if (fields.size() != cols) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(cols) + " fields, found " +
                            std::to_string(fields.size()));
    }
    for (std::size_t k = 0; k < fields.size(); ++k) {
      std::string_view f = fields[k];
      if (!f.empty() && f.front() == '+') f.remove_prefix(1);
      Real v = 0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw ValidationError(path + ":" + std::to_string(lineno) + ": field " +
                              std::to_string(k + 1) + " is not a finite number: '" +
                              std::string(fields[k]) + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  Dataset out;
  out.x = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), Eigen::Index(rows), Eigen::Index(cols));
  out.mean = Vector::Zero(Eigen::Index(cols));
  out.stddev = Vector::Ones(Eigen::Index(cols));
  return out;
}

void write_tabular(const std::string& path, const Matrix& x, char delimiter) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out.precision(17);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (c) out << delimiter;
      out << x(r, c);
    }
    out << '\n';
  }
}

DatasetSplits load_tabular(const std::string& path, char delimiter, bool standardize,
                           const SplitFractions& fractions, std::uint64_t seed) {
  Dataset all = read_tabular(path, delimiter);
  if (all.size() == 0) throw ValidationError("tabular file '" + path + "' has no rows");
  return split_dataset(all, fractions, seed, standardize);
}

Matrix augment_noise(const Matrix& batch, Real sigma, Rng& rng) {
  if (!(sigma >= 0)) throw ValidationError("noise sigma must be non-negative");
  if (sigma == 0) return batch;
  Matrix out = batch;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += sigma * standard_normal(rng);
  }
  return out;
}

// ---------------------------------------------------------------- idx

namespace {

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open idx file '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t big_endian_u32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

// Returns dims after validating the magic for unsigned-byte data.
std::vector<std::size_t> idx_header(const std::vector<unsigned char>& bytes, std::size_t ndims,
                                    const std::string& path) {
  if (bytes.size() < 4) throw ValidationError("idx file '" + path + "' is truncated");
  const std::uint32_t magic = big_endian_u32(bytes, 0);
  if ((magic & 0xFFFFFF00u) != 0x00000800u || (magic & 0xFF) != ndims) {
    std::ostringstream msg;
    msg << "idx file '" << path << "' has bad magic 0x" << std::hex << magic;
    throw ValidationError(msg.str());
  }
  if (bytes.size() < 4 + 4 * ndims) throw ValidationError("idx file '" + path + "' is truncated");
  std::vector<std::size_t> dims(ndims);
  std::size_t total = 1;
  for (std::size_t k = 0; k < ndims; ++k) {
    dims[k] = big_endian_u32(bytes, 4 + 4 * k);
    total *= dims[k];
  }
  if (bytes.size() < 4 + 4 * ndims + total) {
    throw ValidationError("idx file '" + path + "' is truncated: header promises " +
                          std::to_string(total) + " bytes of data");
  }
  return dims;
}

// T x S matrix of area weights for 1-D resampling.
Matrix area_weights(std::size_t side, std::size_t target) {
  Matrix w = Matrix::Zero(Eigen::Index(target), Eigen::Index(side));
  const Real scale = Real(side) / Real(target);
  for (std::size_t t = 0; t < target; ++t) {
    const Real lo = Real(t) * scale, hi = Real(t + 1) * scale;
    for (std::size_t s = std::size_t(std::floor(lo)); s < side && Real(s) < hi; ++s) {
      const Real overlap = std::min(hi, Real(s + 1)) - std::max(lo, Real(s));
      if (overlap > 0) w(Eigen::Index(t), Eigen::Index(s)) = overlap / scale;
    }
  }
  return w;
}

}  // namespace

std::vector<Real> downscale_area(const std::vector<Real>& image, std::size_t side,
                                 std::size_t target_side) {
  if (image.size() != side * side) throw ShapeError("image is not side x side");
  if (target_side == 0 || target_side > side) {
    throw ValidationError("target side must be in [1, " + std::to_string(side) + "]");
  }
  using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> img(image.data(), Eigen::Index(side), Eigen::Index(side));
  Matrix w = area_weights(side, target_side);
  RowMat out = w * img * w.transpose();
  return {out.data(), out.data() + out.size()};
}

Dataset load_idx_images(const std::string& path, std::size_t target_side,
                        std::optional<Real> binarize_threshold) {
  const auto bytes = read_all(path);
  const auto dims = idx_header(bytes, 3, path);
  const std::size_t n = dims[0], h = dims[1], w = dims[2];
  if (h != w) throw ValidationError("idx images must be square");
  const std::size_t out_dim = target_side * target_side;
  Dataset out;
  out.x = Matrix(Eigen::Index(n), Eigen::Index(out_dim));
  const std::size_t offset = 16;
  std::vector<Real> img(h * w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < h * w; ++p) img[p] = Real(bytes[offset + i * h * w + p]) / 255.0;
    auto small = downscale_area(img, h, target_side);
    for (std::size_t p = 0; p < out_dim; ++p) {
      Real v = small[p];
      if (binarize_threshold) v = v >= *binarize_threshold ? 1.0 : 0.0;
      out.x(Eigen::Index(i), Eigen::Index(p)) = v;
    }
  }
  out.mean = Vector::Zero(Eigen::Index(out_dim));
  out.stddev = Vector::Ones(Eigen::Index(out_dim));
  return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
  const auto bytes = read_all(path);
  const auto dims = idx_header(bytes, 1, path);
  std::vector<int> out(dims[0]);
  for (std::size_t i = 0; i < dims[0]; ++i) out[i] = bytes[8 + i];
  return out;
}

// ---------------------------------------------------------------- oracle

namespace {

struct GaussianBlock {
  Eigen::LLT<Matrix> llt;
  bool jittered = false;
};

GaussianBlock factor(const Matrix& cov) {
  GaussianBlock g;
  g.llt.compute(cov);
  if (g.llt.info() != Eigen::Success) {
    g.llt.compute(cov + 1e-9 * Matrix::Identity(cov.rows(), cov.cols()));
    g.jittered = true;
    if (g.llt.info() != Eigen::Success) throw NumericalError("covariance block is not positive definite");
  }
  return g;
}

Real gaussian_log_density(const Eigen::LLT<Matrix>& llt, const Vector& diff) {
  Matrix l = llt.matrixL();
  Vector u = l.triangularView<Eigen::Lower>().solve(diff);
  return -0.5 * u.squaredNorm() - l.diagonal().array().log().sum() -
         0.5 * Real(diff.size()) * kLog2Pi;
}

Vector gather(const Vector& v, const std::vector<std::size_t>& idx) {
  Vector out(Eigen::Index(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[Eigen::Index(k)] = v[Eigen::Index(idx[k])];
  return out;
}

Matrix gather(const Matrix& m, const std::vector<std::size_t>& rows,
              const std::vector<std::size_t>& cols) {
  Matrix out(Eigen::Index(rows.size()), Eigen::Index(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(Eigen::Index(i), Eigen::Index(j)) = m(Eigen::Index(rows[i]), Eigen::Index(cols[j]));
    }
  }
  return out;
}

std::size_t pick_component(const Vector& weights, Rng& rng) {
  const Real u = uniform01(rng);
  Real acc = 0.0;
  for (Eigen::Index c = 0; c < weights.size(); ++c) {
    acc += weights[c];
    if (u < acc) return std::size_t(c);
  }
  return std::size_t(weights.size() - 1);
}

}  // namespace

GmmOracle::GmmOracle(Vector weights, std::vector<Vector> means, std::vector<Matrix> covs)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covs)) {
  const auto k = std::size_t(weights_.size());
  if (k == 0 || means_.size() != k || covs_.size() != k) {
    throw ValidationError("GmmOracle needs matching weights, means, and covariances");
  }
  if ((weights_.array() < 0).any() || std::abs(weights_.sum() - 1.0) > 1e-9) {
    throw ValidationError("GmmOracle weights are not on the simplex");
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (means_[c].size() != means_[0].size() || covs_[c].rows() != means_[0].size() ||
        covs_[c].cols() != means_[0].size()) {
      throw ShapeError("GmmOracle component " + std::to_string(c) + " has inconsistent shape");
    }
    if (!covs_[c].isApprox(covs_[c].transpose(), 1e-12)) {
      throw ValidationError("GmmOracle covariance " + std::to_string(c) + " is not symmetric");
    }
    Eigen::LLT<Matrix> llt(covs_[c]);
    if (llt.info() != Eigen::Success) {
      throw ValidationError("GmmOracle covariance " + std::to_string(c) + " is not positive definite");
    }
    chols_.push_back(llt.matrixL());
  }
}

Real GmmOracle::log_marginal(const Vector& x, const std::vector<std::size_t>& observed) const {
  if (std::size_t(x.size()) != dim()) throw ShapeError("GmmOracle: dimension mismatch");
  if (observed.empty()) return 0.0;
  Vector terms(weights_.size());
  const Vector xo = gather(x, observed);
  for (std::size_t c = 0; c < components(); ++c) {
    auto block = factor(gather(covs_[c], observed, observed));
    terms[Eigen::Index(c)] = std::log(weights_[Eigen::Index(c)]) +
                             gaussian_log_density(block.llt, xo - gather(means_[c], observed));
  }
  return log_sum_exp(terms);
}

Real GmmOracle::log_prob(const Vector& x) const {
  std::vector<std::size_t> all(dim());
  std::iota(all.begin(), all.end(), 0);
  return log_marginal(x, all);
}

Vector GmmOracle::responsibilities(const Vector& x) const {
  Vector terms(weights_.size());
  for (std::size_t c = 0; c < components(); ++c) {
    Vector u = chols_[c].triangularView<Eigen::Lower>().solve(x - means_[c]);
    terms[Eigen::Index(c)] = std::log(weights_[Eigen::Index(c)]) - 0.5 * u.squaredNorm() -
                             chols_[c].diagonal().array().log().sum();
  }
  return softmax(terms);
}

Vector GmmOracle::sample(Rng& rng, int* component) const {
  const std::size_t c = pick_component(weights_, rng);
  if (component) *component = int(c);
  return means_[c] + chols_[c] * standard_normal_vector(dim(), rng);
}

nlohmann::json GmmOracle::to_json() const {
  nlohmann::json j;
  j["weights"] = std::vector<Real>(weights_.data(), weights_.data() + weights_.size());
  for (std::size_t c = 0; c < components(); ++c) {
    j["means"].push_back(std::vector<Real>(means_[c].data(), means_[c].data() + means_[c].size()));
    std::vector<std::vector<Real>> rows;
    for (Eigen::Index r = 0; r < covs_[c].rows(); ++r) {
      std::vector<Real> row(std::size_t(covs_[c].cols()));
      for (Eigen::Index k = 0; k < covs_[c].cols(); ++k) row[std::size_t(k)] = covs_[c](r, k);
      rows.push_back(std::move(row));
    }
    j["covariances"].push_back(rows);
  }
  return j;
}

GmmOracle GmmOracle::from_json(const nlohmann::json& j) {
  try {
    auto w = j.at("weights").get<std::vector<Real>>();
    Vector weights = Eigen::Map<const Vector>(w.data(), Eigen::Index(w.size()));
    std::vector<Vector> means;
    for (const auto& m : j.at("means")) {
      auto v = m.get<std::vector<Real>>();
      means.emplace_back(Eigen::Map<const Vector>(v.data(), Eigen::Index(v.size())));
    }
    std::vector<Matrix> covs;
    for (const auto& c : j.at("covariances")) {
      auto rows = c.get<std::vector<std::vector<Real>>>();
      Matrix m(Eigen::Index(rows.size()), Eigen::Index(rows.empty() ? 0 : rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != std::size_t(m.cols())) throw ValidationError("ragged covariance");
        for (std::size_t k = 0; k < rows[r].size(); ++k) m(Eigen::Index(r), Eigen::Index(k)) = rows[r][k];
      }
      covs.push_back(std::move(m));
    }
    return GmmOracle(std::move(weights), std::move(means), std::move(covs));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed oracle json: ") + e.what());
  }
}

Real ConditionalMixture::log_prob(const Vector& x_u) const {
  if (std::size_t(x_u.size()) != unobserved.size()) throw ShapeError("conditional dimension mismatch");
  if (unobserved.empty()) return 0.0;
  Vector terms(weights.size());
  for (std::size_t c = 0; c < means.size(); ++c) {
    Vector u = chols[c].triangularView<Eigen::Lower>().solve(x_u - means[c]);
    terms[Eigen::Index(c)] = std::log(weights[Eigen::Index(c)]) - 0.5 * u.squaredNorm() -
                             chols[c].diagonal().array().log().sum() -
                             0.5 * Real(x_u.size()) * kLog2Pi;
  }
  return log_sum_exp(terms);
}

Vector ConditionalMixture::mean() const {
  Vector m = Vector::Zero(Eigen::Index(unobserved.size()));
  for (std::size_t c = 0; c < means.size(); ++c) m += weights[Eigen::Index(c)] * means[c];
  return m;
}

Vector ConditionalMixture::sample(Rng& rng) const {
  const std::size_t c = pick_component(weights, rng);
  return means[c] + chols[c] * standard_normal_vector(unobserved.size(), rng);
}

ConditionalMixture oracle_conditional(const GmmOracle& oracle, const PartialObservation& p) {
  p.validate();
  if (p.mask.dim() != oracle.dim()) throw ShapeError("mask length differs from oracle dimension");
  const auto o = p.mask.observed_indices();
  ConditionalMixture out;
  out.unobserved = p.mask.unobserved_indices();
  const auto& u = out.unobserved;
  const std::size_t k = oracle.components();
  Vector log_w(static_cast<Eigen::Index>(k));
  const Vector xo = gather(p.values, o);
  for (std::size_t c = 0; c < k; ++c) {
    const Matrix& cov = oracle.cov(c);
    const Vector mu_u = gather(oracle.mean(c), u);
    Matrix s_uu = gather(cov, u, u);
    Vector cond_mean = mu_u;
    Matrix cond_cov = s_uu;
    Real log_po = 0.0;
    if (!o.empty()) {
      auto block = factor(gather(cov, o, o));
      out.jittered = out.jittered || block.jittered;
      const Vector diff = xo - gather(oracle.mean(c), o);
      log_po = gaussian_log_density(block.llt, diff);
      if (!u.empty()) {
        const Matrix s_uo = gather(cov, u, o);
        cond_mean += s_uo * block.llt.solve(diff);
        cond_cov -= s_uo * block.llt.solve(s_uo.transpose());
      }
    }
    log_w[Eigen::Index(c)] = std::log(oracle.weights()[Eigen::Index(c)]) + log_po;
    if (!u.empty()) {
      cond_cov = 0.5 * (cond_cov + cond_cov.transpose());
      auto cblock = factor(cond_cov);
      out.jittered = out.jittered || cblock.jittered;
      out.chols.push_back(cblock.llt.matrixL());
    } else {
      out.chols.emplace_back(0, 0);
    }
    out.means.push_back(std::move(cond_mean));
  }
  out.weights = softmax(log_w);
  return out;
}

Real oracle_conditional_log_prob(const GmmOracle& oracle, const Vector& x,
                                 const ObservationMask& mask) {
  ConditionalMixture mix = oracle_conditional(oracle, {x, mask});
  return mix.log_prob(gather(x, mix.unobserved));
}

// ---------------------------------------------------------------- synthetic

void GmmSpec::validate() const {
  if (components == 0 || dim == 0 || instances == 0) {
    throw ValidationError("gmm spec needs positive components, dim, and instances");
  }
  if (!(separation >= 0 && factor_scale >= 0 && noise_std > 0)) {
    throw ValidationError("gmm spec needs separation >= 0, factor_scale >= 0, noise_std > 0");
  }
}

nlohmann::json GmmSpec::to_json() const {
  return {{"components", components}, {"dim", dim},
          {"instances", instances},   {"separation", separation},
          {"factor_rank", factor_rank}, {"factor_scale", factor_scale},
          {"noise_std", noise_std},   {"equal_weights", equal_weights}};
}

GmmSpec GmmSpec::from_json(const nlohmann::json& j) {
  GmmSpec s;
  try {
    s.components = j.at("components").get<std::size_t>();
    s.dim = j.at("dim").get<std::size_t>();
    s.instances = j.at("instances").get<std::size_t>();
    s.separation = j.at("separation").get<Real>();
    s.factor_rank = j.at("factor_rank").get<std::size_t>();
    s.factor_scale = j.at("factor_scale").get<Real>();
    s.noise_std = j.at("noise_std").get<Real>();
    s.equal_weights = j.at("equal_weights").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed gmm spec: ") + e.what());
  }
  s.validate();
  return s;
}

GeneratedGmm gen_gmm(const GmmSpec& spec, Rng& rng) {
  spec.validate();
  const auto k = Eigen::Index(spec.components), d = Eigen::Index(spec.dim);
  Vector weights = Vector::Constant(k, 1.0 / Real(k));
  if (!spec.equal_weights) {
    for (Eigen::Index c = 0; c < k; ++c) weights[c] = 0.5 + uniform01(rng);
    weights /= weights.sum();
  }
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (Eigen::Index c = 0; c < k; ++c) {
    means.push_back(spec.separation * standard_normal_vector(spec.dim, rng));
    Matrix a(d, Eigen::Index(spec.factor_rank));
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      for (Eigen::Index i = 0; i < d; ++i) a(i, j) = spec.factor_scale * standard_normal(rng);
    }
    Matrix cov = a * a.transpose();
    cov.diagonal().array() += spec.noise_std * spec.noise_std;
    covs.push_back(0.5 * (cov + cov.transpose()));
  }
  GmmOracle oracle(std::move(weights), std::move(means), std::move(covs));
  Dataset data = sample_oracle(oracle, spec.instances, rng);
  return {std::move(data), std::move(oracle)};
}

Dataset sample_oracle(const GmmOracle& oracle, std::size_t n, Rng& rng) {
  Dataset data;
  data.x = Matrix(Eigen::Index(n), Eigen::Index(oracle.dim()));
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    data.x.row(Eigen::Index(i)) = oracle.sample(rng, &data.labels[i]).transpose();
  }
  data.mean = Vector::Zero(Eigen::Index(oracle.dim()));
  data.stddev = Vector::Ones(Eigen::Index(oracle.dim()));
  return data;
}

}  // namespace pm
