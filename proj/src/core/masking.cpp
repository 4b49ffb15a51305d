#include "pm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

namespace pm {

ObservationMask::ObservationMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto& b : bits_) b = b ? 1 : 0;
}

ObservationMask ObservationMask::full(std::size_t d) {
  return ObservationMask(std::vector<std::uint8_t>(d, 1));
}

ObservationMask ObservationMask::none(std::size_t d) {
  return ObservationMask(std::vector<std::uint8_t>(d, 0));
}

ObservationMask ObservationMask::parse(const std::string& line) {
  std::vector<std::uint8_t> bits;
  bits.reserve(line.size());
  for (char c : line) {
    if (c != '0' && c != '1') {
      throw ValidationError(std::string("mask line contains invalid character '") + c + "'");
    }
    bits.push_back(c == '1');
  }
  return ObservationMask(std::move(bits));
}

std::size_t ObservationMask::observed_count() const {
  return std::size_t(std::count(bits_.begin(), bits_.end(), std::uint8_t(1)));
}

std::vector<std::size_t> ObservationMask::observed_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ObservationMask::unobserved_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (!bits_[i]) out.push_back(i);
  }
  return out;
}

std::string ObservationMask::to_string() const {
  std::string s(bits_.size(), '0');
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) s[i] = '1';
  }
  return s;
}

void PartialObservation::validate() const {
  if (std::size_t(values.size()) != mask.dim()) {
    throw ShapeError("partial observation has " + std::to_string(values.size()) +
                     " values but a mask of length " + std::to_string(mask.dim()));
  }
}

Vector encode_partial(const PartialObservation& p) {
  p.validate();
  const auto d = Eigen::Index(p.mask.dim());
  Vector out = Vector::Zero(2 * d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (p.mask.observed(std::size_t(i))) {
      out[i] = p.values[i];
      out[d + i] = 1.0;
    }
  }
  return out;
}

ndgrad::Tensor encode_batch(const Matrix& x, const std::vector<ObservationMask>& masks) {
  if (std::size_t(x.rows()) != masks.size()) {
    throw ShapeError("encode_batch: " + std::to_string(x.rows()) + " rows but " +
                     std::to_string(masks.size()) + " masks");
  }
  const std::size_t d = std::size_t(x.cols());
  ndgrad::Tensor out(masks.size(), 2 * d);
  for (std::size_t r = 0; r < masks.size(); ++r) {
    if (masks[r].dim() != d) throw ShapeError("encode_batch: mask length differs from data");
    for (std::size_t i = 0; i < d; ++i) {
      if (masks[r].observed(i)) {
        out(r, i) = x(Eigen::Index(r), Eigen::Index(i));
        out(r, d + i) = 1.0;
      }
    }
  }
  return out;
}

ndgrad::Tensor mask_tensor(const std::vector<ObservationMask>& masks) {
  const std::size_t d = masks.empty() ? 0 : masks[0].dim();
  ndgrad::Tensor out(masks.size(), d);
  for (std::size_t r = 0; r < masks.size(); ++r) {
    if (masks[r].dim() != d) throw ShapeError("mask_tensor: masks differ in length");
    for (std::size_t i = 0; i < d; ++i) out(r, i) = masks[r].observed(i) ? 1.0 : 0.0;
  }
  return out;
}

ObservationMask sample_mask_bernoulli(std::size_t d, Real p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("bernoulli mask probability outside [0,1]");
  std::vector<std::uint8_t> bits(d);
  for (auto& b : bits) b = uniform01(rng) < p;
  return ObservationMask(std::move(bits));
}

ObservationMask sample_mask_uniform_fraction(std::size_t d, Real lo, Real hi, Rng& rng) {
  if (!(lo >= 0.0 && hi <= 1.0)) throw ValidationError("mask fraction bounds outside [0,1]");
  if (lo > hi) throw ValidationError("mask fraction lo > hi");
  const Real f = lo + (hi - lo) * uniform01(rng);
  const auto count = std::min<std::size_t>(d, std::size_t(std::llround(f * Real(d))));
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::uint8_t> bits(d, 0);
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, d - 1);
    std::swap(idx[k], idx[pick(rng)]);
    bits[idx[k]] = 1;
  }
  return ObservationMask(std::move(bits));
}

ObservationMask MaskSampler::operator()(std::size_t d, Rng& rng) const {
  return kind == Kind::bernoulli ? sample_mask_bernoulli(d, p, rng)
                                 : sample_mask_uniform_fraction(d, lo, hi, rng);
}

void MaskSampler::validate() const {
  if (kind == Kind::bernoulli) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("mask probability outside [0,1]");
  } else if (!(lo >= 0.0 && lo <= hi && hi <= 1.0)) {
    throw ValidationError("mask fraction bounds must satisfy 0 <= lo <= hi <= 1");
  }
}

MaskSampler::Kind parse_mask_sampler_kind(const std::string& text) {
  if (text == "bernoulli") return MaskSampler::Kind::bernoulli;
  if (text == "uniform_fraction") return MaskSampler::Kind::uniform_fraction;
  throw ValidationError("unknown mask sampler '" + text + "'");
}

std::string to_string(MaskSampler::Kind kind) {
  return kind == MaskSampler::Kind::bernoulli ? "bernoulli" : "uniform_fraction";
}

void write_masks(std::ostream& out, const std::vector<ObservationMask>& masks) {
  for (const auto& m : masks) out << m.to_string() << '\n';
}

std::vector<ObservationMask> read_masks(std::istream& in, std::size_t d) {
  std::vector<ObservationMask> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ObservationMask m = ObservationMask::parse(line);
    if (m.dim() != d) {
      throw ValidationError("mask line " + std::to_string(lineno) + " has length " +
                            std::to_string(m.dim()) + ", expected " + std::to_string(d));
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace pm
