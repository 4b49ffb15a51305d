#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pm/common.hpp"
#include "pm/ndgrad/tensor.hpp"

namespace pm {

// Bit i set means feature i is observed.
class ObservationMask {
 public:
  ObservationMask() = default;
  explicit ObservationMask(std::vector<std::uint8_t> bits);

  static ObservationMask full(std::size_t d);
  static ObservationMask none(std::size_t d);
  // Parses a line of '0'/'1' characters.
  static ObservationMask parse(const std::string& line);

  std::size_t dim() const { return bits_.size(); }
  bool observed(std::size_t i) const { return bits_.at(i) != 0; }
  void set(std::size_t i, bool value) { bits_.at(i) = value ? 1 : 0; }
  std::size_t observed_count() const;
  std::vector<std::size_t> observed_indices() const;
  std::vector<std::size_t> unobserved_indices() const;
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  std::string to_string() const;

  friend bool operator==(const ObservationMask&, const ObservationMask&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

struct PartialObservation {
  Vector values;  // full length; unobserved entries are ignored
  ObservationMask mask;

  void validate() const;
};

// (x with unobserved entries zeroed, b as 0/1), length 2d.
Vector encode_partial(const PartialObservation& p);
// Row-wise encoding of a batch: rows of x (N x d) with one mask per row.
ndgrad::Tensor encode_batch(const Matrix& x, const std::vector<ObservationMask>& masks);
// N x d tensor of 0/1 mask bits.
ndgrad::Tensor mask_tensor(const std::vector<ObservationMask>& masks);

ObservationMask sample_mask_bernoulli(std::size_t d, Real p, Rng& rng);
// Fraction f ~ U[lo, hi], then a uniform subset of exactly round(f d) indices.
ObservationMask sample_mask_uniform_fraction(std::size_t d, Real lo, Real hi, Rng& rng);

struct MaskSampler {
  enum class Kind { bernoulli, uniform_fraction };
  Kind kind = Kind::bernoulli;
  Real p = 0.5;
  Real lo = 0.0;
  Real hi = 1.0;

  ObservationMask operator()(std::size_t d, Rng& rng) const;
  void validate() const;
};

MaskSampler::Kind parse_mask_sampler_kind(const std::string& text);
std::string to_string(MaskSampler::Kind kind);

void write_masks(std::ostream& out, const std::vector<ObservationMask>& masks);
std::vector<ObservationMask> read_masks(std::istream& in, std::size_t d);

}  // namespace pm
