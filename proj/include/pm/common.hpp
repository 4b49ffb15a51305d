#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace pm {

using Real = double;
using Rng = std::mt19937_64;

using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

// Base for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input, config, or file contents. Maps to CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or divergence. Maps to CLI exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Training stores parameters either at full 64-bit precision or rounded to
// 32-bit after every update. Computation itself always runs in 64-bit.
enum class Precision { f32, f64 };

Precision parse_precision(const std::string& text);
std::string to_string(Precision p);

inline Real standard_normal(Rng& rng) {
  std::normal_distribution<Real> dist(0.0, 1.0);
  return dist(rng);
}

inline Real uniform01(Rng& rng) {
  std::uniform_real_distribution<Real> dist(0.0, 1.0);
  return dist(rng);
}

}  // namespace pm
