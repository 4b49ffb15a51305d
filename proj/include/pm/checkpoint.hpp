#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "pm/common.hpp"
#include "pm/ndgrad/param_set.hpp"
#include "pm/optim.hpp"

namespace pm {

inline constexpr int kCheckpointFormatVersion = 1;

// A bundle is two files: <prefix>.json (manifest) and <prefix>.bin (tensors
// as little-endian float32 in manifest order: parameters, then Adam first
// and second moments when present).
struct Checkpoint {
  std::string model_kind;
  nlohmann::json config = nlohmann::json::object();
  ndgrad::ParamSet params;
  std::optional<OptimizerState> optimizer;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::size_t step = 0;
  nlohmann::json links = nlohmann::json::object();
};

// `path` may be the prefix or either file of the bundle.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
bool checkpoint_exists(const std::string& path);

// SHA-256 over manifest bytes followed by blob bytes, lowercase hex.
std::string checkpoint_digest(const std::string& path);
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

std::string rng_to_string(const Rng& rng);
Rng rng_from_string(const std::string& text);

}  // namespace pm
