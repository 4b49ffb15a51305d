#include "pm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace pm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written with native little-endian floats");

using ndgrad::ParamSet;
using ndgrad::Tensor;

namespace {

std::string prefix_of(const std::string& path) {
  for (const char* ext : {".json", ".bin"}) {
    const std::string e(ext);
    if (path.size() > e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0) {
      return path.substr(0, path.size() - e.size());
    }
  }
  return path;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw ValidationError("short write to '" + path + "'");
}

void append_tensors(const ParamSet& set, const std::string& prefix, nlohmann::json& table,
                    std::string& blob) {
  for (std::size_t k = 0; k < set.size(); ++k) {
    const Tensor& t = set.at(k);
    table.push_back({{"name", prefix + set.name(k)},
                     {"shape", {t.rows(), t.cols()}},
                     {"offset", blob.size() / sizeof(float)}});
    for (Real v : t.storage()) {
      const float f = static_cast<float>(v);
      char bytes[sizeof(float)];
      std::memcpy(bytes, &f, sizeof(float));
      blob.append(bytes, sizeof(float));
    }
  }
}

Tensor read_tensor(const nlohmann::json& entry, const std::string& blob) {
  const auto rows = entry.at("shape").at(0).get<std::size_t>();
  const auto cols = entry.at("shape").at(1).get<std::size_t>();
  const auto offset = entry.at("offset").get<std::size_t>();
  if ((offset + rows * cols) * sizeof(float) > blob.size()) {
    throw ValidationError("checkpoint blob is truncated at tensor '" +
                          entry.at("name").get<std::string>() + "'");
  }
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) {
    float f;
    std::memcpy(&f, blob.data() + (offset + i) * sizeof(float), sizeof(float));
    t[i] = f;
  }
  return t;
}

nlohmann::json adam_json(const AdamConfig& c) {
  return {{"base_lr", c.base_lr}, {"decay_rate", c.decay_rate}, {"decay_every", c.decay_every},
          {"beta1", c.beta1},     {"beta2", c.beta2},           {"eps", c.eps}};
}

AdamConfig adam_from_json(const nlohmann::json& j) {
  AdamConfig c;
  c.base_lr = j.at("base_lr").get<Real>();
  c.decay_rate = j.at("decay_rate").get<Real>();
  c.decay_every = j.at("decay_every").get<std::size_t>();
  c.beta1 = j.at("beta1").get<Real>();
  c.beta2 = j.at("beta2").get<Real>();
  c.eps = j.at("eps").get<Real>();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string prefix = prefix_of(path);
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  append_tensors(ckpt.params, "", tensors, blob);
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["model_kind"] = ckpt.model_kind;
  manifest["config"] = ckpt.config;
  manifest["dtype"] = "float32-le";
  manifest["param_count"] = ckpt.params.size();
  if (ckpt.optimizer) {
    append_tensors(ckpt.optimizer->m, "adam/m/", tensors, blob);
    append_tensors(ckpt.optimizer->v, "adam/v/", tensors, blob);
    manifest["optimizer"] = {{"step", ckpt.optimizer->step},
                             {"config", adam_json(ckpt.optimizer->config)},
                             {"moment_count", ckpt.optimizer->m.size()}};
  }
  manifest["tensors"] = tensors;
  manifest["rng_seed"] = ckpt.seed;
  manifest["rng_state"] = ckpt.rng_state;
  manifest["step"] = ckpt.step;
  manifest["links"] = ckpt.links;
  write_file(prefix + ".bin", blob);
  write_file(prefix + ".json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string prefix = prefix_of(path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(prefix + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint manifest '" + prefix + ".json' is not valid JSON: " + e.what());
  }
  const std::string blob = read_file(prefix + ".bin");
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw ValidationError("unsupported checkpoint format version");
    }
    Checkpoint ckpt;
    ckpt.model_kind = manifest.at("model_kind").get<std::string>();
    ckpt.config = manifest.at("config");
    ckpt.seed = manifest.at("rng_seed").get<std::uint64_t>();
    ckpt.rng_state = manifest.at("rng_state").get<std::string>();
    ckpt.step = manifest.at("step").get<std::size_t>();
    ckpt.links = manifest.value("links", nlohmann::json::object());
    const auto& tensors = manifest.at("tensors");
    const auto n_params = manifest.at("param_count").get<std::size_t>();
    std::size_t k = 0;
    for (; k < n_params; ++k) {
      ckpt.params.add(tensors.at(k).at("name").get<std::string>(), read_tensor(tensors.at(k), blob));
    }
    if (manifest.contains("optimizer")) {
      const auto& opt = manifest.at("optimizer");
      OptimizerState state;
      state.config = adam_from_json(opt.at("config"));
      state.step = opt.at("step").get<std::size_t>();
      const auto n_moments = opt.at("moment_count").get<std::size_t>();
      for (std::size_t i = 0; i < n_moments; ++i, ++k) {
        state.m.add(tensors.at(k).at("name").get<std::string>().substr(7),
                    read_tensor(tensors.at(k), blob));
      }
      for (std::size_t i = 0; i < n_moments; ++i, ++k) {
        state.v.add(tensors.at(k).at("name").get<std::string>().substr(7),
                    read_tensor(tensors.at(k), blob));
      }
      ckpt.optimizer = std::move(state);
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint manifest '" + prefix + ".json' is malformed: " + e.what());
  }
}

bool checkpoint_exists(const std::string& path) {
  const std::string prefix = prefix_of(path);
  return std::filesystem::exists(prefix + ".json") && std::filesystem::exists(prefix + ".bin");
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) {
    ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  }
  return ss.str();
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

std::string checkpoint_digest(const std::string& path) {
  const std::string prefix = prefix_of(path);
  return sha256_hex(read_file(prefix + ".json") + read_file(prefix + ".bin"));
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Rng rng_from_string(const std::string& text) {
  Rng rng;
  std::istringstream ss(text);
  ss >> rng;
  if (!ss) throw ValidationError("malformed rng state");
  return rng;
}

}  // namespace pm
