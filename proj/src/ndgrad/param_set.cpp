#include "pm/ndgrad/param_set.hpp"

namespace pm::ndgrad {

void ParamSet::add(std::string name, Tensor value) {
  if (index_.count(name) != 0) {
    throw ValidationError("duplicate parameter name '" + name + "'");
  }
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

bool ParamSet::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return *i;
}

Tensor& ParamSet::at(std::string_view name) { return values_[index_of(name)]; }

const Tensor& ParamSet::at(std::string_view name) const {
  return values_[index_of(name)];
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) {
    out.add(names_[i], Tensor(values_[i].rows(), values_[i].cols()));
  }
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (values_[i].shape() != other.values_[i].shape()) return false;
  }
  return true;
}

ParamSet ParamSet::subset(std::string_view prefix) const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (std::string_view(names_[i]).substr(0, prefix.size()) == prefix) {
      out.add(names_[i], values_[i]);
    }
  }
  return out;
}

void ParamSet::assign_from(const ParamSet& other) {
  for (std::size_t i = 0; i < other.size(); ++i) {
    auto k = find(other.name(i));
    if (!k) continue;
    Tensor& dst = values_[*k];
    if (dst.shape() != other.at(i).shape()) {
      throw ShapeError("parameter '" + other.name(i) + "' shape " +
                       to_string(other.at(i).shape()) + " does not match " +
                       to_string(dst.shape()));
    }
    dst = other.at(i);
  }
}

ParamSet ParamSet::merged(const ParamSet& a, const ParamSet& b) {
  ParamSet out = a;
  for (std::size_t i = 0; i < b.size(); ++i) out.add(b.name(i), b.at(i));
  return out;
}

void ParamSet::round_to_float() {
  for (auto& t : values_) {
    for (Real& v : t.storage()) v = static_cast<Real>(static_cast<float>(v));
  }
}

}  // namespace pm::ndgrad
