#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pm/ndgrad/tensor.hpp"

namespace pm::ndgrad {

// Named parameter tensors in a fixed declaration order. Order is the
// serialization order, so it must be stable.
class ParamSet {
 public:
  ParamSet() = default;

  // Throws ValidationError on duplicate names.
  void add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::size_t i) { return values_[i]; }
  const Tensor& at(std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::size_t scalar_count() const;
  const std::vector<std::string>& names() const { return names_; }

  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;

  // Entries whose name starts with `prefix`, in order.
  ParamSet subset(std::string_view prefix) const;
  // Overwrites entries of this set with same-named entries from `other`;
  // names this set lacks are ignored.
  void assign_from(const ParamSet& other);
  // Concatenation; names must not collide.
  static ParamSet merged(const ParamSet& a, const ParamSet& b);

  void round_to_float();

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace pm::ndgrad
