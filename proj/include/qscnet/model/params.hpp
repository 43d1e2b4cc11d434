#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "qscnet/autograd/var.hpp"
#include "qscnet/core/rng.hpp"

namespace qscnet::model {

/// Flat, name-ordered table of parameter tensors (checkpoint payload).
template <typename T>
using NamedTensors = std::map<std::string, Tensor<T>>;

/// Owns the trainable leaves of a model, keyed by stable hierarchical paths
/// ("encoder.stage1.band0.down.weight").
template <typename T>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, ag::Var<T>>;

  /// Registers a leaf initialised uniformly in +-bound.
  ag::Var<T> uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    return add(name, std::move(t));
  }

  /// Registers a leaf filled with a constant.
  ag::Var<T> constant(const std::string& name, Shape shape, T value) {
    Tensor<T> t(std::move(shape));
    t.fill(value);
    return add(name, std::move(t));
  }

  ag::Var<T> add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, ag::Var<T>(std::move(value), true));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const ag::Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown parameter '" + name + "'");
    return entries_[it->second].second;
  }

  /// Registration order.
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.size();
    return n;
  }

  /// Scalars under a name prefix.
  std::size_t count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_)
      if (name.compare(0, prefix.size(), prefix) == 0) n += v.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
  }

  template <typename U = T>
  NamedTensors<U> snapshot() const {
    NamedTensors<U> out;
    for (const auto& [name, v] : entries_) out.emplace(name, v.value().template cast<U>());
    return out;
  }

  /// Overwrites every parameter from `table`; names and shapes must match
  /// exactly unless `allow_missing`, in which case absent names are kept.
  template <typename U>
  void load(const NamedTensors<U>& table, bool allow_missing = false) {
    for (auto& [name, v] : entries_) {
      auto it = table.find(name);
      if (it == table.end()) {
        if (allow_missing) continue;
        throw DataError("parameter '" + name + "' missing from table");
      }
      if (it->second.shape() != v.shape())
        throw DataError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                        ", expected " + shape_string(v.shape()));
      v.mutable_value() = it->second.template cast<T>();
    }
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace qscnet::model
