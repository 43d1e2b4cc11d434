#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qscnet/autograd/ops.hpp"
#include "qscnet/model/params.hpp"

namespace qscnet::training {

/// sqrt(mean((pred - target)^2)) over every element.
template <typename T>
ag::Var<T> rmse_loss(const ag::Var<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw InvalidInput("rmse_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                       shape_string(target.shape()));
  if (target.size() == 0) throw InvalidInput("rmse_loss: empty tensors");
  const auto& p = pred.value();
  double ss = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(target[i]);
    ss += d * d;
  }
  const double n = static_cast<double>(p.size());
  const double r = std::sqrt(ss / n);
  return ag::make_result<T>(Tensor<T>({1}, static_cast<T>(r)), {pred}, [target, r, n](ag::Node<T>& self) {
    if (r == 0) return;  // subgradient 0 at exact reconstruction
    const T k = static_cast<T>(static_cast<double>(self.grad[0]) / (n * r));
    auto& g = self.inputs[0]->grad_buffer();
    const auto& pv = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (pv[i] - target[i]);
  });
}

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

/// Adam with bias correction. Moments follow the store's registration
/// order.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }
  std::uint64_t steps() const { return t_; }

  /// Global gradient norm before clipping.
  double step(model::ParameterStore<T>& store) {
    const auto& entries = store.entries();
    if (m_.empty()) {
      for (const auto& [name, v] : entries) {
        m_.emplace(name, Tensor<T>(v.shape()));
        v_.emplace(name, Tensor<T>(v.shape()));
      }
    }
    double norm2 = 0;
    for (const auto& [_, v] : entries)
      for (T g : v.grad().values()) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
    const double clip = cfg_.grad_clip > 0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_)), c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (const auto& [name, var] : entries) {
      if (var.grad().empty()) continue;
      auto& m = m_.at(name);
      auto& s = v_.at(name);
      if (m.shape() != var.shape()) throw ContractError("Adam: parameter '" + name + "' changed shape");
      ag::Var<T> handle = var;
      auto& w = handle.mutable_value();
      const auto& g = var.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * clip;
        const double mi = b1 * static_cast<double>(m[i]) + (1 - b1) * gi;
        const double si = b2 * static_cast<double>(s[i]) + (1 - b2) * gi * gi;
        m[i] = static_cast<T>(mi);
        s[i] = static_cast<T>(si);
        w[i] -= static_cast<T>(cfg_.learning_rate * (mi / c1) / (std::sqrt(si / c2) + cfg_.epsilon));
      }
    }
    return norm;
  }

  const model::NamedTensors<T>& first_moments() const { return m_; }
  const model::NamedTensors<T>& second_moments() const { return v_; }

  void restore(model::NamedTensors<T> m, model::NamedTensors<T> v, std::uint64_t steps) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = steps;
  }

 private:
  AdamConfig cfg_;
  model::NamedTensors<T> m_, v_;
  std::uint64_t t_ = 0;
};

/// Shadow tables, one per decay: shadow <- d * shadow + (1 - d) * param.
template <typename T>
struct EmaState {
  std::vector<double> decays;
  std::vector<model::NamedTensors<T>> shadows;
  std::uint64_t update_count = 0;

  static EmaState from(const model::ParameterStore<T>& store, std::vector<double> decays) {
    EmaState e;
    e.decays = std::move(decays);
    for (double d : e.decays) {
      if (!(d >= 0 && d <= 1)) throw InvalidConfig("EMA decay must lie in [0, 1]");
      e.shadows.push_back(store.template snapshot<T>());
    }
    return e;
  }

  static std::string label(double decay) {
    std::ostringstream s;
    s << "ema" << decay;
    return s.str();
  }
};

template <typename T>
void ema_update(EmaState<T>& ema, const model::ParameterStore<T>& store) {
  for (std::size_t k = 0; k < ema.decays.size(); ++k) {
    const T d = static_cast<T>(ema.decays[k]);
    auto& table = ema.shadows[k];
    if (table.size() != store.entries().size()) throw ContractError("EMA shadow does not mirror the model");
    for (const auto& [name, var] : store.entries()) {
      auto it = table.find(name);
      if (it == table.end() || it->second.shape() != var.shape())
        throw ContractError("EMA shadow for '" + name + "' does not match the model");
      auto& s = it->second;
      const auto& p = var.value();
      for (std::size_t i = 0; i < s.size(); ++i) s[i] = d * s[i] + (T{1} - d) * p[i];
    }
  }
  ++ema.update_count;
}

}  // namespace qscnet::training
