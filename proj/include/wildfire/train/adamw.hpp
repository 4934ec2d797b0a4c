#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wildfire/autodiff/tensor.hpp"

namespace wildfire::train {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("AdamW betas must lie in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("AdamW eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("AdamW weight_decay must be non-negative");
  }
};

/// First and second moments per parameter plus the shared step count.
template <class T>
struct AdamWState {
  std::vector<std::vector<T>> m, v;
  std::uint64_t step = 0;
};

/// One AdamW update with decoupled weight decay:
///   p <- p - lr·wd·p
///   m <- b1·m + (1-b1)·g,  v <- b2·v + (1-b2)·g²
///   p <- p - lr·(m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
/// Throws if any parameter has no gradient.
template <class T>
void adamw_step(std::vector<ad::Tensor<T>>& params, AdamWState<T>& state, double lr, const AdamWConfig& cfg) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("AdamW state holds " + std::to_string(state.m.size()) + " tensors for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel())
      throw ShapeError("AdamW state of parameter " + std::to_string(i) + " has the wrong size");
    if (!params[i].has_grad()) throw Error("AdamW: parameter " + std::to_string(i) + " has no gradient");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t)), c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T rate = static_cast<T>(lr), decay = static_cast<T>(lr * cfg.weight_decay), eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    const auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      T x = p[k] - decay * p[k];
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      p[k] = x - rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

/// Optimizer bound to a fixed parameter list.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<ad::Tensor<T>> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : params_) {
      state_.m.emplace_back(p.numel(), T(0));
      state_.v.emplace_back(p.numel(), T(0));
    }
  }

  void step(double lr) { adamw_step(params_, state_, lr, cfg_); }
  void zero_grad() {
    for (auto& p : params_) p.clear_grad();
  }

  const AdamWState<T>& state() const { return state_; }
  AdamWState<T>& mutable_state() { return state_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<ad::Tensor<T>>& params() const { return params_; }

 private:
  std::vector<ad::Tensor<T>> params_;
  AdamWConfig cfg_;
  AdamWState<T> state_;
};

}  // namespace wildfire::train
