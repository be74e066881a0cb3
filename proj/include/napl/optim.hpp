#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "napl/common.hpp"
#include "napl/tensor.hpp"

namespace napl {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Moment accumulators for one parameter group, aligned with its parameter list.
struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

struct AdamWReport {
  bool applied = true;
  std::string diagnostic;
};

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// Gradients are read from each parameter's grad buffer. If any gradient is
/// non-finite nothing is modified and the report says which tensor.
template <typename T>
AdamWReport adamw_step(std::span<BasicTensor<T>> params, OptimizerState& state, double lr,
                       const AdamWConfig& cfg) {
  require(lr > 0, "adamw_step: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  require(state.first_moment.size() == params.size(), "adamw_step: optimizer state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k].requires_grad(), "adamw_step: parameter without gradient");
    require(state.first_moment[k].size() == params[k].numel(), "adamw_step: moment shape mismatch");
    for (T g : params[k].grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        return {false, "non-finite gradient in parameter " + std::to_string(k) + " of shape " +
                           shape_str(params[k].shape())};
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].values();
    auto grads = params[k].grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i];
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
      values[i] = static_cast<T>(values[i] * decay - lr * update);
    }
  }
  return {};
}

template <typename T>
void zero_grad(std::span<BasicTensor<T>> params) {
  for (auto& p : params) p.zero_grad();
}

struct LrSchedule {
  double base_lr = 1e-3;
  std::uint64_t max_steps = 1;
  double power = 0.9;
};

inline constexpr double kLrFloor = 1e-8;

/// base_lr · (1 − step/max_steps)^power, never below kLrFloor.
inline double poly_lr(std::uint64_t step, const LrSchedule& sched) {
  require(sched.base_lr > 0 && sched.max_steps > 0 && sched.power > 0, "poly_lr: invalid schedule");
  if (step >= sched.max_steps) return std::min(kLrFloor, sched.base_lr);
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(sched.max_steps);
  return std::max(kLrFloor, sched.base_lr * std::pow(frac, sched.power));
}

}  // namespace napl
