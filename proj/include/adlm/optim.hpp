// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "adlm/tensor.hpp"

namespace adlm {

struct AdamWOptions {
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for one parameter list. Slots are matched to parameters
/// by position, so the same list must be passed on every step.
struct OptimizerState {
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  AdamWOptions options;
};

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// Parameters without a gradient are skipped entirely.
inline void adamw_step(std::vector<Tensor>& params, OptimizerState& state, double lr) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
  }
  ++state.step_count;
  const auto& o = state.options;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step_count));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    if (!p.has_grad()) continue;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.numel()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    auto theta = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] -= lr * o.weight_decay * theta[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + o.epsilon);
    }
  }
}

/// Linear decay from lr0 at step 0 to zero at total_steps, no warmup.
inline double linear_schedule(std::int64_t step, std::int64_t total_steps, double lr0) {
  if (total_steps <= 0) throw Error("linear_schedule: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw Error("linear_schedule: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

}  // namespace adlm
