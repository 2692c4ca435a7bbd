#pragma once

#include <cstdint>
#include <vector>

#include "datml/compute/param_set.hpp"

namespace datml::inline DATML_ABI {

enum class OptimizerKind { kSgd, kAdam };

/// Learning rate plus, for Adam, per-parameter moment buffers. Moment buffers
/// are created lazily on the first step to match the ParamSet they update.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<Scalar>> first_moment;
  std::vector<std::vector<Scalar>> second_moment;

  static OptimizerState sgd(double lr);
  static OptimizerState adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
};

/// v <- v - lr * g for every parameter. Throws MissingGradient.
void sgd_step(ParamSet& params, OptimizerState& state);

/// Bias-corrected Adam update; advances moments and the step counter.
void adam_step(ParamSet& params, OptimizerState& state);

/// Dispatches on state.kind.
void optimizer_step(ParamSet& params, OptimizerState& state);

}  // namespace datml::inline DATML_ABI
