#pragma once

#include <functional>
#include <string>
#include <vector>

#include "datml/compute/param_set.hpp"

namespace datml::inline DATML_ABI {

/// Builds a scalar loss from the current parameter values. Must be
/// deterministic: dropout and sampling noise frozen.
using LossBuilder = std::function<Tensor(const ParamSet&)>;

/// One gradient buffer per parameter, in ParamSet order.
using GradientList = std::vector<std::vector<double>>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::vector<double> per_parameter;
};

GradientList analytic_gradients(const LossBuilder& loss, ParamSet& params);

/// Central differences (L(x+h) - L(x-h)) / 2h, one coordinate at a time.
GradientList numeric_gradients(const LossBuilder& loss, ParamSet& params, double h);

/// Per parameter ||analytic - numeric|| / ||numeric||, with the denominator
/// floored at 1e-6 so vanishing gradients are compared absolutely.
GradCheckReport compare_gradients(const ParamSet& params, const GradientList& analytic,
                                  const GradientList& numeric);

GradCheckReport finite_diff_check(const LossBuilder& loss, ParamSet& params, double h = 1e-3);

}  // namespace datml::inline DATML_ABI
