#include "datml/compute/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "datml/error.hpp"

namespace datml::inline DATML_ABI {

namespace {
// Gradients smaller than this in norm are compared in absolute terms.
constexpr double kAbsoluteFloor = 1e-6;
}  // namespace

GradientList analytic_gradients(const LossBuilder& loss, ParamSet& params) {
  params.zero_grad();
  backward(loss(params));
  GradientList out;
  for (const auto& [_, t] : params) out.emplace_back(t.grad().begin(), t.grad().end());
  return out;
}

GradientList numeric_gradients(const LossBuilder& loss, ParamSet& params, double h) {
  if (!(h > 0.0)) throw ContractViolation("finite difference step must be positive");
  GradientList out;
  for (auto& [_, t] : params) {
    auto values = t.mutable_data();
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Scalar saved = values[i];
      values[i] = static_cast<Scalar>(saved + h);
      const double up = loss(params).item();
      values[i] = static_cast<Scalar>(saved - h);
      const double down = loss(params).item();
      values[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

GradCheckReport compare_gradients(const ParamSet& params, const GradientList& analytic,
                                  const GradientList& numeric) {
  if (analytic.size() != params.size() || numeric.size() != params.size()) {
    throw ContractViolation("gradient lists do not match the parameter set");
  }
  GradCheckReport report;
  std::size_t k = 0;
  for (const auto& [name, _] : params) {
    const auto& a = analytic[k];
    const auto& n = numeric[k];
    ++k;
    if (a.size() != n.size()) throw ContractViolation("gradient size mismatch for '" + name + "'");
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      diff += (a[i] - n[i]) * (a[i] - n[i]);
      norm += n[i] * n[i];
    }
    const double rel = std::sqrt(diff) / std::max(std::sqrt(norm), kAbsoluteFloor);
    report.per_parameter.push_back(rel);
    if (report.worst_parameter.empty() || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter = name;
    }
  }
  return report;
}

GradCheckReport finite_diff_check(const LossBuilder& loss, ParamSet& params, double h) {
  const auto analytic = analytic_gradients(loss, params);
  const auto numeric = numeric_gradients(loss, params, h);
  return compare_gradients(params, analytic, numeric);
}

}  // namespace datml::inline DATML_ABI
