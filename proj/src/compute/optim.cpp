#include "datml/compute/optim.hpp"

#include <cmath>

#include "datml/error.hpp"

namespace datml::inline DATML_ABI {

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.kind = OptimizerKind::kSgd;
  s.learning_rate = lr;
  return s;
}

OptimizerState OptimizerState::adam(double lr, double beta1, double beta2, double eps) {
  OptimizerState s;
  s.kind = OptimizerKind::kAdam;
  s.learning_rate = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = eps;
  return s;
}

namespace {

void require_grads(const ParamSet& params) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw MissingGradient(name);
  }
}

}  // namespace

void sgd_step(ParamSet& params, OptimizerState& state) {
  if (state.kind != OptimizerKind::kSgd) throw ContractViolation("sgd_step on a non-SGD optimizer state");
  require_grads(params);
  const double lr = state.learning_rate;
  for (auto& [_, t] : params) {
    auto v = t.mutable_data();
    auto g = t.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(v[i] - lr * g[i]);
  }
  ++state.step;
}

void adam_step(ParamSet& params, OptimizerState& state) {
  if (state.kind != OptimizerKind::kAdam) throw ContractViolation("adam_step on a non-Adam optimizer state");
  if (!(state.beta1 >= 0.0 && state.beta1 < 1.0 && state.beta2 >= 0.0 && state.beta2 < 1.0)) {
    throw ContractViolation("adam_step: betas must lie in [0, 1)");
  }
  if (!(state.epsilon > 0.0)) throw ContractViolation("adam_step: epsilon must be positive");
  require_grads(params);
  if (state.first_moment.empty()) {
    for (const auto& [_, t] : params) {
      state.first_moment.emplace_back(t.numel(), Scalar(0));
      state.second_moment.emplace_back(t.numel(), Scalar(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractViolation("adam_step: moment buffers do not match the parameter set");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  std::size_t k = 0;
  for (auto& [name, tensor] : params) {
    auto& m = state.first_moment[k];
    auto& s = state.second_moment[k];
    ++k;
    if (m.size() != tensor.numel()) throw ContractViolation("adam_step: moment shape mismatch for '" + name + "'");
    auto v = tensor.mutable_data();
    auto g = tensor.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double si = state.beta2 * s[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<Scalar>(mi);
      s[i] = static_cast<Scalar>(si);
      const double mhat = mi / correction1;
      const double shat = si / correction2;
      v[i] = static_cast<Scalar>(v[i] - state.learning_rate * mhat / (std::sqrt(shat) + state.epsilon));
    }
  }
}

void optimizer_step(ParamSet& params, OptimizerState& state) {
  if (state.kind == OptimizerKind::kSgd) {
    sgd_step(params, state);
  } else {
    adam_step(params, state);
  }
}

}  // namespace datml::inline DATML_ABI
