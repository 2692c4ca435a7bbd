#include "datml/compute/layers.hpp"

#include <cmath>

namespace datml::inline DATML_ABI {

void add_gru(ParamSet& params, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden));
  params.add_uniform(prefix + ".w_ih", {3 * hidden, input}, scale, rng);
  params.add_uniform(prefix + ".w_hh", {3 * hidden, hidden}, scale, rng);
  params.add_uniform(prefix + ".b_ih", {3 * hidden}, scale, rng);
  params.add_uniform(prefix + ".b_hh", {3 * hidden}, scale, rng);
}

void add_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                bool bias) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  params.add_uniform(prefix + ".w", {out, in}, scale, rng);
  if (bias) params.add_uniform(prefix + ".b", {out}, scale, rng);
}

GruRef gru_ref(const ParamSet& params, const std::string& prefix) {
  return {params[prefix + ".w_ih"], params[prefix + ".w_hh"], params[prefix + ".b_ih"], params[prefix + ".b_hh"]};
}

LinearRef linear_ref(const ParamSet& params, const std::string& prefix, bool bias) {
  return {params[prefix + ".w"], bias ? params[prefix + ".b"] : Tensor{}};
}

ParamSet detached(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params) {
    out.add(name, t.detach());
    out.get(name).set_requires_grad(false);
  }
  return out;
}

void set_trainable(ParamSet& params, bool trainable) {
  for (const auto& name : params.names()) params.get(name).set_requires_grad(trainable);
}

}  // namespace datml::inline DATML_ABI
