#pragma once

#include <string>
#include <vector>

#include "datml/compute/ops.hpp"
#include "datml/compute/param_set.hpp"

namespace datml::inline DATML_ABI {

/// Registers `<prefix>.w_ih`, `.w_hh`, `.b_ih`, `.b_hh` with uniform(±1/√hidden) values.
void add_gru(ParamSet& params, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng);
/// Registers `<prefix>.w` [out, in] and, with `bias`, `<prefix>.b` [out].
void add_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                bool bias = true);

/// Handles to one GRU's parameters, resolved once per forward pass.
struct GruRef {
  Tensor w_ih, w_hh, b_ih, b_hh;
  std::size_t hidden() const { return b_ih.numel() / 3; }
  Tensor step(const Tensor& x, const Tensor& h) const { return ops::gru_cell(x, h, w_ih, w_hh, b_ih, b_hh); }
};

struct LinearRef {
  Tensor w, b;
  Tensor operator()(const Tensor& x) const { return ops::linear(w, x, b); }
};

GruRef gru_ref(const ParamSet& params, const std::string& prefix);
LinearRef linear_ref(const ParamSet& params, const std::string& prefix, bool bias = true);

/// Copies values into fresh constant leaves, for inference without graph bookkeeping.
ParamSet detached(const ParamSet& params);
/// Sets requires_grad on every entry. Frozen models build no autodiff graph.
void set_trainable(ParamSet& params, bool trainable);

}  // namespace datml::inline DATML_ABI
