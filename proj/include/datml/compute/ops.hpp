#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "datml/compute/random.hpp"
#include "datml/compute/tensor.hpp"

// Differentiable operations. Vectors are rank-1 tensors, matrices rank-2
// row-major. The softmax family, gumbel_softmax and kl_categorical treat the
// last dimension as the distribution axis, so a [y, k] tensor holds y
// independent categoricals.

namespace datml::inline DATML_ABI::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
/// s * v where s is a one-element tensor.
Tensor scale_by(const Tensor& s, const Tensor& v);
/// 1 - a, elementwise.
Tensor one_minus(const Tensor& a);
/// Sum of equally shaped tensors.
Tensor add_n(std::span<const Tensor> terms);
Tensor reshape(const Tensor& a, Shape shape);

/// W x for W [r, c], x [c].
Tensor matvec(const Tensor& w, const Tensor& x);
/// Wᵀ x for W [r, c], x [r].
Tensor matvec_t(const Tensor& w, const Tensor& x);
/// W x + b; bias may be undefined.
Tensor linear(const Tensor& w, const Tensor& x, const Tensor& b);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

Tensor concat(std::span<const Tensor> parts);
Tensor slice(const Tensor& v, std::size_t offset, std::size_t length);
/// Stacks n vectors of length c into an [n, c] matrix.
Tensor stack(std::span<const Tensor> rows);
/// Row `id` of an [n, d] table as a [d] vector.
Tensor embedding(const Tensor& table, std::size_t id);

/// Gated recurrent unit step with gates ordered (reset, update, new):
///   r = σ(W_ir x + b_ir + W_hr h + b_hr)
///   u = σ(W_iu x + b_iu + W_hu h + b_hu)
///   n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
///   h' = (1 - u) ⊙ n + u ⊙ h
/// w_ih is [3H, I], w_hh is [3H, H], biases [3H].
Tensor gru_cell(const Tensor& x, const Tensor& h, const Tensor& w_ih, const Tensor& w_hh,
                const Tensor& b_ih, const Tensor& b_hh);

/// Inverted dropout. Identity when not training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor pick(const Tensor& v, std::size_t index);

/// -log softmax(logits)[target] for a vector of logits.
Tensor cross_entropy(const Tensor& logits, std::size_t target);
/// -log p[target] for a probability vector.
Tensor nll_of_probability(const Tensor& probs, std::size_t target);

/// softmax((logits + g) / temperature) along the last dimension. With `hard`
/// the forward value is the one-hot argmax while gradients flow through the
/// relaxed sample (straight-through). `noise` must match the logits' size.
Tensor gumbel_softmax(const Tensor& logits, double temperature, std::span<const Scalar> noise,
                      bool hard = false);
Tensor gumbel_softmax(const Tensor& logits, double temperature, Rng& rng, bool hard = false);

/// Σ q ln(q / p) over the last dimension, summed over leading rows.
/// Throws InvalidArgument (infinite divergence) when q > 0 where p == 0.
Tensor kl_categorical(const Tensor& q, const Tensor& p);

/// out[index[j]] += v[j] for an output of length `size`.
Tensor scatter_add(const Tensor& v, std::span<const std::size_t> index, std::size_t size);
/// Pads a vector with zeros up to `size`.
Tensor zero_extend(const Tensor& v, std::size_t size);

}  // namespace datml::inline DATML_ABI::ops
