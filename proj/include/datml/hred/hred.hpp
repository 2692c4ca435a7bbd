#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "datml/compute/param_set.hpp"
#include "datml/corpus/corpus.hpp"
#include "datml/laed/laed.hpp"

namespace datml::inline DATML_ABI {

struct HredConfig {
  std::size_t vocab_size = 0;
  std::size_t bos = Vocabulary::kBos;
  std::size_t eos = Vocabulary::kEos;
  std::size_t unk = Vocabulary::kUnk;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  double dropout = 0.3;
  bool latents_enabled = false;
  std::size_t latent_y = 10;
  std::size_t latent_k = 5;
  /// Context utterances kept before the user turn (0 = all).
  std::size_t max_context_turns = 4;

  void validate() const;
  std::size_t latent_width() const { return 2 * latent_y * latent_k; }
};

/// Parameters: `embed`, word-level `enc.gru`, turn-level `ctx.gru`,
/// `dec.init`, `dec.gru`, attention `attn.w`, output `out`, copy gate `gate`
/// and, with latents, the projection `latent.w` [hidden, 2·y·k].
struct HredModel {
  HredConfig config;
  ParamSet params;

  static HredModel create(const HredConfig& config, std::uint64_t seed);
};

/// One training or evaluation turn. Token ids below vocab_size index the
/// vocabulary; id vocab_size + j stands for oov[j], a context word outside
/// the vocabulary that can only be produced by copying.
struct HredExample {
  /// Context utterances followed by the user utterance, vocabulary ids.
  std::vector<TokenIds> utterances;
  /// Same layout as `utterances` with out-of-vocabulary words given extended ids.
  std::vector<TokenIds> copy_ids;
  /// Gold system response in extended ids, without eos.
  TokenIds response;
  std::vector<std::string> oov;
  std::optional<LatentCode> z_usr;
  std::optional<LatentCode> z_sys;

  std::size_t extended_size(std::size_t vocab_size) const { return vocab_size + oov.size(); }
};

HredExample make_example(const Vocabulary& vocab, const std::vector<std::vector<std::string>>& context,
                         const std::vector<std::string>& user, const std::vector<std::string>& response,
                         std::size_t max_context_turns = 0);
/// Maps extended ids back to words.
std::vector<std::string> example_tokens(const HredExample& ex, const Vocabulary& vocab, const TokenIds& ids);

/// Distributions at one decoding step. `copy` and `mixed` live on the
/// extended vocabulary; `vocab` on the base vocabulary.
struct DecoderStep {
  Tensor attention;
  Tensor vocab;
  Tensor copy;
  Tensor p_gen;
  Tensor mixed;
};

/// Luong-style attention of `state` over the context token states, copy mass
/// accumulated by token id, and the pointer-generator mixture.
DecoderStep copy_distribution(const HredModel& model, const ParamSet& params, const Tensor& state,
                              const Tensor& context_states, std::span<const std::size_t> context_ids,
                              std::size_t extended_size, const Tensor& input_embedding, Rng* dropout_rng = nullptr);

struct HredLossOptions {
  std::uint64_t noise_seed = 0;
  bool training = true;
};

/// Mean per-token NLL of the response (plus eos) under teacher forcing.
Tensor hred_loss(const HredModel& model, const ParamSet& params, const HredExample& example,
                 const HredLossOptions& options = {});
Tensor hred_loss(const HredModel& model, const HredExample& example, const HredLossOptions& options = {});
/// Mean of per-example losses.
Tensor hred_batch_loss(const HredModel& model, const ParamSet& params, std::span<const HredExample> batch,
                       const HredLossOptions& options = {});

/// Greedy decoding without dropout; returns extended ids without eos.
TokenIds generate_response(const HredModel& model, const ParamSet& params, const HredExample& example,
                           std::size_t max_len);
TokenIds generate_response(const HredModel& model, const HredExample& example, std::size_t max_len);

/// Teacher-forced argmax accuracy over all response tokens (eos included).
double token_accuracy(const HredModel& model, const ParamSet& params, std::span<const HredExample> examples);

/// Overwrites embedding rows from a text file of `token v1 ... vE` lines.
/// Returns the number of rows replaced; unknown tokens are skipped.
std::size_t load_pretrained_embeddings(HredModel& model, const Vocabulary& vocab, const std::filesystem::path& path);

/// Builds HRED examples for system turns of a dialogue, attaching
/// z_usr = recognize(DI-VAE, user turn) and z_sys from the predictor when
/// both LAED artifacts are present.
struct TurnEncoder {
  const Vocabulary* vocab = nullptr;
  std::size_t max_context_turns = 4;
  const LaedModel* divae = nullptr;
  const SysLatentPredictor* sys_pred = nullptr;

  /// `sys_turn` indexes a system turn; the turn before it is the user request.
  HredExample encode(const Dialogue& dialogue, std::size_t sys_turn) const;
  std::vector<HredExample> encode_all(const Corpus& corpus) const;
};

}  // namespace datml::inline DATML_ABI
