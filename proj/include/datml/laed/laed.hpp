#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "datml/compute/param_set.hpp"
#include "datml/corpus/corpus.hpp"

namespace datml::inline DATML_ABI {

using TokenIds = std::vector<std::size_t>;

/// One value in [0, k) for each of y categorical variables.
struct LatentCode {
  std::vector<std::size_t> values;
  bool operator==(const LatentCode&) const = default;
};

/// y probability vectors over k values.
struct LatentPosterior {
  std::vector<std::vector<double>> dists;
  /// Per-variable argmax, lowest index on ties.
  LatentCode argmax() const;
};

/// Concatenated one-hot encoding of a code, length y·k.
std::vector<Scalar> one_hot(const LatentCode& code, std::size_t k);

enum class LaedKind { kDiVae, kDiVst };
const char* laed_kind_name(LaedKind kind);

struct LaedConfig {
  std::size_t vocab_size = 0;
  std::size_t bos = Vocabulary::kBos;
  std::size_t eos = Vocabulary::kEos;
  std::size_t pad = Vocabulary::kPad;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t latent_y = 10;
  std::size_t latent_k = 5;
  double dropout = 0.3;
  double temperature = 1.0;

  void validate() const;
};

/// Recognition network `rec.*` plus one decoder group (`dec`) for DI-VAE or
/// two (`prev`, `next`) for DI-VST. The embedding table is shared.
struct LaedModel {
  LaedKind kind = LaedKind::kDiVae;
  LaedConfig config;
  ParamSet params;

  static LaedModel create(LaedKind kind, const LaedConfig& config, std::uint64_t seed);
  std::vector<std::string> generator_groups() const;
};

/// How the decoder sees z during a loss evaluation.
enum class LatentSampling {
  /// Hard one-hot Gumbel sample, gradients through the relaxed sample.
  kStraightThrough,
  /// Relaxed Gumbel-softmax sample.
  kRelaxed,
  /// Exact expectation over all k^y hard assignments weighted by q(z|x).
  kExpected,
};

struct LaedLossOptions {
  std::uint64_t noise_seed = 0;
  LatentSampling sampling = LatentSampling::kStraightThrough;
  bool training = true;
  /// DI-VST only: include the previous / next utterance decoder.
  bool use_prev = true;
  bool use_next = true;
};

struct LaedLoss {
  Tensor total;
  Tensor reconstruction;
  Tensor kl;
};

struct VstTriple {
  TokenIds prev, current, next;
};

LaedLoss divae_loss(const LaedModel& model, std::span<const TokenIds> batch, const LaedLossOptions& options = {});
LaedLoss divst_loss(const LaedModel& model, std::span<const VstTriple> batch, const LaedLossOptions& options = {});

/// Recognition logits reshaped to [y, k].
Tensor recognition_logits(const LaedModel& model, const TokenIds& utterance);
LatentPosterior posterior(const LaedModel& model, const TokenIds& utterance);
LatentCode recognize(const LaedModel& model, const TokenIds& utterance);

/// Teacher-forced argmax accuracy of the DI-VAE decoder fed the recognized code.
double reconstruction_accuracy(const LaedModel& model, std::span<const TokenIds> utterances);

/// Context-aware predictor of the system response's code: word-level GRU
/// over each utterance, turn-level GRU over the utterance vectors, then a
/// linear head to y·k logits.
struct SysLatentPredictor {
  LaedConfig config;
  std::size_t max_context_turns = 4;
  ParamSet params;

  static SysLatentPredictor create(const LaedConfig& config, std::uint64_t seed);
};

struct SysLatentExample {
  std::vector<TokenIds> context;
  TokenIds user;
  LatentCode target;
};

/// Logits of shape [y, k].
Tensor sys_latent_logits(const SysLatentPredictor& pred, std::span<const TokenIds> context, const TokenIds& user,
                         Rng* dropout_rng = nullptr);
/// Mean over examples of the summed per-variable cross-entropy.
Tensor sys_latent_loss(const SysLatentPredictor& pred, std::span<const SysLatentExample> batch,
                       std::uint64_t noise_seed, bool training = true);
LatentPosterior predict_sys_latent_distribution(const SysLatentPredictor& pred, std::span<const TokenIds> context,
                                                const TokenIds& user);
LatentCode predict_sys_latent(const SysLatentPredictor& pred, std::span<const TokenIds> context,
                              const TokenIds& user);

/// Every utterance of the corpus, in order.
std::vector<TokenIds> corpus_utterances(const Corpus& corpus, const Vocabulary& vocab);
/// One triple per turn; a missing neighbour is the single-token utterance [pad].
std::vector<VstTriple> corpus_triples(const Corpus& corpus, const Vocabulary& vocab);
/// The trailing `max_turns` utterances before turn `index` (0 = all).
std::vector<TokenIds> context_before(const Dialogue& dialogue, std::size_t index, std::size_t max_turns,
                                     const Vocabulary& vocab);

struct LaedTrainConfig {
  LaedConfig model;
  std::size_t epochs = 5;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t max_context_turns = 4;
  /// Utterances used to track reconstruction accuracy per epoch.
  std::size_t monitor_limit = 512;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct LaedArtifacts {
  LaedModel divae;
  LaedModel divst;
  SysLatentPredictor sys_pred;
  /// Entry 0 is measured before training.
  std::vector<EpochRecord> divae_history;
  std::vector<EpochRecord> divst_history;
  std::vector<EpochRecord> sys_pred_history;
  std::vector<SysLatentExample> sys_pred_examples;
};

/// Trains DI-VAE on all utterances, DI-VST on per-turn triples and the
/// predictor on DI-VST codes of system turns. The returned models are frozen.
LaedArtifacts pretrain_laed(const Corpus& corpus, const Vocabulary& vocab, const LaedTrainConfig& config,
                            std::uint64_t seed);

void freeze(LaedModel& model);
void freeze(SysLatentPredictor& pred);

}  // namespace datml::inline DATML_ABI
