#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "datml/corpus/corpus.hpp"
#include "datml/meta/meta.hpp"

namespace datml::inline DATML_ABI {

struct ModelSection {
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  double dropout = 0.3;
  std::size_t laed_y = 10;
  std::size_t laed_k = 5;
  std::size_t max_context_turns = 4;
  bool latents = true;
  /// Optional `token v1 ... vE` file loaded into the HRED embedding.
  std::string embeddings;
};

struct PretrainSection {
  std::size_t epochs = 5;
  double lr = 1e-3;
  std::size_t batch = 16;
};

struct MetaSection {
  MetaMethod method = MetaMethod::kReptile;
  std::size_t episodes = 4000;
  double inner_lr = 1e-3;
  double outer_lr = 0.1;
  std::size_t inner_k = 5;
  std::size_t batch = 8;
};

struct FinetuneSection {
  double fraction = 0.1;
  std::size_t max_epochs = 50;
  double lr = 1e-3;
  /// Per-turn updates: few-shot sets hold only tens of turns.
  std::size_t batch = 1;
  std::uint64_t seed = kDefaultFewShotSeed;
};

/// Used when `corpus` is empty: the synthetic generator's settings.
struct GenerateSection {
  std::size_t domains = 4;
  std::size_t dialogues_per_domain = 150;
  double multi_domain_fraction = 0.0;
  std::uint64_t seed = 271;
};

struct DataSection {
  std::string corpus;
  std::string kb;
  std::string target_domain = "restaurant";
  double validation = 0.1;
  double test = 0.3;
  GenerateSection generate;
};

struct EvalSection {
  std::size_t max_len = 30;
};

struct RunConfig {
  std::uint64_t seed = 271;
  ModelSection model;
  PretrainSection pretrain;
  MetaSection meta;
  FinetuneSection finetune;
  DataSection data;
  EvalSection eval;

  /// Throws InvalidArgument on unknown keys, wrong types or out-of-range values.
  static RunConfig from_json(const std::string& text);
  /// Relative data paths resolve against the config file's directory.
  static RunConfig load(const std::filesystem::path& path);
  /// Every field, keys sorted.
  std::string to_json() const;
  /// First 16 hex digits of SHA-256 over to_json().
  std::string fingerprint() const;
  void validate() const;
};

/// Canonical text for a few-shot fraction, e.g. "0.05".
std::string fraction_label(double fraction);

}  // namespace datml::inline DATML_ABI
