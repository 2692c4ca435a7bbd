#pragma once

#include <functional>
#include <string>
#include <vector>

#include "datml/corpus/corpus.hpp"
#include "datml/hred/hred.hpp"

namespace datml::inline DATML_ABI {

using Sentence = std::vector<std::string>;

/// Corpus-level BLEU-4 over aligned pairs with a brevity penalty. An n-gram
/// order with no clipped matches uses the add-one estimate 1 / (total + 1).
double bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references);

struct EntityScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  std::size_t correct = 0;
};

/// Micro-averaged over turns. P (R) is 1 when nothing was predicted (gold)
/// on any turn and the other side is empty too; otherwise 0/0 reads as 0.
EntityScores entity_f1(const std::vector<EntitySet>& predicted, const std::vector<EntitySet>& gold);

struct DomainScores {
  std::string domain;
  double bleu = 0.0;       // percent, one decimal
  double entity_f1 = 0.0;  // percent, one decimal
  std::size_t turns = 0;
  std::size_t gold_entities = 0;
  std::size_t predicted_entities = 0;
  std::size_t correct_entities = 0;
};

struct EvalReport {
  std::vector<DomainScores> domains;
  std::string fingerprint;
  double fewshot_fraction = 0.0;
  std::string bleu_convention;

  std::string to_json() const;
  /// Aligned columns: domain, BLEU %, Entity F1 %, turns.
  std::string to_table() const;
};

struct EvalOptions {
  std::string domain;
  std::size_t max_len = 30;
  /// 0 reads DATML_THREADS (default 1).
  std::size_t threads = 0;
  std::string fingerprint;
  double fewshot_fraction = 0.0;
};

/// Rounds a [0, 1] score to a one-decimal percentage.
double percent(double score);

/// Produces the response to system turn `sys_turn` given gold history.
/// Called concurrently when more than one thread is used.
using Responder = std::function<Sentence(const Dialogue& dialogue, std::size_t sys_turn)>;

/// Scores a responder on every system turn of `test`.
EvalReport evaluate_responses(const Responder& respond, const Corpus& test, const KnowledgeBase& kb,
                              const EvalOptions& options);

/// Generates every system turn from gold history and scores it.
EvalReport evaluate_model(const HredModel& model, const ParamSet& params, const TurnEncoder& encoder,
                          const Corpus& test, const KnowledgeBase& kb, const EvalOptions& options);

/// Worker count from DATML_THREADS, at least 1.
std::size_t eval_threads_from_env();

extern const char* const kBleuConvention;

}  // namespace datml::inline DATML_ABI
