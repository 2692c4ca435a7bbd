#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "datml/error.hpp"
#include "datml/eval/eval.hpp"
#include "datml/pipeline/config.hpp"

namespace datml::inline DATML_ABI {

/// A stage needs an artifact its predecessor has not produced.
class MissingStage : public Error {
 public:
  MissingStage(const std::string& stage, const std::string& what)
      : Error("missing output of stage '" + stage + "': " + what + " (run '" + stage + "' first)"), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineOptions {
  RunConfig config;
  std::filesystem::path out = "datml-run";
  /// Progress lines; null for silence.
  std::ostream* progress = nullptr;
};

/// Output layout under `out`:
///   data/corpus.jsonl, data/kb.json                 gen-corpus
///   pretrain/{divae,divst,sys_pred}, vocab.txt      pretrain
///   train-<method>/hred                             train
///   finetune-<method>-<fraction>/hred               finetune
///   eval-<method>-<fraction>/report.{json,txt}      eval
/// Checkpoints are `<name>.json` + `<name>.bin`; each stage directory also
/// holds a `log.json` run log.
struct StagePaths {
  std::filesystem::path data, pretrain, train, finetune, eval;
  static StagePaths of(const PipelineOptions& options);
};

void stage_gen_corpus(const PipelineOptions& options);
void stage_pretrain(const PipelineOptions& options);
void stage_train(const PipelineOptions& options);
void stage_finetune(const PipelineOptions& options);

struct EvalOutcome {
  /// The fine-tuned model on the target test split.
  EvalReport finetuned;
  /// The source-trained model before fine-tuning, same test split.
  EvalReport source;
};
EvalOutcome stage_eval(const PipelineOptions& options);

/// gen-corpus (when the config names no corpus), pretrain, train, finetune, eval.
EvalOutcome run_all(const PipelineOptions& options);

/// `datml <subcommand> [flags]`. Returns the process exit status; errors are
/// reported on `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace datml::inline DATML_ABI
