#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "datml/compute/optim.hpp"
#include "datml/compute/param_set.hpp"

namespace datml::inline DATML_ABI {

enum class MetaMethod { kReptile, kFomaml, kMultitask };
const char* meta_method_name(MetaMethod m);
MetaMethod parse_meta_method(const std::string& name);

struct MetaConfig {
  MetaMethod method = MetaMethod::kReptile;
  double inner_lr = 1e-3;
  double outer_lr = 0.1;
  std::size_t inner_k = 5;
  std::size_t episodes = 4000;
  OptimizerKind inner_optimizer = OptimizerKind::kAdam;
  std::size_t batch_size = 8;
  std::uint64_t seed = 271;

  void validate() const;
};

/// Item `index` of source task (domain) `task`.
struct ItemRef {
  std::size_t task = 0;
  std::size_t index = 0;
  bool operator==(const ItemRef&) const = default;
};
using Batch = std::vector<ItemRef>;

/// Batches drawn from one domain. Reptile episodes carry k batches; MAML
/// episodes a support and a query batch.
struct Episode {
  std::size_t task = 0;
  std::vector<Batch> batches;
};

/// Loss of `params` on a batch; `noise_seed` freezes dropout.
using BatchLoss = std::function<Tensor(const ParamSet& params, std::span<const ItemRef> batch, std::uint64_t noise_seed)>;

struct SourceTask {
  std::string domain;
  std::size_t size = 0;
};

struct TrainRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> val_accuracy;
};

/// Per-epoch (or per-episode) records plus the best validation epoch.
struct TrainHistory {
  std::vector<TrainRecord> records;
  /// Epoch number of the highest validation accuracy; earliest on ties.
  std::optional<std::size_t> best_epoch;
  std::optional<double> best_accuracy;
  std::vector<std::string> warnings;

  void add(const TrainRecord& record);
  std::string to_json() const;
  static TrainHistory from_json(const std::string& text);
};

/// k optimizer steps on the episode's batches (cycled if fewer than k),
/// starting from a copy of theta with fresh optimizer state.
ParamSet inner_adapt(const ParamSet& theta, const Episode& episode, double inner_lr, std::size_t k,
                     OptimizerKind kind, const BatchLoss& loss, std::uint64_t noise_seed = 0,
                     double* mean_loss = nullptr);

/// theta <- theta + alpha (adapted - theta).
void reptile_update(ParamSet& theta, const ParamSet& adapted, double alpha);

/// theta <- theta - alpha * grad L(adapted, query). Returns the query loss.
double fomaml_update(ParamSet& theta, const ParamSet& adapted, std::span<const ItemRef> query, double alpha,
                     const BatchLoss& loss, std::uint64_t noise_seed = 0);

/// `count` batches from one task, without replacement inside the episode
/// until the task is exhausted.
Episode sample_episode(std::size_t task, std::size_t task_size, std::size_t count, std::size_t batch_size, Rng& rng);

/// The pooled batch sequence the multitask baseline trains on.
std::vector<Batch> multitask_batches(std::span<const SourceTask> tasks, std::size_t batch_size, std::size_t steps,
                                     std::uint64_t seed);

/// Source-domain training; one record per episode. Per-episode callback
/// receives the episode index and current parameters.
TrainHistory source_train(ParamSet& params, std::span<const SourceTask> tasks, const BatchLoss& loss,
                          const MetaConfig& config,
                          const std::function<void(std::size_t, const ParamSet&)>& on_episode = {});

/// Stop iff the best epoch is at most floor(e / 2) and e >= 4.
bool early_stop_check(const TrainHistory& history, std::size_t epoch);

struct FinetuneConfig {
  std::size_t max_epochs = 50;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::uint64_t seed = 271;
};

struct FinetuneResult {
  ParamSet params;
  TrainHistory history;
  std::optional<double> initial_val_accuracy;
};

/// Adam epochs over `n_items` few-shot items; returns the snapshot of the
/// best validation epoch. An empty `validate` disables early stopping.
FinetuneResult finetune(const ParamSet& params, std::size_t n_items, const BatchLoss& loss,
                        const std::function<double(const ParamSet&)>& validate, const FinetuneConfig& config);

}  // namespace datml::inline DATML_ABI
