#include "datml/meta/meta.hpp"

#include <cmath>

#include "datml/error.hpp"
#include "json.hpp"

namespace datml::inline DATML_ABI {

const char* meta_method_name(MetaMethod m) {
  switch (m) {
    case MetaMethod::kReptile:
      return "reptile";
    case MetaMethod::kFomaml:
      return "fomaml";
    case MetaMethod::kMultitask:
      return "multitask";
  }
  return "?";
}

MetaMethod parse_meta_method(const std::string& name) {
  for (auto m : {MetaMethod::kReptile, MetaMethod::kFomaml, MetaMethod::kMultitask}) {
    if (name == meta_method_name(m)) return m;
  }
  throw InvalidArgument("unknown method '" + name + "' (expected reptile, fomaml or multitask)");
}

void MetaConfig::validate() const {
  if (!(inner_lr > 0.0) || !(outer_lr > 0.0)) throw InvalidArgument("meta: learning rates must be positive");
  if (inner_k == 0) throw InvalidArgument("meta: inner_k must be at least 1");
  if (batch_size == 0) throw InvalidArgument("meta: batch size must be positive");
}

void TrainHistory::add(const TrainRecord& record) {
  records.push_back(record);
  if (record.val_accuracy && (!best_accuracy || *record.val_accuracy > *best_accuracy)) {
    best_accuracy = record.val_accuracy;
    best_epoch = record.epoch;
  }
}

std::string TrainHistory::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json j{{"epoch", r.epoch}, {"loss", r.loss}};
    j["val_accuracy"] = r.val_accuracy ? nlohmann::json(*r.val_accuracy) : nlohmann::json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

TrainHistory TrainHistory::from_json(const std::string& text) {
  TrainHistory h;
  try {
    for (const auto& j : nlohmann::json::parse(text)) {
      TrainRecord r;
      r.epoch = j.at("epoch").get<std::size_t>();
      r.loss = j.at("loss").get<double>();
      if (!j.at("val_accuracy").is_null()) r.val_accuracy = j.at("val_accuracy").get<double>();
      h.add(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed training history: ") + e.what());
  }
  return h;
}

namespace {

OptimizerState fresh_optimizer(OptimizerKind kind, double lr) {
  return kind == OptimizerKind::kSgd ? OptimizerState::sgd(lr) : OptimizerState::adam(lr);
}

double step_on(ParamSet& params, OptimizerState& opt, const BatchLoss& loss, std::span<const ItemRef> batch,
               std::uint64_t noise_seed) {
  params.zero_grad();
  const Tensor l = loss(params, batch, noise_seed);
  backward(l);
  optimizer_step(params, opt);
  return l.item();
}

// Draws from a shuffled pool, reshuffling when it runs dry.
class PoolSampler {
 public:
  PoolSampler(std::vector<ItemRef> pool, Rng& rng) : pool_(std::move(pool)), rng_(rng) { refill(); }

  Batch next(std::size_t n) {
    Batch out;
    while (out.size() < n) {
      if (pos_ == pool_.size()) refill();
      out.push_back(pool_[pos_++]);
    }
    return out;
  }

 private:
  void refill() {
    shuffle(std::span<ItemRef>(pool_), rng_);
    pos_ = 0;
  }

  std::vector<ItemRef> pool_;
  Rng& rng_;
  std::size_t pos_ = 0;
};

}  // namespace

ParamSet inner_adapt(const ParamSet& theta, const Episode& episode, double inner_lr, std::size_t k,
                     OptimizerKind kind, const BatchLoss& loss, std::uint64_t noise_seed, double* mean_loss) {
  if (episode.batches.empty()) throw InvalidArgument("inner_adapt: episode has no batches");
  for (const auto& b : episode.batches) {
    if (b.empty()) throw InvalidArgument("inner_adapt: episode contains an empty batch");
  }
  if (k == 0) throw InvalidArgument("inner_adapt: k must be at least 1");
  ParamSet adapted = theta.clone();
  auto opt = fresh_optimizer(kind, inner_lr);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    total += step_on(adapted, opt, loss, episode.batches[i % episode.batches.size()], derive_seed(noise_seed, i));
  }
  if (mean_loss) *mean_loss = total / double(k);
  return adapted;
}

void reptile_update(ParamSet& theta, const ParamSet& adapted, double alpha) {
  theta.require_shape_compatible(adapted);
  auto it = adapted.begin();
  for (auto& [name, t] : theta) {
    auto v = t.mutable_data();
    const auto d = it->second.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<Scalar>(double(v[i]) + alpha * (double(d[i]) - double(v[i])));
    }
    ++it;
  }
}

double fomaml_update(ParamSet& theta, const ParamSet& adapted, std::span<const ItemRef> query, double alpha,
                     const BatchLoss& loss, std::uint64_t noise_seed) {
  if (query.empty()) throw InvalidArgument("fomaml_update: query batch is empty");
  theta.require_shape_compatible(adapted);
  ParamSet at = adapted.clone();
  at.zero_grad();
  const Tensor l = loss(at, query, noise_seed);
  backward(l);
  auto it = at.begin();
  for (auto& [name, t] : theta) {
    if (!it->second.has_grad()) throw MissingGradient(name);
    auto v = t.mutable_data();
    const auto g = it->second.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(double(v[i]) - alpha * double(g[i]));
    ++it;
  }
  return l.item();
}

Episode sample_episode(std::size_t task, std::size_t task_size, std::size_t count, std::size_t batch_size,
                       Rng& rng) {
  if (task_size == 0) throw InvalidArgument("sample_episode: task has no items");
  std::vector<ItemRef> pool;
  for (std::size_t i = 0; i < task_size; ++i) pool.push_back({task, i});
  PoolSampler sampler(std::move(pool), rng);
  Episode ep;
  ep.task = task;
  for (std::size_t b = 0; b < count; ++b) ep.batches.push_back(sampler.next(std::min(batch_size, task_size)));
  return ep;
}

std::vector<Batch> multitask_batches(std::span<const SourceTask> tasks, std::size_t batch_size, std::size_t steps,
                                     std::uint64_t seed) {
  std::vector<ItemRef> pool;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (std::size_t i = 0; i < tasks[t].size; ++i) pool.push_back({t, i});
  }
  if (pool.empty()) throw InvalidArgument("multitask_batches: no source items");
  const std::size_t n = std::min(batch_size, pool.size());
  Rng rng(derive_seed(seed, 0x3a11));
  PoolSampler sampler(std::move(pool), rng);
  std::vector<Batch> out;
  for (std::size_t s = 0; s < steps; ++s) out.push_back(sampler.next(n));
  return out;
}

TrainHistory source_train(ParamSet& params, std::span<const SourceTask> tasks, const BatchLoss& loss,
                          const MetaConfig& config, const std::function<void(std::size_t, const ParamSet&)>& on_episode) {
  config.validate();
  if (tasks.empty()) throw InvalidArgument("source_train: no source domains");
  for (const auto& t : tasks) {
    if (t.size == 0) throw InvalidArgument("source_train: domain '" + t.domain + "' has no training items");
  }
  if (tasks.size() < 2 && config.method != MetaMethod::kMultitask) {
    throw InvalidArgument(std::string("source_train: ") + meta_method_name(config.method) +
                          " needs at least 2 source domains");
  }
  TrainHistory history;
  if (config.episodes == 0) return history;

  if (config.method == MetaMethod::kMultitask) {
    const auto batches = multitask_batches(tasks, config.batch_size, config.episodes * config.inner_k, config.seed);
    auto opt = OptimizerState::adam(config.inner_lr);
    std::size_t step = 0;
    for (std::size_t ep = 0; ep < config.episodes; ++ep) {
      double total = 0.0;
      for (std::size_t i = 0; i < config.inner_k; ++i, ++step) {
        total += step_on(params, opt, loss, batches[step], derive_seed(config.seed, step));
      }
      history.add({ep + 1, total / double(config.inner_k), std::nullopt});
      if (on_episode) on_episode(ep + 1, params);
    }
    return history;
  }

  Rng rng(derive_seed(config.seed, 0xe915));
  for (std::size_t ep = 0; ep < config.episodes; ++ep) {
    const auto task = static_cast<std::size_t>(uniform_index(rng, tasks.size()));
    const std::uint64_t noise = rng();
    double episode_loss = 0.0;
    if (config.method == MetaMethod::kReptile) {
      const auto episode = sample_episode(task, tasks[task].size, config.inner_k, config.batch_size, rng);
      const auto adapted =
          inner_adapt(params, episode, config.inner_lr, config.inner_k, config.inner_optimizer, loss, noise,
                      &episode_loss);
      reptile_update(params, adapted, config.outer_lr);
    } else {
      auto episode = sample_episode(task, tasks[task].size, 2, config.batch_size, rng);
      const Batch query = std::move(episode.batches[1]);
      episode.batches.resize(1);
      const auto adapted =
          inner_adapt(params, episode, config.inner_lr, config.inner_k, config.inner_optimizer, loss, noise);
      episode_loss = fomaml_update(params, adapted, query, config.outer_lr, loss, derive_seed(noise, 0xf0));
    }
    history.add({ep + 1, episode_loss, std::nullopt});
    if (on_episode) on_episode(ep + 1, params);
  }
  return history;
}

bool early_stop_check(const TrainHistory& history, std::size_t epoch) {
  if (epoch == 0) throw ContractViolation("early_stop_check: epochs are numbered from 1");
  if (history.records.size() < epoch) throw ContractViolation("early_stop_check: history is shorter than the epoch");
  if (epoch < 4 || !history.best_epoch) return false;
  return *history.best_epoch <= epoch / 2;
}

FinetuneResult finetune(const ParamSet& params, std::size_t n_items, const BatchLoss& loss,
                        const std::function<double(const ParamSet&)>& validate, const FinetuneConfig& config) {
  if (n_items == 0) throw InvalidArgument("finetune: few-shot set is empty");
  if (config.max_epochs == 0) throw InvalidArgument("finetune: max_epochs must be at least 1");
  if (config.batch_size == 0) throw InvalidArgument("finetune: batch size must be positive");
  FinetuneResult out;
  ParamSet work = params.clone();
  for (const auto& name : work.names()) work.get(name).set_requires_grad(true);
  auto opt = OptimizerState::adam(config.learning_rate);
  if (validate) {
    out.initial_val_accuracy = validate(work);
  } else {
    out.history.warnings.push_back("empty validation set: early stopping disabled, last epoch returned");
  }
  std::optional<ParamSet> best;
  std::vector<ItemRef> items;
  for (std::size_t i = 0; i < n_items; ++i) items.push_back({0, i});
  Rng rng(derive_seed(config.seed, 0xf17e));
  std::size_t step = 0;
  for (std::size_t e = 1; e <= config.max_epochs; ++e) {
    shuffle(std::span<ItemRef>(items), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < items.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, items.size() - start);
      total += step_on(work, opt, loss, std::span<const ItemRef>(items.data() + start, n),
                       derive_seed(config.seed, step++));
      ++batches;
    }
    TrainRecord rec{e, total / double(batches), std::nullopt};
    if (validate) rec.val_accuracy = validate(work);
    out.history.add(rec);
    if (validate && out.history.best_epoch == e) best = work.clone();
    if (validate && early_stop_check(out.history, e)) break;
  }
  out.params = best ? std::move(*best) : std::move(work);
  return out;
}

}  // namespace datml::inline DATML_ABI
