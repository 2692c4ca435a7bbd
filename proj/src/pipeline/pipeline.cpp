#include "datml/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "datml/corpus/generator.hpp"
#include "datml/corpus/io.hpp"
#include "datml/hred/hred.hpp"
#include "datml/laed/laed.hpp"
#include "datml/meta/meta.hpp"
#include "datml/pipeline/checkpoint.hpp"
#include "json.hpp"

namespace datml::inline DATML_ABI {

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kLaedStream = 0x1aed;
constexpr std::uint64_t kHredStream = 0x4ed;

void say(const PipelineOptions& o, const std::string& line) {
  if (o.progress) *o.progress << line << std::endl;
}

ordered_json config_object(const RunConfig& c) { return ordered_json::parse(c.to_json()); }

void write_log(const fs::path& dir, const std::string& stage, const PipelineOptions& o, Clock::time_point start,
               ordered_json details) {
  ordered_json j;
  j["stage"] = stage;
  j["fingerprint"] = o.config.fingerprint();
  j["elapsed_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  j["config"] = config_object(o.config);
  for (auto& [k, v] : details.items()) j[k] = std::move(v);
  write_file_atomic(dir / "log.json", j.dump(2) + "\n");
}

struct Data {
  KnowledgeBase kb;
  TargetSplit split;
};

Data load_data(const PipelineOptions& o) {
  const auto& d = o.config.data;
  const auto paths = StagePaths::of(o);
  fs::path corpus_path = d.corpus, kb_path = d.kb;
  if (d.corpus.empty()) {
    corpus_path = paths.data / "corpus.jsonl";
    kb_path = paths.data / "kb.json";
    if (!fs::exists(corpus_path) || !fs::exists(kb_path)) {
      throw MissingStage("gen-corpus", "no corpus at " + corpus_path.string());
    }
  }
  Data out;
  out.kb = load_knowledge_base(kb_path);
  const Corpus corpus = load_corpus(corpus_path);
  out.split = split_for_target(corpus, d.target_domain, {d.validation, d.test}, o.config.seed);
  return out;
}

Corpus fewshot_set(const PipelineOptions& o, const Data& data) {
  return sample_fewshot(data.split.target_train_pool, o.config.finetune.fraction, o.config.finetune.seed);
}

LaedConfig laed_config(const RunConfig& c, std::size_t vocab_size) {
  LaedConfig l;
  l.vocab_size = vocab_size;
  l.embed_dim = c.model.embed_dim;
  l.hidden_dim = c.model.hidden_dim;
  l.latent_y = c.model.laed_y;
  l.latent_k = c.model.laed_k;
  l.dropout = c.model.dropout;
  return l;
}

HredConfig hred_config(const RunConfig& c, std::size_t vocab_size) {
  HredConfig h;
  h.vocab_size = vocab_size;
  h.embed_dim = c.model.embed_dim;
  h.hidden_dim = c.model.hidden_dim;
  h.dropout = c.model.dropout;
  h.latents_enabled = c.model.latents;
  h.latent_y = c.model.laed_y;
  h.latent_k = c.model.laed_k;
  h.max_context_turns = c.model.max_context_turns;
  return h;
}

std::string laed_config_json(const LaedConfig& l) {
  return ordered_json{{"vocab_size", l.vocab_size}, {"embed_dim", l.embed_dim}, {"hidden_dim", l.hidden_dim},
                      {"latent_y", l.latent_y},     {"latent_k", l.latent_k},   {"dropout", l.dropout},
                      {"temperature", l.temperature}}
      .dump();
}

std::string hred_config_json(const HredConfig& h) {
  return ordered_json{{"vocab_size", h.vocab_size},
                      {"embed_dim", h.embed_dim},
                      {"hidden_dim", h.hidden_dim},
                      {"dropout", h.dropout},
                      {"latents", h.latents_enabled},
                      {"latent_y", h.latent_y},
                      {"latent_k", h.latent_k},
                      {"max_context_turns", h.max_context_turns}}
      .dump();
}

// Installs loaded parameters into a freshly built model of the expected shape.
void install(ParamSet& target, ParamSet loaded, const fs::path& path) {
  if (!target.shape_compatible(loaded)) {
    throw CheckpointShapeError(path, "parameters do not match the configured model (check model sizes and vocabulary)");
  }
  target = std::move(loaded);
}

Checkpoint require_checkpoint(const fs::path& path, const std::string& kind, const std::string& stage) {
  if (!checkpoint_exists(path)) throw MissingStage(stage, "no " + kind + " checkpoint at " + path.string() + ".json");
  return load_checkpoint(path, kind);
}

struct Laed {
  Vocabulary vocab;
  LaedModel divae;
  SysLatentPredictor sys_pred;
};

Laed load_laed(const PipelineOptions& o) {
  const auto dir = StagePaths::of(o).pretrain;
  const auto vocab_path = dir / "vocab.txt";
  if (!fs::exists(vocab_path)) throw MissingStage("pretrain", "no vocabulary at " + vocab_path.string());
  Laed out;
  out.vocab = load_vocabulary(vocab_path);
  const auto cfg = laed_config(o.config, out.vocab.size());
  out.divae = LaedModel::create(LaedKind::kDiVae, cfg, 0);
  install(out.divae.params, require_checkpoint(dir / "divae", "divae", "pretrain").params, dir / "divae");
  freeze(out.divae);
  out.sys_pred = SysLatentPredictor::create(cfg, 0);
  out.sys_pred.max_context_turns = o.config.model.max_context_turns;
  install(out.sys_pred.params, require_checkpoint(dir / "sys_pred", "sys_pred", "pretrain").params, dir / "sys_pred");
  freeze(out.sys_pred);
  return out;
}

TurnEncoder encoder_for(const PipelineOptions& o, const Laed& laed) {
  TurnEncoder enc;
  enc.vocab = &laed.vocab;
  enc.max_context_turns = o.config.model.max_context_turns;
  if (o.config.model.latents) {
    enc.divae = &laed.divae;
    enc.sys_pred = &laed.sys_pred;
  }
  return enc;
}

HredModel load_hred(const PipelineOptions& o, const Laed& laed, const fs::path& path, const std::string& kind,
                    const std::string& stage) {
  auto model = HredModel::create(hred_config(o.config, laed.vocab.size()), 0);
  install(model.params, require_checkpoint(path, kind, stage).params, path);
  return model;
}

BatchLoss hred_loss_over(const HredModel& model, const std::vector<std::vector<HredExample>>& tasks) {
  return [&model, &tasks](const ParamSet& params, std::span<const ItemRef> batch, std::uint64_t seed) {
    std::vector<HredExample> examples;
    examples.reserve(batch.size());
    for (const auto& r : batch) examples.push_back(tasks[r.task][r.index]);
    return hred_batch_loss(model, params, examples, {.noise_seed = seed, .training = true});
  };
}

ordered_json history_json(const std::vector<EpochRecord>& h) {
  auto a = ordered_json::array();
  for (const auto& r : h) a.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"accuracy", r.accuracy}});
  return a;
}

std::string scores_line(const EvalReport& r) {
  const auto& d = r.domains.at(0);
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << "BLEU " << d.bleu << ", Entity F1 " << d.entity_f1;
  return s.str();
}

}  // namespace

StagePaths StagePaths::of(const PipelineOptions& o) {
  const std::string method = meta_method_name(o.config.meta.method);
  const std::string frac = fraction_label(o.config.finetune.fraction);
  StagePaths p;
  p.data = o.out / "data";
  p.pretrain = o.out / "pretrain";
  p.train = o.out / ("train-" + method);
  p.finetune = o.out / ("finetune-" + method + "-" + frac);
  p.eval = o.out / ("eval-" + method + "-" + frac);
  return p;
}

void stage_gen_corpus(const PipelineOptions& o) {
  const auto start = Clock::now();
  const auto& g = o.config.data.generate;
  CorpusSpec spec = default_corpus_spec(g.domains, g.dialogues_per_domain);
  spec.multi_domain_fraction = g.multi_domain_fraction;
  spec.seed = g.seed;
  const auto generated = generate_corpus(spec);
  const auto dir = StagePaths::of(o).data;
  fs::create_directories(dir);
  save_corpus(dir / "corpus.jsonl", generated.dialogues);
  save_knowledge_base(dir / "kb.json", generated.kb);
  std::size_t turns = 0;
  for (const auto& d : generated.dialogues) turns += d.turns.size();
  write_log(dir, "gen-corpus", o, start,
            {{"dialogues", generated.dialogues.size()}, {"turns", turns}, {"domains", generated.kb.tables.size()}});
  say(o, "gen-corpus: " + std::to_string(generated.dialogues.size()) + " dialogues -> " + dir.string());
}

void stage_pretrain(const PipelineOptions& o) {
  const auto start = Clock::now();
  const auto& c = o.config;
  const Data data = load_data(o);
  const Corpus few = fewshot_set(o, data);
  const Vocabulary vocab = Vocabulary::build({&data.split.source, &few});

  LaedTrainConfig t;
  t.model = laed_config(c, vocab.size());
  t.epochs = c.pretrain.epochs;
  t.learning_rate = c.pretrain.lr;
  t.batch_size = c.pretrain.batch;
  t.max_context_turns = c.model.max_context_turns;
  say(o, "pretrain: LAED on " + std::to_string(data.split.source.size()) + " source dialogues, vocabulary " +
             std::to_string(vocab.size()));
  const auto art = pretrain_laed(data.split.source, vocab, t, derive_seed(c.seed, kLaedStream));

  const auto dir = StagePaths::of(o).pretrain;
  fs::create_directories(dir);
  save_vocabulary(dir / "vocab.txt", vocab);
  const auto fp = c.fingerprint();
  const auto cfg = laed_config_json(t.model);
  save_checkpoint(dir / "divae", art.divae.params, "divae", fp, cfg);
  save_checkpoint(dir / "divst", art.divst.params, "divst", fp, cfg);
  save_checkpoint(dir / "sys_pred", art.sys_pred.params, "sys_pred", fp, cfg);
  write_log(dir, "pretrain", o, start,
            {{"source_dialogues", data.split.source.size()},
             {"vocabulary", vocab.size()},
             {"divae", history_json(art.divae_history)},
             {"divst", history_json(art.divst_history)},
             {"sys_pred", history_json(art.sys_pred_history)}});
  say(o, "pretrain: DI-VAE reconstruction accuracy " + std::to_string(art.divae_history.back().accuracy) + " -> " +
             dir.string());
}

void stage_train(const PipelineOptions& o) {
  const auto start = Clock::now();
  const auto& c = o.config;
  const Data data = load_data(o);
  const Laed laed = load_laed(o);
  const TurnEncoder enc = encoder_for(o, laed);

  std::vector<std::string> domains;
  std::vector<std::vector<HredExample>> examples;
  for (const auto& d : data.split.source) {
    for (std::size_t i = 1; i < d.turns.size(); i += 2) {
      const auto& dom = d.turns[i].domain;
      auto it = std::find(domains.begin(), domains.end(), dom);
      if (it == domains.end()) {
        domains.push_back(dom);
        examples.emplace_back();
        it = domains.end() - 1;
      }
      examples[it - domains.begin()].push_back(enc.encode(d, i));
    }
  }
  std::vector<SourceTask> tasks;
  for (std::size_t i = 0; i < domains.size(); ++i) tasks.push_back({domains[i], examples[i].size()});

  auto model = HredModel::create(hred_config(c, laed.vocab.size()), derive_seed(c.seed, kHredStream));
  if (!c.model.embeddings.empty()) load_pretrained_embeddings(model, laed.vocab, c.model.embeddings);
  MetaConfig mc{c.meta.method, c.meta.inner_lr, c.meta.outer_lr, c.meta.inner_k, c.meta.episodes,
                OptimizerKind::kAdam, c.meta.batch, c.seed};
  say(o, std::string("train: ") + meta_method_name(mc.method) + " over " + std::to_string(tasks.size()) +
             " source domains, " + std::to_string(mc.episodes) + " episodes");
  const std::size_t every = std::max<std::size_t>(1, mc.episodes / 4);
  const auto history = source_train(model.params, tasks, hred_loss_over(model, examples), mc,
                                    [&](std::size_t e, const ParamSet&) {
                                      if ((e + 1) % every == 0) say(o, "  episode " + std::to_string(e + 1));
                                    });

  const auto dir = StagePaths::of(o).train;
  fs::create_directories(dir);
  save_checkpoint(dir / "hred", model.params, "hred-source", c.fingerprint(), hred_config_json(model.config));
  auto task_list = ordered_json::array();
  for (const auto& t : tasks) task_list.push_back({{"domain", t.domain}, {"turns", t.size}});
  write_log(dir, "train", o, start,
            {{"method", meta_method_name(mc.method)},
             {"tasks", task_list},
             {"history", ordered_json::parse(history.to_json())}});
  say(o, "train: -> " + dir.string());
}

void stage_finetune(const PipelineOptions& o) {
  const auto start = Clock::now();
  const auto& c = o.config;
  const auto paths = StagePaths::of(o);
  const Data data = load_data(o);
  const Laed laed = load_laed(o);
  const auto model = load_hred(o, laed, paths.train / "hred", "hred-source", "train");
  const TurnEncoder enc = encoder_for(o, laed);

  const Corpus few = fewshot_set(o, data);
  const auto train = enc.encode_all(few);
  const auto val = enc.encode_all(data.split.target_validation);
  std::vector<std::vector<HredExample>> tasks{train};
  std::function<double(const ParamSet&)> validate;
  if (!val.empty()) validate = [&](const ParamSet& p) { return token_accuracy(model, p, val); };
  say(o, "finetune: " + std::to_string(few.size()) + " target dialogues (" + fraction_label(c.finetune.fraction) +
             " of the pool), " + std::to_string(train.size()) + " turns");
  const auto result = finetune(model.params, train.size(), hred_loss_over(model, tasks), validate,
                               {c.finetune.max_epochs, c.finetune.lr, c.finetune.batch, c.finetune.seed});

  fs::create_directories(paths.finetune);
  save_checkpoint(paths.finetune / "hred", result.params, "hred-finetuned", c.fingerprint(),
                  hred_config_json(model.config));
  ordered_json details{{"few_shot_fraction", c.finetune.fraction},
                       {"few_shot_dialogues", few.size()},
                       {"few_shot_turns", train.size()},
                       {"validation_turns", val.size()},
                       {"initial_val_accuracy", nullptr},
                       {"best_epoch", nullptr},
                       {"history", ordered_json::parse(result.history.to_json())},
                       {"warnings", result.history.warnings}};
  if (result.initial_val_accuracy) details["initial_val_accuracy"] = *result.initial_val_accuracy;
  if (result.history.best_epoch) details["best_epoch"] = *result.history.best_epoch;
  write_log(paths.finetune, "finetune", o, start, std::move(details));
  say(o, "finetune: " + std::to_string(result.history.records.size()) + " epochs -> " + paths.finetune.string());
}

EvalOutcome stage_eval(const PipelineOptions& o) {
  const auto start = Clock::now();
  const auto& c = o.config;
  const auto paths = StagePaths::of(o);
  const Data data = load_data(o);
  const Laed laed = load_laed(o);
  const auto source = load_hred(o, laed, paths.train / "hred", "hred-source", "train");
  const auto tuned = load_hred(o, laed, paths.finetune / "hred", "hred-finetuned", "finetune");
  const TurnEncoder enc = encoder_for(o, laed);
  if (data.split.target_test.empty()) {
    throw InvalidArgument("eval: target domain '" + c.data.target_domain + "' has no test dialogues");
  }

  EvalOptions opts;
  opts.domain = c.data.target_domain;
  opts.max_len = c.eval.max_len;
  opts.fingerprint = c.fingerprint();
  opts.fewshot_fraction = c.finetune.fraction;
  EvalOutcome out;
  out.finetuned = evaluate_model(tuned, tuned.params, enc, data.split.target_test, data.kb, opts);
  opts.fewshot_fraction = 0.0;
  out.source = evaluate_model(source, source.params, enc, data.split.target_test, data.kb, opts);

  fs::create_directories(paths.eval);
  write_file_atomic(paths.eval / "report.json", out.finetuned.to_json());
  write_file_atomic(paths.eval / "report.txt", out.finetuned.to_table());
  write_file_atomic(paths.eval / "source_report.json", out.source.to_json());
  write_log(paths.eval, "eval", o, start,
            {{"test_dialogues", data.split.target_test.size()},
             {"finetuned", ordered_json::parse(out.finetuned.to_json())},
             {"source", ordered_json::parse(out.source.to_json())}});
  say(o, "eval: before fine-tuning " + scores_line(out.source) + "; after " + scores_line(out.finetuned));
  say(o, "eval: -> " + (paths.eval / "report.json").string());
  return out;
}

EvalOutcome run_all(const PipelineOptions& o) {
  if (o.config.data.corpus.empty()) stage_gen_corpus(o);
  stage_pretrain(o);
  stage_train(o);
  stage_finetune(o);
  return stage_eval(o);
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot dialogue generation: LAED pretraining, meta-learned HRED, fine-tuning, evaluation", "datml"};
  app.require_subcommand(1);
  std::string config_path, out_dir = "datml-run", target, method;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<CLI::App*> subs;
  const std::vector<std::pair<const char*, const char*>> commands = {
      {"gen-corpus", "generate the synthetic multi-domain corpus"},
      {"pretrain", "pretrain DI-VAE, DI-VST and the system-latent predictor"},
      {"train", "meta-train HRED on the source domains"},
      {"finetune", "fine-tune on the few-shot target set"},
      {"eval", "score BLEU and Entity F1 on the target test set"},
      {"run-all", "every stage in order"}};
  for (const auto& [name, help] : commands) {
    auto* s = app.add_subcommand(name, help);
    auto* cfg = s->add_option("--config", config_path, "run configuration (JSON)");
    if (std::string(name) != "gen-corpus") cfg->required();
    s->add_option("--out", out_dir, "output directory")->capture_default_str();
    s->add_option("--target-domain", target, "held-out target domain");
    s->add_option("--fraction", fraction, "few-shot fraction of the target pool")->check(CLI::Range(0.0, 1.0));
    s->add_option("--method", method, "reptile, fomaml or multitask")
        ->check(CLI::IsMember({"reptile", "fomaml", "multitask"}));
    s->add_option("--seed", seed, "run seed (gen-corpus: generator seed)");
    subs.push_back(s);
  }

  std::vector<const char*> argv{"datml"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    PipelineOptions o;
    if (!config_path.empty()) o.config = RunConfig::load(config_path);
    o.out = out_dir;
    o.progress = &out;
    if (!target.empty()) o.config.data.target_domain = target;
    if (sub->count("--fraction")) o.config.finetune.fraction = fraction;
    if (!method.empty()) o.config.meta.method = parse_meta_method(method);
    if (sub->count("--seed")) (name == "gen-corpus" ? o.config.data.generate.seed : o.config.seed) = seed;
    o.config.validate();

    if (name == "gen-corpus") stage_gen_corpus(o);
    else if (name == "pretrain") stage_pretrain(o);
    else if (name == "train") stage_train(o);
    else if (name == "finetune") stage_finetune(o);
    else if (name == "eval") out << stage_eval(o).finetuned.to_table();
    else out << run_all(o).finetuned.to_table();
  } catch (const std::exception& e) {
    err << "datml " << name << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace datml::inline DATML_ABI
