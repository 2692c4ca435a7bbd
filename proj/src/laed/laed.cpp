#include "datml/laed/laed.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "datml/compute/layers.hpp"
#include "datml/compute/ops.hpp"
#include "datml/compute/optim.hpp"
#include "datml/error.hpp"

namespace datml::inline DATML_ABI {

namespace {

constexpr std::size_t kMaxEnumeratedAssignments = 4096;

std::size_t argmax_row(std::span<const Scalar> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

LatentPosterior posterior_from_logits(const Tensor& logits, std::size_t y, std::size_t k) {
  const auto probs = ops::softmax(logits.detach());
  LatentPosterior out;
  out.dists.resize(y);
  for (std::size_t i = 0; i < y; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += probs.at(i * k + j);
    for (std::size_t j = 0; j < k; ++j) out.dists[i].push_back(probs.at(i * k + j) / total);
  }
  return out;
}

LatentCode code_from_logits(const Tensor& logits, std::size_t y, std::size_t k) {
  LatentCode code;
  const auto d = logits.data();
  for (std::size_t i = 0; i < y; ++i) code.values.push_back(argmax_row(d.subspan(i * k, k)));
  return code;
}

// Final hidden state of a GRU over embedded tokens; zero for an empty input.
Tensor encode(const Tensor& embed, const GruRef& gru, const TokenIds& ids, double dropout, Rng* rng) {
  Tensor h = Tensor::zeros({gru.hidden()});
  for (auto id : ids) {
    Tensor x = ops::embedding(embed, id);
    if (rng) x = ops::dropout(x, dropout, *rng, true);
    h = gru.step(x, h);
  }
  return h;
}

// Summed teacher-forced NLL of `target` followed by eos, decoder state
// initialised from z.
Tensor decode_nll(const ParamSet& p, const std::string& group, const LaedConfig& c, const Tensor& z,
                  const TokenIds& target, Rng* rng) {
  const auto& embed = p["embed"];
  const auto init = linear_ref(p, group + ".init");
  const auto gru = gru_ref(p, group + ".gru");
  const auto out = linear_ref(p, group + ".out");
  Tensor h = ops::tanh(init(z));
  std::vector<Tensor> terms;
  terms.reserve(target.size() + 1);
  std::size_t input = c.bos;
  for (std::size_t t = 0; t <= target.size(); ++t) {
    const std::size_t gold = t < target.size() ? target[t] : c.eos;
    Tensor x = ops::embedding(embed, input);
    if (rng) x = ops::dropout(x, c.dropout, *rng, true);
    h = gru.step(x, h);
    Tensor feat = rng ? ops::dropout(h, c.dropout, *rng, true) : h;
    terms.push_back(ops::cross_entropy(out(feat), gold));
    input = gold;
  }
  return ops::add_n(terms);
}

std::vector<std::vector<std::size_t>> enumerate_assignments(std::size_t y, std::size_t k) {
  double count = std::pow(double(k), double(y));
  if (count > double(kMaxEnumeratedAssignments)) {
    throw ContractViolation("expected-latent mode enumerates k^y assignments; " + std::to_string(k) + "^" +
                            std::to_string(y) + " is too many");
  }
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> a(y, 0);
  while (true) {
    out.push_back(a);
    std::size_t i = 0;
    while (i < y && ++a[i] == k) a[i++] = 0;
    if (i == y) break;
  }
  return out;
}

// E_z[fn(z)] for each of fn's outputs, z drawn per `sampling`.
template <typename Fn>
std::vector<Tensor> expected_terms(const Tensor& logits, const Tensor& q, const LaedConfig& c,
                                   LatentSampling sampling, Rng& rng, Fn&& fn) {
  const std::size_t y = c.latent_y, k = c.latent_k;
  if (sampling != LatentSampling::kExpected) {
    const bool hard = sampling == LatentSampling::kStraightThrough;
    return fn(ops::reshape(ops::gumbel_softmax(logits, c.temperature, rng, hard), {y * k}));
  }
  const Tensor flat_q = ops::reshape(q, {y * k});
  std::vector<std::vector<Tensor>> weighted;
  for (const auto& a : enumerate_assignments(y, k)) {
    Tensor w = ops::pick(flat_q, a[0]);
    for (std::size_t i = 1; i < y; ++i) w = ops::mul(w, ops::pick(flat_q, i * k + a[i]));
    auto terms = fn(Tensor::vector(one_hot(LatentCode{a}, k)));
    for (std::size_t j = 0; j < terms.size(); ++j) {
      if (weighted.size() <= j) weighted.emplace_back();
      weighted[j].push_back(ops::scale_by(w, terms[j]));
    }
  }
  std::vector<Tensor> out;
  for (auto& w : weighted) out.push_back(ops::add_n(w));
  return out;
}

// KL(batch-mean posterior || uniform), summed over the y variables.
Tensor batch_kl(const std::vector<Tensor>& qs, const LaedConfig& c) {
  Tensor mean = ops::scale(ops::add_n(qs), static_cast<Scalar>(1.0 / double(qs.size())));
  const Tensor uniform = Tensor::from({c.latent_y, c.latent_k},
                                      std::vector<Scalar>(c.latent_y * c.latent_k, Scalar(1.0 / double(c.latent_k))));
  return ops::kl_categorical(mean, uniform);
}

Tensor logits_with(const LaedModel& m, const TokenIds& utt, Rng* rng) {
  const auto& c = m.config;
  const auto& p = m.params;
  const Tensor h = encode(p["embed"], gru_ref(p, "rec.gru"), utt, c.dropout, rng);
  return ops::reshape(linear_ref(p, "rec.out")(h), {c.latent_y, c.latent_k});
}

void check_ids(const TokenIds& ids, const LaedConfig& c) {
  for (auto id : ids) {
    if (id >= c.vocab_size) throw ContractViolation("token id " + std::to_string(id) + " outside the vocabulary");
  }
}

}  // namespace

LatentCode LatentPosterior::argmax() const {
  LatentCode code;
  for (const auto& d : dists) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.size(); ++i) {
      if (d[i] > d[best]) best = i;
    }
    code.values.push_back(best);
  }
  return code;
}

std::vector<Scalar> one_hot(const LatentCode& code, std::size_t k) {
  std::vector<Scalar> out(code.values.size() * k, Scalar(0));
  for (std::size_t i = 0; i < code.values.size(); ++i) {
    if (code.values[i] >= k) throw ContractViolation("latent value out of range");
    out[i * k + code.values[i]] = Scalar(1);
  }
  return out;
}

const char* laed_kind_name(LaedKind kind) { return kind == LaedKind::kDiVae ? "divae" : "divst"; }

void LaedConfig::validate() const {
  if (vocab_size == 0) throw InvalidArgument("laed: vocabulary is empty");
  if (bos >= vocab_size || eos >= vocab_size || pad >= vocab_size) {
    throw InvalidArgument("laed: special token ids exceed the vocabulary");
  }
  if (embed_dim == 0 || hidden_dim == 0) throw InvalidArgument("laed: layer sizes must be positive");
  if (latent_y == 0 || latent_k < 2) throw InvalidArgument("laed: need y >= 1 and k >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("laed: dropout must lie in [0, 1)");
  if (!(temperature > 0.0)) throw InvalidArgument("laed: temperature must be positive");
}

LaedModel LaedModel::create(LaedKind kind, const LaedConfig& config, std::uint64_t seed) {
  config.validate();
  LaedModel m;
  m.kind = kind;
  m.config = config;
  Rng rng(seed);
  const auto& c = config;
  m.params.add_uniform("embed", {c.vocab_size, c.embed_dim}, 0.1, rng);
  add_gru(m.params, "rec.gru", c.embed_dim, c.hidden_dim, rng);
  add_linear(m.params, "rec.out", c.hidden_dim, c.latent_y * c.latent_k, rng);
  for (const auto& g : m.generator_groups()) {
    add_linear(m.params, g + ".init", c.latent_y * c.latent_k, c.hidden_dim, rng);
    add_gru(m.params, g + ".gru", c.embed_dim, c.hidden_dim, rng);
    add_linear(m.params, g + ".out", c.hidden_dim, c.vocab_size, rng);
  }
  return m;
}

std::vector<std::string> LaedModel::generator_groups() const {
  if (kind == LaedKind::kDiVae) return {"dec"};
  return {"prev", "next"};
}

LaedLoss divae_loss(const LaedModel& model, std::span<const TokenIds> batch, const LaedLossOptions& options) {
  if (model.kind != LaedKind::kDiVae) throw ContractViolation("divae_loss needs a DI-VAE model");
  if (batch.empty()) throw InvalidArgument("divae_loss: empty batch");
  const auto& c = model.config;
  Rng rng(options.noise_seed);
  Rng* drop = options.training && c.dropout > 0.0 ? &rng : nullptr;
  std::vector<Tensor> qs, recon;
  std::size_t tokens = 0;
  for (const auto& x : batch) {
    check_ids(x, c);
    const Tensor logits = logits_with(model, x, drop);
    const Tensor q = ops::softmax(logits);
    qs.push_back(q);
    auto terms = expected_terms(logits, q, c, options.sampling, rng, [&](const Tensor& z) {
      return std::vector<Tensor>{decode_nll(model.params, "dec", c, z, x, drop)};
    });
    recon.push_back(terms[0]);
    tokens += x.size() + 1;
  }
  LaedLoss out;
  out.reconstruction = ops::scale(ops::add_n(recon), static_cast<Scalar>(1.0 / double(tokens)));
  out.kl = batch_kl(qs, c);
  out.total = ops::add(out.reconstruction, out.kl);
  return out;
}

LaedLoss divst_loss(const LaedModel& model, std::span<const VstTriple> batch, const LaedLossOptions& options) {
  if (model.kind != LaedKind::kDiVst) throw ContractViolation("divst_loss needs a DI-VST model");
  if (batch.empty()) throw InvalidArgument("divst_loss: empty batch");
  const auto& c = model.config;
  Rng rng(options.noise_seed);
  Rng* drop = options.training && c.dropout > 0.0 ? &rng : nullptr;
  std::vector<Tensor> qs, prev_terms, next_terms;
  std::size_t prev_tokens = 0, next_tokens = 0;
  for (const auto& tr : batch) {
    check_ids(tr.prev, c);
    check_ids(tr.current, c);
    check_ids(tr.next, c);
    const Tensor logits = logits_with(model, tr.current, drop);
    const Tensor q = ops::softmax(logits);
    qs.push_back(q);
    auto terms = expected_terms(logits, q, c, options.sampling, rng, [&](const Tensor& z) {
      std::vector<Tensor> t;
      if (options.use_prev) t.push_back(decode_nll(model.params, "prev", c, z, tr.prev, drop));
      if (options.use_next) t.push_back(decode_nll(model.params, "next", c, z, tr.next, drop));
      return t;
    });
    std::size_t j = 0;
    if (options.use_prev) prev_terms.push_back(terms[j++]);
    if (options.use_next) next_terms.push_back(terms[j++]);
    prev_tokens += tr.prev.size() + 1;
    next_tokens += tr.next.size() + 1;
  }
  std::vector<Tensor> parts;
  if (options.use_prev) {
    parts.push_back(ops::scale(ops::add_n(prev_terms), static_cast<Scalar>(1.0 / double(prev_tokens))));
  }
  if (options.use_next) {
    parts.push_back(ops::scale(ops::add_n(next_terms), static_cast<Scalar>(1.0 / double(next_tokens))));
  }
  LaedLoss out;
  out.reconstruction = parts.empty() ? Tensor::scalar(0) : ops::add_n(parts);
  out.kl = batch_kl(qs, c);
  out.total = ops::add(out.reconstruction, out.kl);
  return out;
}

Tensor recognition_logits(const LaedModel& model, const TokenIds& utterance) {
  check_ids(utterance, model.config);
  return logits_with(model, utterance, nullptr);
}

LatentPosterior posterior(const LaedModel& model, const TokenIds& utterance) {
  return posterior_from_logits(recognition_logits(model, utterance), model.config.latent_y, model.config.latent_k);
}

LatentCode recognize(const LaedModel& model, const TokenIds& utterance) {
  return code_from_logits(recognition_logits(model, utterance), model.config.latent_y, model.config.latent_k);
}

double reconstruction_accuracy(const LaedModel& model, std::span<const TokenIds> utterances) {
  if (model.kind != LaedKind::kDiVae) throw ContractViolation("reconstruction_accuracy needs a DI-VAE model");
  const auto& c = model.config;
  const ParamSet p = detached(model.params);
  const auto& embed = p["embed"];
  const auto rec = gru_ref(p, "rec.gru");
  const auto rec_out = linear_ref(p, "rec.out");
  const auto init = linear_ref(p, "dec.init");
  const auto gru = gru_ref(p, "dec.gru");
  const auto out = linear_ref(p, "dec.out");
  std::size_t correct = 0, total = 0;
  for (const auto& x : utterances) {
    const Tensor logits = rec_out(encode(embed, rec, x, 0.0, nullptr));
    const auto code = code_from_logits(logits, c.latent_y, c.latent_k);
    Tensor h = ops::tanh(init(Tensor::vector(one_hot(code, c.latent_k))));
    std::size_t input = c.bos;
    for (std::size_t t = 0; t <= x.size(); ++t) {
      const std::size_t gold = t < x.size() ? x[t] : c.eos;
      h = gru.step(ops::embedding(embed, input), h);
      correct += argmax_row(out(h).data()) == gold;
      ++total;
      input = gold;
    }
  }
  return total == 0 ? 0.0 : double(correct) / double(total);
}

SysLatentPredictor SysLatentPredictor::create(const LaedConfig& config, std::uint64_t seed) {
  config.validate();
  SysLatentPredictor pred;
  pred.config = config;
  Rng rng(seed);
  const auto& c = config;
  pred.params.add_uniform("embed", {c.vocab_size, c.embed_dim}, 0.1, rng);
  add_gru(pred.params, "utt.gru", c.embed_dim, c.hidden_dim, rng);
  add_gru(pred.params, "ctx.gru", c.hidden_dim, c.hidden_dim, rng);
  add_linear(pred.params, "out", c.hidden_dim, c.latent_y * c.latent_k, rng);
  return pred;
}

Tensor sys_latent_logits(const SysLatentPredictor& pred, std::span<const TokenIds> context, const TokenIds& user,
                         Rng* dropout_rng) {
  const auto& c = pred.config;
  const auto& p = pred.params;
  const auto& embed = p["embed"];
  const auto utt = gru_ref(p, "utt.gru");
  const auto ctx = gru_ref(p, "ctx.gru");
  const std::size_t first =
      pred.max_context_turns == 0 || context.size() <= pred.max_context_turns ? 0
                                                                               : context.size() - pred.max_context_turns;
  Tensor h = Tensor::zeros({c.hidden_dim});
  for (std::size_t i = first; i < context.size(); ++i) {
    check_ids(context[i], c);
    h = ctx.step(encode(embed, utt, context[i], c.dropout, dropout_rng), h);
  }
  check_ids(user, c);
  h = ctx.step(encode(embed, utt, user, c.dropout, dropout_rng), h);
  return ops::reshape(linear_ref(p, "out")(h), {c.latent_y, c.latent_k});
}

Tensor sys_latent_loss(const SysLatentPredictor& pred, std::span<const SysLatentExample> batch,
                       std::uint64_t noise_seed, bool training) {
  if (batch.empty()) throw InvalidArgument("sys_latent_loss: empty batch");
  const auto& c = pred.config;
  Rng rng(noise_seed);
  Rng* drop = training && c.dropout > 0.0 ? &rng : nullptr;
  std::vector<Tensor> terms;
  for (const auto& ex : batch) {
    if (ex.target.values.size() != c.latent_y) throw ContractViolation("sys_latent_loss: target code has wrong length");
    const Tensor logits = ops::reshape(sys_latent_logits(pred, ex.context, ex.user, drop), {c.latent_y * c.latent_k});
    for (std::size_t i = 0; i < c.latent_y; ++i) {
      terms.push_back(ops::cross_entropy(ops::slice(logits, i * c.latent_k, c.latent_k), ex.target.values[i]));
    }
  }
  return ops::scale(ops::add_n(terms), static_cast<Scalar>(1.0 / double(batch.size())));
}

LatentPosterior predict_sys_latent_distribution(const SysLatentPredictor& pred, std::span<const TokenIds> context,
                                                const TokenIds& user) {
  return posterior_from_logits(sys_latent_logits(pred, context, user), pred.config.latent_y, pred.config.latent_k);
}

LatentCode predict_sys_latent(const SysLatentPredictor& pred, std::span<const TokenIds> context,
                              const TokenIds& user) {
  return code_from_logits(sys_latent_logits(pred, context, user), pred.config.latent_y, pred.config.latent_k);
}

std::vector<TokenIds> corpus_utterances(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<TokenIds> out;
  for (const auto& d : corpus) {
    for (const auto& t : d.turns) out.push_back(vocab.encode(t.tokens));
  }
  return out;
}

std::vector<VstTriple> corpus_triples(const Corpus& corpus, const Vocabulary& vocab) {
  const TokenIds missing{Vocabulary::kPad};
  std::vector<VstTriple> out;
  for (const auto& d : corpus) {
    const std::size_t n = d.turns.size();
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back({i > 0 ? vocab.encode(d.turns[i - 1].tokens) : missing, vocab.encode(d.turns[i].tokens),
                     i + 1 < n ? vocab.encode(d.turns[i + 1].tokens) : missing});
    }
  }
  return out;
}

std::vector<TokenIds> context_before(const Dialogue& dialogue, std::size_t index, std::size_t max_turns,
                                     const Vocabulary& vocab) {
  const std::size_t first = max_turns == 0 || index <= max_turns ? 0 : index - max_turns;
  std::vector<TokenIds> out;
  for (std::size_t i = first; i < index; ++i) out.push_back(vocab.encode(dialogue.turns[i].tokens));
  return out;
}

namespace {

// One pass of shuffled minibatch Adam steps; returns the mean batch loss.
template <typename T, typename LossFn>
double run_epoch(ParamSet& params, OptimizerState& opt, std::vector<T>& items, std::size_t batch_size, Rng& rng,
                 LossFn&& loss_fn) {
  shuffle(std::span<T>(items), rng);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < items.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, items.size() - start);
    params.zero_grad();
    const Tensor loss = loss_fn(std::span<const T>(items.data() + start, n), rng());
    backward(loss);
    adam_step(params, opt);
    total += loss.item();
    ++batches;
  }
  return batches == 0 ? 0.0 : total / double(batches);
}

std::vector<TokenIds> monitor_subset(const std::vector<TokenIds>& all, std::size_t limit) {
  if (limit == 0 || all.size() <= limit) return all;
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(limit)};
}

double code_accuracy(const SysLatentPredictor& pred, std::span<const SysLatentExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : examples) hits += predict_sys_latent(pred, ex.context, ex.user) == ex.target;
  return double(hits) / double(examples.size());
}

}  // namespace

void freeze(LaedModel& model) { set_trainable(model.params, false); }
void freeze(SysLatentPredictor& pred) { set_trainable(pred.params, false); }

LaedArtifacts pretrain_laed(const Corpus& corpus, const Vocabulary& vocab, const LaedTrainConfig& config,
                            std::uint64_t seed) {
  if (corpus.empty()) throw InvalidArgument("pretrain_laed: corpus is empty");
  if (config.batch_size == 0) throw InvalidArgument("pretrain_laed: batch size must be positive");
  bool has_pair = false;
  for (const auto& d : corpus) has_pair = has_pair || d.turns.size() >= 2;
  if (!has_pair) throw InvalidArgument("pretrain_laed: corpus has no consecutive turns to form a triple");

  LaedConfig mc = config.model;
  mc.vocab_size = vocab.size();
  LaedArtifacts out;
  out.divae = LaedModel::create(LaedKind::kDiVae, mc, derive_seed(seed, 1));
  out.divst = LaedModel::create(LaedKind::kDiVst, mc, derive_seed(seed, 2));
  out.sys_pred = SysLatentPredictor::create(mc, derive_seed(seed, 3));
  out.sys_pred.max_context_turns = config.max_context_turns;

  auto utterances = corpus_utterances(corpus, vocab);
  const auto monitor = monitor_subset(utterances, config.monitor_limit);
  {
    OptimizerState opt = OptimizerState::adam(config.learning_rate);
    Rng rng(derive_seed(seed, 11));
    out.divae_history.push_back({0, 0.0, reconstruction_accuracy(out.divae, monitor)});
    for (std::size_t e = 1; e <= config.epochs; ++e) {
      const double loss = run_epoch(out.divae.params, opt, utterances, config.batch_size, rng,
                                    [&](std::span<const TokenIds> b, std::uint64_t s) {
                                      return divae_loss(out.divae, b, {.noise_seed = s}).total;
                                    });
      out.divae_history.push_back({e, loss, reconstruction_accuracy(out.divae, monitor)});
    }
  }
  {
    auto triples = corpus_triples(corpus, vocab);
    OptimizerState opt = OptimizerState::adam(config.learning_rate);
    Rng rng(derive_seed(seed, 12));
    out.divst_history.push_back({0, 0.0, 0.0});
    for (std::size_t e = 1; e <= config.epochs; ++e) {
      const double loss = run_epoch(out.divst.params, opt, triples, config.batch_size, rng,
                                    [&](std::span<const VstTriple> b, std::uint64_t s) {
                                      return divst_loss(out.divst, b, {.noise_seed = s}).total;
                                    });
      out.divst_history.push_back({e, loss, 0.0});
    }
  }
  freeze(out.divae);
  freeze(out.divst);

  for (const auto& d : corpus) {
    for (std::size_t i = 1; i < d.turns.size(); i += 2) {
      SysLatentExample ex;
      ex.context = context_before(d, i - 1, config.max_context_turns, vocab);
      ex.user = vocab.encode(d.turns[i - 1].tokens);
      ex.target = recognize(out.divst, vocab.encode(d.turns[i].tokens));
      out.sys_pred_examples.push_back(std::move(ex));
    }
  }
  {
    auto examples = out.sys_pred_examples;
    OptimizerState opt = OptimizerState::adam(config.learning_rate);
    Rng rng(derive_seed(seed, 13));
    out.sys_pred_history.push_back({0, 0.0, code_accuracy(out.sys_pred, out.sys_pred_examples)});
    for (std::size_t e = 1; e <= config.epochs; ++e) {
      const double loss = run_epoch(out.sys_pred.params, opt, examples, config.batch_size, rng,
                                    [&](std::span<const SysLatentExample> b, std::uint64_t s) {
                                      return sys_latent_loss(out.sys_pred, b, s);
                                    });
      out.sys_pred_history.push_back({e, loss, code_accuracy(out.sys_pred, out.sys_pred_examples)});
    }
  }
  freeze(out.sys_pred);
  return out;
}

}  // namespace datml::inline DATML_ABI
