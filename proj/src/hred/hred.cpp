#include "datml/hred/hred.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "datml/compute/layers.hpp"
#include "datml/compute/ops.hpp"
#include "datml/error.hpp"

namespace datml::inline DATML_ABI {

void HredConfig::validate() const {
  if (vocab_size == 0) throw InvalidArgument("hred: vocabulary is empty");
  if (bos >= vocab_size || eos >= vocab_size || unk >= vocab_size) {
    throw InvalidArgument("hred: special token ids exceed the vocabulary");
  }
  if (embed_dim == 0 || hidden_dim == 0) throw InvalidArgument("hred: layer sizes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("hred: dropout must lie in [0, 1)");
  if (latents_enabled && (latent_y == 0 || latent_k < 2)) throw InvalidArgument("hred: need y >= 1 and k >= 2");
}

HredModel HredModel::create(const HredConfig& config, std::uint64_t seed) {
  config.validate();
  HredModel m;
  m.config = config;
  const auto& c = config;
  Rng rng(seed);
  auto& p = m.params;
  p.add_uniform("embed", {c.vocab_size, c.embed_dim}, 0.1, rng);
  add_gru(p, "enc.gru", c.embed_dim, c.hidden_dim, rng);
  add_gru(p, "ctx.gru", c.hidden_dim, c.hidden_dim, rng);
  add_linear(p, "dec.init", c.hidden_dim, c.hidden_dim, rng);
  add_gru(p, "dec.gru", c.embed_dim, c.hidden_dim, rng);
  add_linear(p, "attn", c.hidden_dim, c.hidden_dim, rng, false);
  add_linear(p, "out", 2 * c.hidden_dim, c.vocab_size, rng);
  add_linear(p, "gate", 2 * c.hidden_dim + c.embed_dim, 1, rng);
  if (c.latents_enabled) {
    // Separate stream so the shared parameters match a latent-free model.
    Rng latent_rng(derive_seed(seed, 0x1a7e));
    add_linear(p, "latent", c.latent_width(), c.hidden_dim, latent_rng, false);
  }
  return m;
}

HredExample make_example(const Vocabulary& vocab, const std::vector<std::vector<std::string>>& context,
                         const std::vector<std::string>& user, const std::vector<std::string>& response,
                         std::size_t max_context_turns) {
  HredExample ex;
  std::unordered_map<std::string, std::size_t> oov;
  auto copy_id = [&](const std::string& w) {
    if (vocab.contains(w)) return vocab.id(w);
    auto [it, fresh] = oov.emplace(w, vocab.size() + ex.oov.size());
    if (fresh) ex.oov.push_back(w);
    return it->second;
  };
  const std::size_t first =
      max_context_turns == 0 || context.size() <= max_context_turns ? 0 : context.size() - max_context_turns;
  auto push = [&](const std::vector<std::string>& utt) {
    ex.utterances.push_back(vocab.encode(utt));
    TokenIds ids;
    for (const auto& w : utt) ids.push_back(copy_id(w));
    ex.copy_ids.push_back(std::move(ids));
  };
  for (std::size_t i = first; i < context.size(); ++i) push(context[i]);
  push(user);
  for (const auto& w : response) {
    if (vocab.contains(w)) {
      ex.response.push_back(vocab.id(w));
    } else {
      auto it = oov.find(w);
      ex.response.push_back(it == oov.end() ? Vocabulary::kUnk : it->second);
    }
  }
  return ex;
}

std::vector<std::string> example_tokens(const HredExample& ex, const Vocabulary& vocab, const TokenIds& ids) {
  std::vector<std::string> out;
  for (auto id : ids) {
    if (id < vocab.size()) {
      out.push_back(vocab.token(id));
    } else if (id - vocab.size() < ex.oov.size()) {
      out.push_back(ex.oov[id - vocab.size()]);
    } else {
      throw ContractViolation("token id " + std::to_string(id) + " outside the extended vocabulary");
    }
  }
  return out;
}

DecoderStep copy_distribution(const HredModel& model, const ParamSet& params, const Tensor& state,
                              const Tensor& context_states, std::span<const std::size_t> context_ids,
                              std::size_t extended_size, const Tensor& input_embedding, Rng* dropout_rng) {
  if (context_ids.empty()) throw ContractViolation("copy_distribution: empty context");
  DecoderStep step;
  const Tensor scores = ops::matvec(context_states, linear_ref(params, "attn", false)(state));
  step.attention = ops::softmax(scores);
  const Tensor attended = ops::matvec_t(context_states, step.attention);
  const std::vector<Tensor> feat_parts{state, attended};
  const Tensor feat = ops::concat(feat_parts);
  const Tensor out_in = dropout_rng ? ops::dropout(feat, model.config.dropout, *dropout_rng, true) : feat;
  step.vocab = ops::softmax(linear_ref(params, "out")(out_in));
  const std::vector<Tensor> gate_parts{feat, input_embedding};
  step.p_gen = ops::sigmoid(linear_ref(params, "gate")(ops::concat(gate_parts)));
  step.copy = ops::scatter_add(step.attention, context_ids, extended_size);
  step.mixed = ops::add(ops::scale_by(step.p_gen, ops::zero_extend(step.vocab, extended_size)),
                        ops::scale_by(ops::one_minus(step.p_gen), step.copy));
  return step;
}

namespace {

struct Encoded {
  Tensor states;  // [n, H] over all context tokens
  std::vector<std::size_t> ids;
  Tensor init;  // decoder initial state
};

void check_latents(const HredConfig& c, const HredExample& ex) {
  const bool given = ex.z_usr.has_value() || ex.z_sys.has_value();
  if (c.latents_enabled) {
    if (!ex.z_usr || !ex.z_sys) throw ContractViolation("hred: model expects z_usr and z_sys");
    for (const auto* z : {&*ex.z_usr, &*ex.z_sys}) {
      if (z->values.size() != c.latent_y) throw ContractViolation("hred: latent code length differs from config");
    }
  } else if (given) {
    throw ContractViolation("hred: latent codes supplied to a model without latent conditioning");
  }
}

Encoded encode(const HredModel& model, const ParamSet& p, const HredExample& ex, Rng* rng) {
  const auto& c = model.config;
  if (ex.utterances.size() != ex.copy_ids.size() || ex.utterances.empty()) {
    throw ContractViolation("hred: malformed example context");
  }
  check_latents(c, ex);
  const auto& embed = p["embed"];
  const auto enc = gru_ref(p, "enc.gru");
  const auto ctx = gru_ref(p, "ctx.gru");
  std::vector<Tensor> token_states;
  Encoded out;
  Tensor context = Tensor::zeros({c.hidden_dim});
  for (std::size_t u = 0; u < ex.utterances.size(); ++u) {
    const auto& utt = ex.utterances[u];
    if (utt.size() != ex.copy_ids[u].size()) throw ContractViolation("hred: copy ids misaligned with utterance");
    Tensor h = Tensor::zeros({c.hidden_dim});
    for (std::size_t t = 0; t < utt.size(); ++t) {
      if (utt[t] >= c.vocab_size) throw ContractViolation("hred: utterance id outside the vocabulary");
      Tensor x = ops::embedding(embed, utt[t]);
      if (rng) x = ops::dropout(x, c.dropout, *rng, true);
      h = enc.step(x, h);
      token_states.push_back(h);
      out.ids.push_back(ex.copy_ids[u][t]);
    }
    context = ctx.step(h, context);
  }
  if (token_states.empty()) throw InvalidArgument("hred: context and user utterance contain no tokens");
  out.states = ops::stack(token_states);
  Tensor pre = linear_ref(p, "dec.init")(context);
  if (c.latents_enabled) {
    auto z = one_hot(*ex.z_usr, c.latent_k);
    const auto zs = one_hot(*ex.z_sys, c.latent_k);
    z.insert(z.end(), zs.begin(), zs.end());
    pre = ops::add(pre, linear_ref(p, "latent", false)(Tensor::vector(std::move(z))));
  }
  out.init = ops::tanh(pre);
  return out;
}

std::size_t argmax(std::span<const Scalar> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Runs the decoder over `targets` (teacher forcing) and calls `visit` with
// each step's distributions and gold id.
template <typename Visit>
void teacher_force(const HredModel& model, const ParamSet& p, const HredExample& ex, Rng* rng, Visit&& visit) {
  const auto& c = model.config;
  const auto enc = encode(model, p, ex, rng);
  const auto& embed = p["embed"];
  const auto dec = gru_ref(p, "dec.gru");
  const std::size_t ext = ex.extended_size(c.vocab_size);
  Tensor h = enc.init;
  std::size_t input = c.bos;
  for (std::size_t t = 0; t <= ex.response.size(); ++t) {
    const std::size_t gold = t < ex.response.size() ? ex.response[t] : c.eos;
    if (gold >= ext) throw ContractViolation("hred: response id outside the extended vocabulary");
    Tensor x = ops::embedding(embed, input);
    if (rng) x = ops::dropout(x, c.dropout, *rng, true);
    h = dec.step(x, h);
    visit(copy_distribution(model, p, h, enc.states, enc.ids, ext, x, rng), gold);
    input = gold < c.vocab_size ? gold : c.unk;
  }
}

}  // namespace

Tensor hred_loss(const HredModel& model, const ParamSet& params, const HredExample& example,
                 const HredLossOptions& options) {
  if (example.response.empty()) throw InvalidArgument("hred_loss: gold response is empty");
  Rng rng(options.noise_seed);
  Rng* drop = options.training && model.config.dropout > 0.0 ? &rng : nullptr;
  std::vector<Tensor> terms;
  teacher_force(model, params, example, drop, [&](const DecoderStep& step, std::size_t gold) {
    terms.push_back(ops::nll_of_probability(step.mixed, gold));
  });
  return ops::scale(ops::add_n(terms), static_cast<Scalar>(1.0 / double(terms.size())));
}

Tensor hred_loss(const HredModel& model, const HredExample& example, const HredLossOptions& options) {
  return hred_loss(model, model.params, example, options);
}

Tensor hred_batch_loss(const HredModel& model, const ParamSet& params, std::span<const HredExample> batch,
                       const HredLossOptions& options) {
  if (batch.empty()) throw InvalidArgument("hred_batch_loss: empty batch");
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    terms.push_back(hred_loss(model, params, batch[i],
                              {.noise_seed = derive_seed(options.noise_seed, i), .training = options.training}));
  }
  return ops::scale(ops::add_n(terms), static_cast<Scalar>(1.0 / double(batch.size())));
}

TokenIds generate_response(const HredModel& model, const ParamSet& params, const HredExample& example,
                           std::size_t max_len) {
  if (max_len == 0) throw InvalidArgument("generate_response: max_len must be at least 1");
  const auto& c = model.config;
  const auto enc = encode(model, params, example, nullptr);
  const auto& embed = params["embed"];
  const auto dec = gru_ref(params, "dec.gru");
  const std::size_t ext = example.extended_size(c.vocab_size);
  Tensor h = enc.init;
  std::size_t input = c.bos;
  TokenIds out;
  while (out.size() < max_len) {
    const Tensor x = ops::embedding(embed, input);
    h = dec.step(x, h);
    const auto step = copy_distribution(model, params, h, enc.states, enc.ids, ext, x);
    const std::size_t next = argmax(step.mixed.data());
    if (next == c.eos) break;
    out.push_back(next);
    input = next < c.vocab_size ? next : c.unk;
  }
  return out;
}

TokenIds generate_response(const HredModel& model, const HredExample& example, std::size_t max_len) {
  return generate_response(model, model.params, example, max_len);
}

double token_accuracy(const HredModel& model, const ParamSet& params, std::span<const HredExample> examples) {
  std::size_t correct = 0, total = 0;
  for (const auto& ex : examples) {
    teacher_force(model, params, ex, nullptr, [&](const DecoderStep& step, std::size_t gold) {
      correct += argmax(step.mixed.data()) == gold;
      ++total;
    });
  }
  return total == 0 ? 0.0 : double(correct) / double(total);
}

std::size_t load_pretrained_embeddings(HredModel& model, const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open embedding file");
  auto table = model.params.get("embed").mutable_data();
  const std::size_t dim = model.config.embed_dim;
  std::size_t replaced = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<Scalar> values;
    double v;
    while (fields >> v) values.push_back(static_cast<Scalar>(v));
    if (!fields.eof()) throw IoError(path.string(), "line " + std::to_string(line_no) + ": non-numeric value");
    if (values.size() != dim) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                            " values, found " + std::to_string(values.size()));
    }
    if (!vocab.contains(token)) continue;
    std::copy(values.begin(), values.end(), table.begin() + static_cast<std::ptrdiff_t>(vocab.id(token) * dim));
    ++replaced;
  }
  return replaced;
}

HredExample TurnEncoder::encode(const Dialogue& dialogue, std::size_t sys_turn) const {
  if (!vocab) throw ContractViolation("TurnEncoder: no vocabulary");
  if (sys_turn == 0 || sys_turn >= dialogue.turns.size() || dialogue.turns[sys_turn].speaker != Speaker::kSystem) {
    throw ContractViolation("TurnEncoder: turn " + std::to_string(sys_turn) + " of '" + dialogue.id +
                            "' is not a system turn");
  }
  const std::size_t user = sys_turn - 1;
  std::vector<std::vector<std::string>> context;
  for (std::size_t i = 0; i < user; ++i) context.push_back(dialogue.turns[i].tokens);
  auto ex = make_example(*vocab, context, dialogue.turns[user].tokens, dialogue.turns[sys_turn].tokens,
                         max_context_turns);
  if (divae && sys_pred) {
    const TokenIds user_ids = vocab->encode(dialogue.turns[user].tokens);
    ex.z_usr = recognize(*divae, user_ids);
    ex.z_sys = predict_sys_latent(*sys_pred, context_before(dialogue, user, sys_pred->max_context_turns, *vocab),
                                  user_ids);
  }
  return ex;
}

std::vector<HredExample> TurnEncoder::encode_all(const Corpus& corpus) const {
  std::vector<HredExample> out;
  for (const auto& d : corpus) {
    for (std::size_t i = 1; i < d.turns.size(); i += 2) out.push_back(encode(d, i));
  }
  return out;
}

}  // namespace datml::inline DATML_ABI
