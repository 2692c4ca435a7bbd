#include <cmath>
#include <algorithm>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "acceptance.hpp"
#include "datml/compute/gradcheck.hpp"
#include "datml/compute/ops.hpp"
#include "datml/compute/optim.hpp"
#include "datml/hred/hred.hpp"
#include "datml/laed/laed.hpp"
#include "datml/meta/meta.hpp"
#include "reference_laed.hpp"

using namespace datml;

static_assert(sizeof(Scalar) == 8, "link against datml_f64");

namespace acceptance {
namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

TokenIds utterance(Rng& rng, std::size_t vocab, std::size_t max_len) {
  TokenIds out(uniform_index(rng, max_len + 1));
  for (auto& t : out) t = 4 + uniform_index(rng, vocab - 4);
  return out;
}

std::vector<double> values(const ParamSet& p) {
  std::vector<double> out;
  for (const auto& [name, t] : p) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

ParamSet random_params(Rng& rng, std::size_t n) {
  ParamSet p;
  p.add_uniform("a", {n}, 1.0, rng);
  p.add_uniform("b", {2, n}, 1.0, rng);
  return p;
}

BatchLoss linear_loss(const ParamSet& coeffs) {
  return [coeffs](const ParamSet& p, std::span<const ItemRef>, std::uint64_t) {
    std::vector<Tensor> terms;
    for (const auto& [name, t] : p)
      terms.push_back(ops::dot(ops::reshape(coeffs[name], {t.numel()}), ops::reshape(t, {t.numel()})));
    return ops::add_n(terms);
  };
}

void sgd(ParamSet& p, const Tensor& loss, double lr) {
  p.zero_grad();
  backward(loss);
  auto opt = OptimizerState::sgd(lr);
  sgd_step(p, opt);
}

}  // namespace

Outcome gradients() {
  constexpr int kInstances = 20;
  Rng rng(20240);
  double worst[3] = {0, 0, 0};
  for (int trial = 0; trial < kInstances; ++trial) {
    const std::size_t vocab = 6 + uniform_index(rng, 5);
    LaedConfig c;
    c.vocab_size = vocab;
    c.embed_dim = 2 + uniform_index(rng, 3);
    c.hidden_dim = 2 + uniform_index(rng, 4);
    c.latent_y = 1 + uniform_index(rng, 3);
    c.latent_k = 2 + uniform_index(rng, 3);
    c.dropout = 0.2;
    const std::uint64_t seed = 1000 + trial;
    const LaedLossOptions relaxed{.noise_seed = seed, .sampling = LatentSampling::kRelaxed};

    auto vae = LaedModel::create(LaedKind::kDiVae, c, seed);
    const std::vector<TokenIds> batch{utterance(rng, vocab, 3), utterance(rng, vocab, 3)};
    worst[0] = std::max(worst[0], finite_diff_check([&](const ParamSet&) { return divae_loss(vae, batch, relaxed).total; },
                                                    vae.params, 1e-3)
                                      .max_relative_error);

    auto vst = LaedModel::create(LaedKind::kDiVst, c, seed + 50);
    const std::vector<VstTriple> triples{{utterance(rng, vocab, 2), utterance(rng, vocab, 2), utterance(rng, vocab, 2)}};
    worst[1] = std::max(worst[1], finite_diff_check([&](const ParamSet&) { return divst_loss(vst, triples, relaxed).total; },
                                                    vst.params, 1e-3)
                                      .max_relative_error);

    HredConfig h;
    h.vocab_size = vocab;
    h.embed_dim = c.embed_dim;
    h.hidden_dim = c.hidden_dim;
    h.latents_enabled = true;
    h.latent_y = c.latent_y;
    h.latent_k = c.latent_k;
    h.dropout = 0.2;
    auto model = HredModel::create(h, seed + 100);
    HredExample ex;
    ex.utterances = {utterance(rng, vocab, 3), {4, 5}};
    ex.copy_ids = ex.utterances;
    ex.copy_ids[1][1] = vocab;
    ex.oov = {"x"};
    ex.response = {4 + uniform_index(rng, vocab - 4), vocab, 4};
    LatentCode zu, zs;
    for (std::size_t i = 0; i < c.latent_y; ++i) {
      zu.values.push_back(uniform_index(rng, c.latent_k));
      zs.values.push_back(uniform_index(rng, c.latent_k));
    }
    ex.z_usr = zu;
    ex.z_sys = zs;
    worst[2] = std::max(worst[2], finite_diff_check([&](const ParamSet& ps) {
                                    return hred_loss(model, ps, ex, {.noise_seed = seed});
                                  },
                                                    model.params, 1e-3)
                                      .max_relative_error);
  }
  const bool pass = worst[0] < 1e-3 && worst[1] < 1e-3 && worst[2] < 1e-3;
  return {pass, std::to_string(kInstances) + " instances each; max rel err divae " + fmt("%.2e", worst[0]) +
                    ", divst " + fmt("%.2e", worst[1]) + ", hred " + fmt("%.2e", worst[2])};
}

Outcome reptile_algebra() {
  Rng rng(77);
  double interp = 0.0, composed = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 6);
    auto theta = random_params(rng, n);
    const auto other = random_params(rng, n);
    const double alpha = uniform01(rng);
    const auto t0 = values(theta), t1 = values(other);
    auto moved = theta.clone();
    reptile_update(moved, other, alpha);
    const auto out = values(moved);
    for (std::size_t i = 0; i < out.size(); ++i)
      interp = std::max(interp, std::abs(out[i] - (t0[i] + alpha * (t1[i] - t0[i]))));

    const auto g = random_params(rng, n);
    const double beta = uniform01(rng);
    auto direct = theta.clone();
    const Episode ep{0, {Batch{{0, 0}}}};
    const auto adapted = inner_adapt(theta, ep, beta, 1, OptimizerKind::kSgd, linear_loss(g));
    reptile_update(theta, adapted, alpha);
    sgd(direct, linear_loss(g)(direct, {}, 0), alpha * beta);
    const auto a = values(theta), b = values(direct);
    for (std::size_t i = 0; i < a.size(); ++i) composed = std::max(composed, std::abs(a[i] - b[i]));
  }
  return {interp <= 1e-7 && composed <= 1e-6,
          "100 ParamSets; interpolation err " + fmt("%.1e", interp) + ", k=1 vs SGD(alpha*beta) err " +
              fmt("%.1e", composed)};
}

Outcome fomaml_algebra() {
  const BatchLoss square = [](const ParamSet& p, std::span<const ItemRef>, std::uint64_t) {
    return ops::mul(p["w"], p["w"]);
  };
  const BatchLoss flat = [](const ParamSet& p, std::span<const ItemRef>, std::uint64_t) {
    return ops::scale(ops::sum(p["w"]), 0.0);
  };
  const Batch query{{0, 0}};
  double err = 0.0;

  Rng rng(5);
  ParamSet theta;
  theta.add_uniform("w", {4}, 1.0, rng);
  const auto before = values(theta);
  fomaml_update(theta, theta.clone(), query, 0.1, flat);
  const auto after = values(theta);
  for (std::size_t i = 0; i < before.size(); ++i) err = std::max(err, std::abs(after[i] - before[i]));
  const double identity = err;

  ParamSet one, adapted;
  one.add("w", Tensor::vector({1}));
  adapted.add("w", Tensor::vector({1}));
  fomaml_update(one, adapted, query, 0.1, square);
  const double scalar = one["w"].at(0);
  err = std::max(err, std::abs(scalar - 0.8));

  const BatchLoss regression = [](const ParamSet& p, std::span<const ItemRef> batch, std::uint64_t) {
    std::vector<Tensor> terms;
    for (const auto& it : batch) {
      const auto x = Tensor::vector({1.0, double(it.index) / 10.0});
      auto e = ops::sub(ops::dot(p["w"], x), Tensor::vector({1.0 + 0.3 * double(it.index) / 10.0}));
      terms.push_back(ops::mul(e, e));
    }
    return ops::scale(ops::add_n(terms), 1.0 / double(batch.size()));
  };
  double plain_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet w;
    w.add_uniform("w", {2}, 1.0, rng);
    auto plain = w.clone();
    const auto inner = inner_adapt(w, Episode{0, {Batch{{0, 1}}}}, 0.0, 3, OptimizerKind::kSgd, regression);
    const Batch q{{0, 4}, {0, 7}};
    fomaml_update(w, inner, q, 0.3, regression);
    sgd(plain, regression(plain, q, 0), 0.3);
    const auto a = values(w), b = values(plain);
    for (std::size_t i = 0; i < a.size(); ++i) plain_err = std::max(plain_err, std::abs(a[i] - b[i]));
  }
  err = std::max(err, plain_err);
  return {err <= 1e-9, "zero-gradient identity err " + fmt("%.1e", identity) + ", scalar example " +
                           fmt("%.12g", scalar) + ", beta=0 vs plain step err " + fmt("%.1e", plain_err)};
}

Outcome laed_enumeration() {
  Rng rng(404);
  double worst = 0.0;
  auto config = [](std::size_t k) {
    LaedConfig c;
    c.vocab_size = 9;
    c.embed_dim = 4;
    c.hidden_dim = 5;
    c.latent_y = 1;
    c.latent_k = k;
    c.dropout = 0.0;
    return c;
  };
  auto sharpen = [](ParamSet& p) {
    for (auto& [name, t] : p)
      for (auto& x : t.mutable_data()) x *= 4.0;
  };
  constexpr LaedLossOptions expected{.noise_seed = 0, .sampling = LatentSampling::kExpected, .training = false};
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = 2 + trial % 2;
    auto vae = LaedModel::create(LaedKind::kDiVae, config(k), 500 + trial);
    auto vst = LaedModel::create(LaedKind::kDiVst, config(k), 600 + trial);
    sharpen(vae.params);
    sharpen(vst.params);
    const std::vector<TokenIds> batch{utterance(rng, 9, 3), utterance(rng, 9, 3), utterance(rng, 9, 3)};
    const std::vector<VstTriple> triples{{utterance(rng, 9, 2), utterance(rng, 9, 2), utterance(rng, 9, 2)},
                                         {utterance(rng, 9, 2), utterance(rng, 9, 2), utterance(rng, 9, 2)}};
    const double a = divae_loss(vae, batch, expected).total.item();
    const double ra = reference::Laed(vae).divae(batch);
    const double b = divst_loss(vst, triples, expected).total.item();
    const double rb = reference::Laed(vst).divst(triples);
    worst = std::max({worst, std::abs(a - ra) / std::max(1.0, std::abs(ra)), std::abs(b - rb) / std::max(1.0, std::abs(rb))});
  }
  return {worst <= 1e-5, "10 micro-batches, y=1, k in {2,3}; max err " + fmt("%.1e", worst)};
}

Outcome latent_degeneracy() {
  const auto vocab = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "i", "want", "a", "table", "at",
                                              "north", "golden", "palace", "is", "free", "."});
  std::size_t equal = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    HredConfig c;
    c.vocab_size = vocab.size();
    c.embed_dim = 6;
    c.hidden_dim = 8;
    c.latent_y = 3;
    c.latent_k = 4;
    auto with = c;
    with.latents_enabled = true;
    const auto plain = HredModel::create(c, seed);
    auto latent = HredModel::create(with, seed);
    for (auto& x : latent.params.get("latent.w").mutable_data()) x = 0;
    auto ex = make_example(vocab, {{"i", "want", "a", "table"}, {"at", "north"}}, {"at", "zebra", "palace"},
                           {"golden", "palace", "is", "free", "."});
    const double base = hred_loss(plain, ex, {.noise_seed = seed}).item();
    ex.z_usr = LatentCode{{seed % 4, 0, 3}};
    ex.z_sys = LatentCode{{2, (seed + 1) % 4, 0}};
    const double conditioned = hred_loss(latent, ex, {.noise_seed = seed}).item();
    ++total;
    if (std::memcmp(&base, &conditioned, sizeof base) == 0) ++equal;
  }
  return {equal == total, std::to_string(equal) + "/" + std::to_string(total) + " seeds bit-identical"};
}

}  // namespace acceptance
