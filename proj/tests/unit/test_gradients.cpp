// Built against the double-precision library: central differences at h=1e-3
// need more than float32's seven digits to resolve a 1e-3 relative error.

#include <cmath>

#include "datml/compute/gradcheck.hpp"
#include "datml/compute/ops.hpp"
#include "datml/error.hpp"
#include "datml/hred/hred.hpp"
#include "datml/laed/laed.hpp"
#include "doctest.h"

using namespace datml;

static_assert(sizeof(Scalar) == 8, "gradient tests must link the double-precision build");

namespace {

constexpr double kTolerance = 1e-3;

std::size_t small_dim(Rng& rng) { return 1 + static_cast<std::size_t>(uniform_index(rng, 16)); }

void check_op(const char* name, const std::function<Tensor(const ParamSet&)>& loss, ParamSet& params) {
  const auto report = finite_diff_check(loss, params, 1e-3);
  INFO(name << ": worst parameter " << report.worst_parameter);
  CHECK(report.max_relative_error < kTolerance);
}

}  // namespace

TEST_CASE("finite_diff_check reference points") {
  Rng rng(1);
  ParamSet p;
  p.add_uniform("w", {3, 4}, 1.0, rng);
  p.add_uniform("x", {4}, 1.0, rng);
  LossBuilder loss = [](const ParamSet& ps) { return ops::sum(ops::tanh(ops::matvec(ps["w"], ps["x"]))); };
  const auto numeric = numeric_gradients(loss, p, 1e-3);

  SUBCASE("analytic copied from numeric") {
    CHECK(compare_gradients(p, numeric, numeric).max_relative_error < 1e-12);
  }
  SUBCASE("analytic doubled") {
    auto doubled = analytic_gradients(loss, p);
    for (auto& g : doubled) {
      for (auto& v : g) v *= 2.0;
    }
    CHECK(compare_gradients(p, doubled, numeric).max_relative_error == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("every differentiable op matches central differences") {
  Rng rng(2024);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t r = small_dim(rng), c = small_dim(rng);
    ParamSet p;
    p.add_uniform("w", {r, c}, 1.0, rng);
    p.add_uniform("x", {c}, 1.0, rng);
    p.add_uniform("y", {c}, 1.0, rng);
    p.add_uniform("u", {r}, 1.0, rng);
    p.add_uniform("s", {1}, 1.0, rng);
    const auto weights = Tensor::vector([&] {
      std::vector<Scalar> v(r);
      for (auto& e : v) e = static_cast<Scalar>(uniform01(rng) - 0.5);
      return v;
    }());
    const auto cw = Tensor::vector([&] {
      std::vector<Scalar> v(c);
      for (auto& e : v) e = static_cast<Scalar>(uniform01(rng) - 0.5);
      return v;
    }());

    check_op("add/sub/mul", [&](const ParamSet& ps) {
      return ops::dot(cw, ops::mul(ops::add(ps["x"], ps["y"]), ops::sub(ps["x"], ps["y"])));
    }, p);
    check_op("matvec", [&](const ParamSet& ps) { return ops::dot(weights, ops::matvec(ps["w"], ps["x"])); }, p);
    check_op("matvec_t", [&](const ParamSet& ps) { return ops::dot(cw, ops::matvec_t(ps["w"], ps["u"])); }, p);
    check_op("linear+tanh", [&](const ParamSet& ps) {
      return ops::dot(weights, ops::tanh(ops::linear(ps["w"], ps["x"], ps["u"])));
    }, p);
    check_op("sigmoid/one_minus/scale_by", [&](const ParamSet& ps) {
      auto g = ops::sigmoid(ps["s"]);
      return ops::dot(cw, ops::add(ops::scale_by(g, ps["x"]), ops::scale_by(ops::one_minus(g), ps["y"])));
    }, p);
    check_op("softmax", [&](const ParamSet& ps) { return ops::dot(cw, ops::softmax(ps["x"])); }, p);
    check_op("log_softmax", [&](const ParamSet& ps) { return ops::dot(cw, ops::log_softmax(ps["x"])); }, p);
    check_op("exp/log", [&](const ParamSet& ps) {
      return ops::dot(cw, ops::log(ops::add(ops::exp(ps["x"]), ops::exp(ps["y"]))));
    }, p);
    check_op("cross_entropy", [&](const ParamSet& ps) {
      return ops::cross_entropy(ops::matvec(ps["w"], ps["x"]), r / 2);
    }, p);
    check_op("nll_of_probability", [&](const ParamSet& ps) {
      return ops::nll_of_probability(ops::softmax(ps["u"]), r - 1);
    }, p);
    check_op("concat/slice/stack", [&](const ParamSet& ps) {
      const std::vector<Tensor> parts{ps["x"], ps["u"], ps["s"]};
      auto cat = ops::concat(parts);
      auto sl = ops::slice(cat, 1, c + r - 1);
      const std::vector<Tensor> rows{ps["x"], ps["y"]};
      auto st = ops::stack(rows);
      return ops::add(ops::sum(ops::tanh(sl)), ops::dot(ops::reshape(st, {2 * c}), ops::concat(std::vector<Tensor>{cw, cw})));
    }, p);
    check_op("embedding/add_n/mean", [&](const ParamSet& ps) {
      const std::vector<Tensor> rows{ops::embedding(ps["w"], 0), ops::embedding(ps["w"], r - 1),
                                     ops::embedding(ps["w"], 0)};
      return ops::mean(ops::tanh(ops::add_n(rows)));
    }, p);
    check_op("gumbel_softmax soft", [&](const ParamSet& ps) {
      std::vector<Scalar> noise(c);
      for (std::size_t i = 0; i < c; ++i) noise[i] = static_cast<Scalar>(0.1 * double(i % 3));
      return ops::dot(cw, ops::gumbel_softmax(ps["x"], 0.7, noise));
    }, p);
    check_op("kl_categorical", [&](const ParamSet& ps) {
      return ops::kl_categorical(ops::softmax(ps["x"]), ops::softmax(ps["y"]));
    }, p);
    check_op("scatter_add/zero_extend", [&](const ParamSet& ps) {
      std::vector<std::size_t> idx(c);
      for (std::size_t i = 0; i < c; ++i) idx[i] = (i * 7) % (c + 2);
      auto mass = ops::scatter_add(ops::softmax(ps["x"]), idx, c + 2);
      auto ext = ops::zero_extend(ops::softmax(ps["y"]), c + 2);
      auto mixed = ops::add(ops::scale(mass, 0.4), ops::scale(ext, 0.6));
      return ops::nll_of_probability(mixed, 0);
    }, p);
    check_op("dropout with frozen noise", [&](const ParamSet& ps) {
      Rng noise(99);
      return ops::dot(cw, ops::dropout(ops::tanh(ps["x"]), 0.3, noise, true));
    }, p);
  }
}

TEST_CASE("gru_cell matches central differences") {
  Rng rng(77);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t in = small_dim(rng), hid = 1 + static_cast<std::size_t>(uniform_index(rng, 8));
    ParamSet p;
    p.add_uniform("x", {in}, 1.0, rng);
    p.add_uniform("h", {hid}, 1.0, rng);
    p.add_uniform("w_ih", {3 * hid, in}, 0.8, rng);
    p.add_uniform("w_hh", {3 * hid, hid}, 0.8, rng);
    p.add_uniform("b_ih", {3 * hid}, 0.5, rng);
    p.add_uniform("b_hh", {3 * hid}, 0.5, rng);
    p.add_uniform("readout", {hid}, 1.0, rng);
    check_op("gru two steps", [](const ParamSet& ps) {
      auto h1 = ops::gru_cell(ps["x"], ps["h"], ps["w_ih"], ps["w_hh"], ps["b_ih"], ps["b_hh"]);
      auto h2 = ops::gru_cell(ps["x"], h1, ps["w_ih"], ps["w_hh"], ps["b_ih"], ps["b_hh"]);
      return ops::dot(ps["readout"], h2);
    }, p);
  }
}

TEST_CASE("two-layer GRU with cross-entropy matches central differences") {
  Rng rng(4242);
  const std::size_t vocab = 7, emb = 4, hid = 5;
  ParamSet p;
  p.add_uniform("embed", {vocab, emb}, 0.5, rng);
  p.add_uniform("l1.w_ih", {3 * hid, emb}, 0.5, rng);
  p.add_uniform("l1.w_hh", {3 * hid, hid}, 0.5, rng);
  p.add_uniform("l1.b_ih", {3 * hid}, 0.1, rng);
  p.add_uniform("l1.b_hh", {3 * hid}, 0.1, rng);
  p.add_uniform("l2.w_ih", {3 * hid, hid}, 0.5, rng);
  p.add_uniform("l2.w_hh", {3 * hid, hid}, 0.5, rng);
  p.add_uniform("l2.b_ih", {3 * hid}, 0.1, rng);
  p.add_uniform("l2.b_hh", {3 * hid}, 0.1, rng);
  p.add_uniform("out.w", {vocab, hid}, 0.5, rng);
  p.add_uniform("out.b", {vocab}, 0.1, rng);
  const std::vector<std::size_t> seq{2, 5, 1, 6, 3};
  LossBuilder loss = [&](const ParamSet& ps) {
    auto h1 = Tensor::zeros({hid});
    auto h2 = Tensor::zeros({hid});
    std::vector<Tensor> terms;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      h1 = ops::gru_cell(ops::embedding(ps["embed"], seq[t]), h1, ps["l1.w_ih"], ps["l1.w_hh"], ps["l1.b_ih"],
                         ps["l1.b_hh"]);
      h2 = ops::gru_cell(h1, h2, ps["l2.w_ih"], ps["l2.w_hh"], ps["l2.b_ih"], ps["l2.b_hh"]);
      terms.push_back(ops::cross_entropy(ops::linear(ps["out.w"], h2, ps["out.b"]), seq[t + 1]));
    }
    return ops::mean(ops::concat(terms));
  };
  const auto report = finite_diff_check(loss, p, 1e-3);
  INFO("worst parameter " << report.worst_parameter);
  CHECK(report.max_relative_error < kTolerance);
}

TEST_CASE("LAED and HRED losses match central differences") {
  Rng rng(9001);
  auto utterance = [&](std::size_t vocab, std::size_t max_len) {
    TokenIds out(uniform_index(rng, max_len + 1));
    for (auto& t : out) t = 4 + uniform_index(rng, vocab - 4);
    return out;
  };
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    LaedConfig c;
    c.vocab_size = 9;
    c.embed_dim = 3;
    c.hidden_dim = 4;
    c.latent_y = 2;
    c.latent_k = 3;
    c.dropout = 0.2;
    const LaedLossOptions relaxed{.noise_seed = trial, .sampling = LatentSampling::kRelaxed};

    auto vae = LaedModel::create(LaedKind::kDiVae, c, trial);
    const std::vector<TokenIds> batch{utterance(9, 3), utterance(9, 3)};
    check_op("divae", [&](const ParamSet&) { return divae_loss(vae, batch, relaxed).total; }, vae.params);

    auto vst = LaedModel::create(LaedKind::kDiVst, c, trial + 50);
    const std::vector<VstTriple> triples{{utterance(9, 2), utterance(9, 2), utterance(9, 2)}};
    check_op("divst", [&](const ParamSet&) { return divst_loss(vst, triples, relaxed).total; }, vst.params);

    HredConfig h;
    h.vocab_size = 9;
    h.embed_dim = 3;
    h.hidden_dim = 4;
    h.latents_enabled = true;
    h.latent_y = 2;
    h.latent_k = 3;
    h.dropout = 0.2;
    auto model = HredModel::create(h, trial + 100);
    HredExample ex;
    ex.utterances = {utterance(9, 3), {5, 6}};
    ex.copy_ids = ex.utterances;
    ex.copy_ids[1][1] = 9;
    ex.oov = {"x"};
    ex.response = {7, 9, 4};
    ex.z_usr = LatentCode{{1, 2}};
    ex.z_sys = LatentCode{{0, 1}};
    check_op("hred", [&](const ParamSet& ps) { return hred_loss(model, ps, ex, {.noise_seed = trial}); },
             model.params);
  }
}
