#include <cmath>
#include <numeric>

#include "datml/compute/ops.hpp"
#include "datml/compute/optim.hpp"
#include "datml/compute/param_set.hpp"
#include "datml/error.hpp"
#include "doctest.h"

using namespace datml;

namespace {

Tensor random_vector(std::size_t n, Rng& rng, double scale = 2.0, bool requires_grad = false) {
  std::vector<Scalar> v(n);
  for (auto& x : v) x = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * scale);
  return Tensor::vector(std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("backward of x*x at 3 is 6") {
  auto x = Tensor::scalar(3.0f, true);
  backward(ops::sum(ops::mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("gradient of sum(softmax(v)) vanishes") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = random_vector(1 + trial % 9, rng, 5.0, true);
    backward(ops::sum(ops::softmax(v)));
    for (auto g : v.grad()) CHECK(std::abs(g) < 1e-6);
  }
}

TEST_CASE("backward rejects a non-scalar loss") {
  auto x = Tensor::vector({1.0f, 2.0f}, true);
  CHECK_THROWS_AS(backward(ops::tanh(x)), ContractViolation);
}

TEST_CASE("backward detects a cycle") {
  auto x = Tensor::scalar(1.0f, true);
  auto y = ops::scale(x, 2.0f);
  auto z = ops::scale(y, 3.0f);
  // Splice the output back in as an input of its own ancestor.
  y.node()->parents.push_back(z.node());
  CHECK_THROWS_AS(backward(z), ContractViolation);
  y.node()->parents.pop_back();
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  auto x = Tensor::scalar(2.0f, true);
  auto loss = ops::sum(ops::mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  x.zero_grad();
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("constants do not enter the graph") {
  auto a = Tensor::vector({1.0f, 2.0f});
  auto b = Tensor::vector({3.0f, 4.0f});
  auto c = ops::add(a, b);
  CHECK_FALSE(c.requires_grad());
  CHECK(c.node()->parents.empty());
}

TEST_CASE("tensor construction validates shape") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0f, 2.0f}), ContractViolation);
  CHECK_THROWS_AS(Tensor::zeros({0}), ContractViolation);
  auto t = Tensor::zeros({2, 3}, true);
  CHECK(t.numel() == 6);
  CHECK_FALSE(t.has_grad());
  t.zero_grad();
  CHECK(t.grad().size() == t.data().size());
}

TEST_CASE("sgd_step") {
  ParamSet p;
  p.add("theta", Tensor::scalar(2.0f));
  auto state = OptimizerState::sgd(0.1);

  SUBCASE("direct formula") {
    p.get("theta").mutable_grad()[0] = 0.5f;
    sgd_step(p, state);
    CHECK(p["theta"].item() == doctest::Approx(1.95));
  }
  SUBCASE("zero gradient is identity") {
    p.zero_grad();
    sgd_step(p, state);
    CHECK(p["theta"].item() == 2.0f);
  }
  SUBCASE("zero learning rate is identity") {
    auto frozen = OptimizerState::sgd(0.0);
    p.get("theta").mutable_grad()[0] = 0.5f;
    sgd_step(p, frozen);
    CHECK(p["theta"].item() == 2.0f);
  }
  SUBCASE("missing gradient names the parameter") {
    try {
      sgd_step(p, state);
      FAIL("expected MissingGradient");
    } catch (const MissingGradient& e) {
      CHECK(e.parameter() == "theta");
    }
  }
}

TEST_CASE("adam_step") {
  SUBCASE("first step magnitude equals the learning rate") {
    ParamSet p;
    p.add("w", Tensor::vector({0.0f, 5.0f}));
    p.get("w").mutable_grad()[0] = 1.0f;
    p.get("w").mutable_grad()[1] = -3.0f;
    auto state = OptimizerState::adam(1e-3);
    adam_step(p, state);
    CHECK(p["w"].at(0) == doctest::Approx(-0.001).epsilon(1e-6));
    CHECK(p["w"].at(1) == doctest::Approx(5.001).epsilon(1e-6));
    CHECK(state.step == 1);
  }
  SUBCASE("zero gradient at a fresh state is identity") {
    ParamSet p;
    p.add("w", Tensor::vector({1.5f, -2.0f}));
    p.zero_grad();
    auto state = OptimizerState::adam(1e-3);
    adam_step(p, state);
    CHECK(p["w"].at(0) == 1.5f);
    CHECK(p["w"].at(1) == -2.0f);
  }
  SUBCASE("five steps on a quadratic match a scripted recurrence") {
    // loss = 0.5 * a * (w - c)^2, gradient a * (w - c).
    const double a = 3.0, c = 0.7, lr = 0.05;
    ParamSet p;
    p.add("w", Tensor::scalar(2.0f));
    auto state = OptimizerState::adam(lr);
    double w = 2.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
      p.get("w").mutable_grad()[0] = static_cast<Scalar>(a * (p["w"].item() - c));
      adam_step(p, state);
      const double g = a * (w - c);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mhat = m / (1 - std::pow(0.9, t));
      const double vhat = v / (1 - std::pow(0.999, t));
      w -= lr * mhat / (std::sqrt(vhat) + 1e-8);
      CHECK(std::abs(p["w"].item() - w) < 1e-6);
    }
  }
  SUBCASE("invalid constants") {
    ParamSet p;
    p.add("w", Tensor::scalar(1.0f));
    p.zero_grad();
    auto state = OptimizerState::adam(1e-3, 1.0);
    CHECK_THROWS_AS(adam_step(p, state), ContractViolation);
  }
}

TEST_CASE("optimizers with zero gradients are identity maps") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ParamSet p;
    p.add_uniform("a", {3, 4}, 1.0, rng);
    p.add_uniform("b", {5}, 1.0, rng);
    const auto before = p.clone();
    p.zero_grad();
    auto sgd = OptimizerState::sgd(0.3);
    sgd_step(p, sgd);
    auto adam = OptimizerState::adam(0.3);
    adam_step(p, adam);
    CHECK(p.values_equal(before));
  }
}

TEST_CASE("gumbel_softmax") {
  const std::vector<Scalar> zero{0.0f, 0.0f};
  SUBCASE("symmetric logits") {
    auto out = ops::gumbel_softmax(Tensor::vector({0.0f, 0.0f}), 1.0, zero);
    CHECK(out.at(0) == doctest::Approx(0.5));
    CHECK(out.at(1) == doctest::Approx(0.5));
  }
  SUBCASE("low temperature approaches one-hot") {
    auto out = ops::gumbel_softmax(Tensor::vector({1.0f, 0.0f}), 0.01, zero);
    CHECK(out.at(0) >= 0.999);
  }
  SUBCASE("fixed noise") {
    const std::vector<Scalar> noise{0.2f, -0.1f};
    auto out = ops::gumbel_softmax(Tensor::vector({0.0f, 0.0f}), 1.0, noise);
    const double e0 = std::exp(0.2), e1 = std::exp(-0.1);
    CHECK(out.at(0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-6));
    CHECK(out.at(1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-6));
    CHECK(out.at(0) == doctest::Approx(0.5744).epsilon(1e-4));
  }
  SUBCASE("non-positive temperature") {
    CHECK_THROWS_AS(ops::gumbel_softmax(Tensor::vector({0.0f, 0.0f}), 0.0, zero), InvalidArgument);
  }
  SUBCASE("hard sample is one-hot with soft gradients") {
    auto logits = Tensor::from({2, 3}, {0.1f, 2.0f, -1.0f, 0.5f, 0.4f, 0.3f}, true);
    const std::vector<Scalar> noise(6, 0.0f);
    auto out = ops::gumbel_softmax(logits, 1.0, noise, true);
    CHECK(out.at(1) == 1.0f);
    CHECK(out.at(0) == 0.0f);
    CHECK(out.at(3) == 1.0f);
    backward(ops::dot(out, Tensor::from({2, 3}, {1, 0, 0, 0, 0, 1})));
    double total = 0;
    for (auto g : logits.grad()) total += std::abs(g);
    CHECK(total > 0.0);
  }
}

TEST_CASE("softmax and gumbel_softmax outputs sum to one") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 16;
    auto v = random_vector(n, rng, 20.0);
    auto s = ops::softmax(v);
    auto g = ops::gumbel_softmax(v, 0.5 + trial % 3, rng);
    double ss = 0, gs = 0;
    for (auto x : s.data()) {
      ss += x;
      CHECK(x >= 0.0f);
    }
    for (auto x : g.data()) gs += x;
    CHECK(std::abs(ss - 1.0) < 1e-6);
    CHECK(std::abs(gs - 1.0) < 1e-6);
  }
}

TEST_CASE("kl_categorical") {
  SUBCASE("identical distributions") {
    auto q = Tensor::vector({0.2f, 0.3f, 0.5f});
    CHECK(ops::kl_categorical(q, q).item() == 0.0f);
  }
  SUBCASE("point mass against uniform") {
    auto kl = ops::kl_categorical(Tensor::vector({1.0f, 0.0f}), Tensor::vector({0.5f, 0.5f}));
    CHECK(kl.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("uniform against uniform") {
    auto u = Tensor::vector({0.5f, 0.5f});
    CHECK(ops::kl_categorical(u, u).item() == 0.0f);
  }
  SUBCASE("infinite divergence") {
    CHECK_THROWS_AS(ops::kl_categorical(Tensor::vector({0.5f, 0.5f}), Tensor::vector({1.0f, 0.0f})),
                    InvalidArgument);
  }
  SUBCASE("non-negative on random pairs, zero iff equal") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + trial % 6;
      auto q = ops::softmax(random_vector(n, rng, 3.0));
      auto p = ops::softmax(random_vector(n, rng, 3.0));
      CHECK(ops::kl_categorical(q, p).item() >= 0.0f);
      CHECK(ops::kl_categorical(q, q).item() == 0.0f);
    }
  }
}

TEST_CASE("copy mass scatter adds duplicate positions") {
  auto attn = Tensor::vector({0.2f, 0.5f, 0.3f}, true);
  const std::vector<std::size_t> ids{4, 1, 4};
  auto mass = ops::scatter_add(attn, ids, 6);
  CHECK(mass.at(4) == doctest::Approx(0.5));
  CHECK(mass.at(1) == doctest::Approx(0.5));
  CHECK(mass.at(0) == 0.0f);
  backward(ops::pick(mass, 4));
  CHECK(attn.grad()[0] == 1.0f);
  CHECK(attn.grad()[1] == 0.0f);
  CHECK(attn.grad()[2] == 1.0f);
}

TEST_CASE("dropout is identity outside training and reproducible inside") {
  Rng rng(1);
  auto x = random_vector(32, rng);
  Rng a(9), b(9);
  auto off = ops::dropout(x, 0.3, a, false);
  CHECK(off.node() == x.node());
  auto d1 = ops::dropout(x, 0.3, a, true);
  auto d2 = ops::dropout(x, 0.3, b, true);
  for (std::size_t i = 0; i < 32; ++i) CHECK(d1.at(i) == d2.at(i));
}

TEST_CASE("ParamSet bookkeeping") {
  Rng rng(2);
  ParamSet p;
  p.add_uniform("w", {2, 3}, 0.1, rng);
  p.add_uniform("b", {2}, 0.1, rng);
  CHECK(p.names() == std::vector<std::string>{"w", "b"});
  CHECK(p.element_count() == 8);
  CHECK_THROWS_AS(p.add("w", Tensor::scalar(0.0f)), ContractViolation);
  auto copy = p.clone();
  CHECK(copy.shape_compatible(p));
  copy.get("w").mutable_data()[0] += 1.0f;
  CHECK_FALSE(copy.values_equal(p));
  ParamSet other;
  other.add("w", Tensor::zeros({3, 2}));
  other.add("b", Tensor::zeros({2}));
  CHECK_FALSE(other.shape_compatible(p));
  CHECK_THROWS_WITH_AS(other.require_shape_compatible(p), doctest::Contains("'w'"), ContractViolation);
}
