// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "pfrec/error.hpp"
#include "pfrec/graph.hpp"
#include "support/grad_suite.hpp"

using namespace pfrec;
using G = Graph<double>;

TEST_CASE("every op passes a randomized gradient check") {
  for (const auto& c : testing::grad_cases()) {
    const auto r = testing::run_grad_case(c, 8, 17);
    INFO(c.name);
    CHECK(r.worst < 1e-5);
  }
}

TEST_CASE("matmul against hand-computed product") {
  G g;
  const Var a = g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  const Var b = g.constant(Tensor<double>({2, 3}, {1, 0, -1, 2, 1, 0}));
  const auto& y = g.value(g.matmul(a, b));
  CHECK(y.shape() == Shape{2, 3});
  const std::vector<double> want = {5, 2, -1, 11, 4, -3};
  for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == want[i]);
}

TEST_CASE("masked softmax gives zero weight to masked keys and sums to one") {
  G g;
  Tensor<double> mask({1, 2, 3}, {0, -1e9, 0, -1e9, -1e9, 0});
  const Var x = g.constant(Tensor<double>({2, 2, 3}, {1, 2, 3, 4, 5, 6, 0, 0, 0, 1, 1, 1}));
  const auto& y = g.value(g.softmax(x, &mask));
  for (std::size_t row = 0; row < 4; ++row) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += y[row * 3 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    const std::size_t m = row % 2;
    for (std::size_t c = 0; c < 3; ++c) {
      if (mask[m * 3 + c] < 0) CHECK(y[row * 3 + c] == 0.0);
    }
  }
  CHECK(y[3 * 1 + 2] == 1.0);
}

TEST_CASE("layer norm output has zero mean and unit variance") {
  G g;
  const Var x = g.constant(Tensor<double>({2, 4}, {1, 2, 3, 4, -5, 0, 5, 10}));
  const Var one = g.constant(Tensor<double>({4}, 1.0));
  const Var zero = g.constant(Tensor<double>({4}, 0.0));
  const auto& y = g.value(g.layer_norm(x, one, zero));
  for (std::size_t r = 0; r < 2; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 4; ++c) mean += y[r * 4 + c] / 4;
    for (std::size_t c = 0; c < 4; ++c) var += (y[r * 4 + c] - mean) * (y[r * 4 + c] - mean) / 4;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("log_sigmoid stays finite for large magnitudes") {
  G g;
  const auto& y = g.value(g.log_sigmoid(g.constant(Tensor<double>({2}, {-800, 800}))));
  CHECK(y[0] == doctest::Approx(-800));
  CHECK(y[1] == 0.0);
}

TEST_CASE("dropout is identity in eval mode and deterministic in training") {
  const Tensor<double> x({64}, 1.0);
  G eval;
  CHECK(bitwise_equal(eval.value(eval.dropout(eval.constant(x), 0.5)), x));
  G a(true, 9), b(true, 9);
  const auto& ya = a.value(a.dropout(a.constant(x), 0.5));
  const auto& yb = b.value(b.dropout(b.constant(x), 0.5));
  CHECK(bitwise_equal(ya, yb));
  for (double v : ya.values()) CHECK((v == 0.0 || v == 2.0));
}

TEST_CASE("shape errors are raised for mismatched operands") {
  G g;
  const Var a = g.constant(Tensor<double>({2, 3}));
  const Var b = g.constant(Tensor<double>({4, 2}));
  CHECK_THROWS_AS(g.matmul(a, b), ShapeError);
  CHECK_THROWS_AS(g.add(a, b), ShapeError);
  CHECK_THROWS_AS(g.reshape(a, {5}), ShapeError);
}

TEST_CASE("frozen parameters receive no gradient entry") {
  ParamStore<double> s;
  s.add("w", Tensor<double>({2}, {1, 2}));
  s.add("f", Tensor<double>({2}, {3, 4}), false);
  G g;
  const auto grads = g.backward(g.sum(g.mul(g.param(s, "w"), g.param(s, "f"))));
  CHECK(grads.count("w") == 1);
  CHECK(grads.count("f") == 0);
  CHECK(grads.at("w")[0] == 3.0);
  CHECK(grads.at("w")[1] == 4.0);
}

TEST_CASE("first Adam and RMSprop steps match closed forms") {
  const double g0 = 0.3, theta0 = 1.5;
  for (UpdateRule rule : {UpdateRule::adam, UpdateRule::rmsprop}) {
    ParamStore<double> s;
    s.add("p", Tensor<double>({1}, {theta0}));
    OptimizerConfig cfg;
    cfg.rule = rule;
    cfg.lr = 0.01;
    cfg.l2 = 0.1;
    GradMap<double> grads;
    grads["p"] = Tensor<double>({1}, {g0});
    optimizer_step(s, grads, cfg);
    const double gi = g0 + cfg.l2 * theta0;
    double want;
    if (rule == UpdateRule::adam) {
      want = theta0 - cfg.lr * gi / (std::abs(gi) + cfg.eps);
    } else {
      const double sq = (1 - cfg.rms_decay) * gi * gi;
      want = theta0 - cfg.lr * gi / (std::sqrt(sq) + cfg.eps);
    }
    CHECK(s.value("p")[0] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("optimizer rejects gradients for frozen slots") {
  ParamStore<double> s;
  s.add("p", Tensor<double>({1}, {1.0}), false);
  GradMap<double> grads;
  grads["p"] = Tensor<double>({1}, {1.0});
  CHECK_THROWS_AS(optimizer_step(s, grads, OptimizerConfig{}), UsageError);
  CHECK(s.value("p")[0] == 1.0);
}
