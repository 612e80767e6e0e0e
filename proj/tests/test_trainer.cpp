// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "pfrec/error.hpp"
#include "pfrec/heads.hpp"
#include "pfrec/trainer.hpp"
#include "support/scenarios.hpp"

using namespace pfrec;

TEST_CASE("bpr loss equals the mean of -log sigmoid differences") {
  Graph<double> g;
  const Var p = g.constant(Tensor<double>({3}, {2.0, 0.0, -1.0}));
  const Var n = g.constant(Tensor<double>({3}, {1.0, 0.0, 3.0}));
  double want = 0;
  for (double diff : {1.0, 0.0, -4.0}) want += std::log1p(std::exp(-diff)) / 3;
  CHECK(g.value(bpr_loss(g, p, n)).item() == doctest::Approx(want).epsilon(1e-12));
  const Var e = g.constant(Tensor<double>({0}));
  CHECK_THROWS(bpr_loss(g, e, e));
}

TEST_CASE("disc loss sums per-attribute cross entropy over members only") {
  ParamStore<double> s;
  const std::vector<std::size_t> classes = {2, 3};
  init_discriminator(s, 4, classes, {2}, 1);
  CHECK(s.names("disc/k=2/a0/").empty());
  CHECK_FALSE(s.names("disc/k=2/a1/").empty());
  Tensor<double> x({2, 4}, {0.1, -0.2, 0.3, 0.5, 1.0, 0.0, -1.0, 2.0});
  const std::vector<int> labels = {1, 2, 0, 0};
  Graph<double> g;
  const double got = g.value(disc_loss(g, s, {2}, classes, g.constant(x), labels)).item();
  const auto& logits = g.value(classifier_logits(g, s, "disc/k=2/a1/", g.constant(x)));
  double want = 0;
  for (std::size_t r = 0; r < 2; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits[r * 3 + c]);
    want += (std::log(z) - logits[r * 3 + labels[r * 2 + 1]]) / 2;
  }
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("generator gradient is the bpr gradient minus lambda times the disc gradient") {
  const auto p = testing::probe_minimax(3);
  CHECK(p.decomposition_error < 1e-12);
  CHECK(p.finite_difference_error < 1e-6);
  CHECK(p.disc_gradient_norm > 1e-6);
  CHECK(p.checked_entries > 20);
  CHECK(p.disc_after <= p.disc_before);
}

TEST_CASE("pinned bpr and uniform discriminator values") {
  Graph<double> g;
  const auto one = [&](double v) { return g.constant(Tensor<double>({1}, {v})); };
  CHECK(g.value(bpr_loss(g, one(0.0), one(0.0))).item() == doctest::Approx(std::log(2.0)));
  const Var pos = g.constant(Tensor<double>({2}, {1.0, 0.0}));
  const Var neg = g.constant(Tensor<double>({2}, {0.0, 1.0}));
  const double pair = 0.5 * (std::log1p(std::exp(-1.0)) + std::log1p(std::exp(1.0)));
  CHECK(g.value(bpr_loss(g, pos, neg)).item() == doctest::Approx(pair).epsilon(1e-12));
  CHECK(pair == doctest::Approx(0.8133).epsilon(1e-4));

  ParamStore<double> s;
  const std::vector<std::size_t> classes = {2, 4};
  init_discriminator(s, 4, classes, {3}, 5);
  for (const auto& name : s.names("disc/")) s.value(name).fill(0.0);
  Tensor<double> x({2, 4}, {0.1, -0.2, 0.3, 0.5, 1.0, 0.0, -1.0, 2.0});
  const std::vector<int> labels = {1, 3, 0, 0};
  const double got = g.value(disc_loss(g, s, {3}, classes, g.constant(x), labels)).item();
  CHECK(got == doctest::Approx(std::log(2.0) + std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("lambda zero leaves only the ranking gradient") {
  TuneConfig cfg;
  cfg.lambda = 0.0;
  const auto f = testing::minimax_fixture(8, cfg);
  GradMap<double> total, bpr;
  {
    Graph<double> g;
    total = g.backward(f->tuner->generator_objective(g, f->batch).total);
  }
  {
    Graph<double> g;
    bpr = g.backward(f->tuner->generator_objective(g, f->batch).bpr);
  }
  for (const auto& [name, gt] : total) {
    const auto& gb = bpr.at(name);
    for (std::size_t i = 0; i < gt.size(); ++i) CHECK(gt[i] == gb[i]);
  }
}

TEST_CASE("a small generator step does not raise the objective") {
  for (std::uint64_t seed : {1, 2, 3}) {
    TuneConfig cfg;
    cfg.lambda = 1.0;
    cfg.lr = 1e-6;
    cfg.disc_steps = 0;
    const auto f = testing::minimax_fixture(seed, cfg);
    auto objective = [&] {
      Graph<double> g;
      return g.value(f->tuner->generator_objective(g, f->batch).total).item();
    };
    const double before = objective();
    f->tuner->train_batch(f->batch, 1);
    CHECK(objective() <= before);
  }
}

TEST_CASE("trainable sets per mode") {
  CHECK(trainable_prefixes(TuneMode::pfrec, 3) == std::vector<std::string>{"elim/k=3/"});
  CHECK(trainable_prefixes(TuneMode::fine_tune, 1) ==
        std::vector<std::string>{"backbone/", "elim/k=1/"});
  CHECK(trainable_prefixes(TuneMode::filter_baseline, 2) ==
        std::vector<std::string>{"filter/k=2/"});
}

namespace {

struct Tiny {
  EliminatorConfig elim = testing::tiny_eliminator();
  SplitDataset data = testing::synthetic_dataset(testing::tiny_synth(4), 40);
  EncoderConfig enc = testing::tiny_encoder(2, elim);
  ParamStore<float> store;

  Tiny() { init_backbone(store, enc, data.num_items(), 4); }
};

}  // namespace

TEST_CASE("pfrec tuning touches only its eliminator and discriminator") {
  Tiny t;
  const auto classes = t.data.schema.class_counts();
  init_eliminator(t.store, t.enc, t.elim, classes, 1, TuneMode::pfrec, 9);
  const ParamStore<float> before = t.store;
  TuneConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  cfg.eval_every = 2;
  cfg.batch_size = 32;
  Tuner<float> tuner(t.store, t.enc, t.elim, classes, {3}, cfg);
  const ParamStore<float> created = t.store;
  const auto report = tuner.run(t.data);
  CHECK(report.epochs.size() == 2);
  CHECK(bitwise_equal(before, t.store, "backbone/"));
  CHECK(bitwise_equal(before, t.store, "elim/k=1/"));
  CHECK_FALSE(bitwise_equal(created, t.store, "elim/k=3/"));
  CHECK_FALSE(bitwise_equal(created, t.store, "disc/k=3/"));
  CHECK(report.tuned_parameters == t.store.parameter_count("elim/k=3/"));
}

TEST_CASE("fine-tune mode updates the backbone") {
  Tiny t;
  const ParamStore<float> before = t.store;
  TuneConfig cfg;
  cfg.epochs = 1;
  cfg.mode = TuneMode::fine_tune;
  cfg.batch_size = 64;
  Tuner<float> tuner(t.store, t.enc, t.elim, t.data.schema.class_counts(), {1}, cfg);
  tuner.run(t.data);
  CHECK_FALSE(bitwise_equal(before, t.store, "backbone/"));
}

TEST_CASE("pretraining is deterministic and learns") {
  auto train = [] {
    Tiny t;
    PretrainConfig cfg;
    cfg.epochs = 12;
    cfg.lr = 1e-2;
    cfg.batch_size = 32;
    cfg.eval_every = 3;
    cfg.seed = 2;
    const auto report = pretrain(t.store, t.enc, t.elim, t.data, cfg);
    return std::make_pair(report, t.store);
  };
  const auto [ra, sa] = train();
  const auto [rb, sb] = train();
  CHECK(bitwise_equal(sa, sb));
  REQUIRE(ra.epochs.size() == 12);
  CHECK(ra.epochs.back().bpr < ra.epochs.front().bpr);
  CHECK(ra.best_hit > 0.5);  // chance is about 0.24
  CHECK(ra.best_epoch % 3 == 0);
}

TEST_CASE("records are space separated key=value pairs") {
  PretrainEpoch e;
  e.epoch = 3;
  e.bpr = 0.5;
  const std::string s = format_record(e);
  CHECK(s.find("stage=pretrain") == 0);
  CHECK(s.find("epoch=3") != std::string::npos);
  CHECK(s.find("bpr=0.500000") != std::string::npos);
}
