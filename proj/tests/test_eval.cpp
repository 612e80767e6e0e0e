// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "pfrec/error.hpp"
#include "pfrec/eval.hpp"
#include "support/oracles.hpp"

using namespace pfrec;

TEST_CASE("ranking metrics agree with brute-force oracles") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto c = testing::random_candidates(rng);
    CHECK(std::abs(user_auc(c) - testing::oracle_auc(c)) <= 1e-9);
    CHECK(rank_of_positive(c) == testing::oracle_position(c) + 1);
    CHECK(user_hit(c) == testing::oracle_hit(c));
    CHECK(std::abs(user_ndcg(c) - testing::oracle_ndcg(c)) <= 1e-9);
  }
}

TEST_CASE("ties count half in AUC and break toward the smaller id in ranking") {
  RankedCandidates c{5, 1.0, {3, 9, 1}, {1.0, 1.0, 0.0}};
  CHECK(user_auc(c) == doctest::Approx(2.0 / 3.0));
  // Order: 3 (tie, smaller id), 5, 9, 1.
  CHECK(rank_of_positive(c) == 2);
  CHECK(user_ndcg(c) == doctest::Approx(1.0 / std::log2(3.0)));
  CHECK(user_hit(c, 1) == 0.0);
  CHECK_THROWS(user_auc(RankedCandidates{1, 0.0, {}, {}}));
}

TEST_CASE("micro-F1 equals accuracy for single-label predictions") {
  Rng rng(8);
  for (int t = 0; t < 500; ++t) {
    const std::size_t classes = 2 + rng.below(5), n = 1 + rng.below(40);
    std::vector<int> p(n), l(n);
    double correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng.below(classes));
      l[i] = static_cast<int>(rng.below(classes));
      correct += p[i] == l[i];
    }
    CHECK(std::abs(micro_f1(p, l, classes) - testing::oracle_micro_f1(p, l, classes)) <= 1e-9);
    CHECK(std::abs(micro_f1(p, l, classes) - correct / n) <= 1e-9);
  }
  const std::vector<int> a = {0}, b = {0, 1};
  CHECK_THROWS_AS(micro_f1(a, b, 2), UsageError);
}

TEST_CASE("empty user lists average to zero") {
  CHECK(auc({}) == 0.0);
  CHECK(hit_at_n({}) == 0.0);
}

namespace {

Tensor<float> blobs(std::size_t n, std::size_t d, std::vector<int>& labels, Rng& rng,
                    double separation) {
  Tensor<float> reps({n, d});
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(rng.below(3));
    for (std::size_t j = 0; j < d; ++j) {
      const double centre = j == static_cast<std::size_t>(labels[i]) ? separation : 0.0;
      reps[i * d + j] = static_cast<float>(centre + rng.normal());
    }
  }
  return reps;
}

}  // namespace

TEST_CASE("attacker recovers separable labels and reports a majority baseline") {
  Rng rng(1);
  std::vector<int> labels;
  const auto reps = blobs(600, 8, labels, rng, 6.0);
  AttackerConfig cfg;
  cfg.seed = 2;
  const auto r = train_attacker(reps, labels, 3, cfg, "x");
  CHECK(r.micro_f1 > 0.95);
  CHECK(r.majority_f1 > 0.2);
  CHECK(r.majority_f1 < 0.5);
  CHECK(r.test_users == 120);
  CHECK(r.train_users + r.validation_users == 480);
}

TEST_CASE("attacker on noise does not beat the majority baseline by much") {
  Rng rng(4);
  std::vector<int> labels;
  const auto reps = blobs(600, 8, labels, rng, 0.0);
  AttackerConfig cfg;
  cfg.seed = 2;
  const auto r = train_attacker(reps, labels, 3, cfg);
  CHECK(r.micro_f1 < r.majority_f1 + 0.1);
}

TEST_CASE("attacker raises DataError when a class is absent from training") {
  Tensor<float> reps({20, 2}, 0.5F);
  const std::vector<int> labels(20, 0);
  CHECK_THROWS_AS(train_attacker(reps, labels, 2, AttackerConfig{}), DataError);
}
