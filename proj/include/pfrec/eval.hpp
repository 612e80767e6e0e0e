// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pfrec/data.hpp"
#include "pfrec/eliminator.hpp"

namespace pfrec {

/// Scores of one user's held-out positive and its negative candidates.
struct RankedCandidates {
  int positive_item = 0;
  double positive = 0.0;
  std::vector<int> negative_items;
  std::vector<double> negatives;
};

/// 1-based rank of the positive in descending score order; equal scores are
/// ordered by smaller item id.
std::size_t rank_of_positive(const RankedCandidates& c);

double user_auc(const RankedCandidates& c);
double user_hit(const RankedCandidates& c, std::size_t n = 10);
double user_ndcg(const RankedCandidates& c, std::size_t n = 10);

/// Means over users. An empty list yields 0.
double auc(std::span<const RankedCandidates> users);
double hit_at_n(std::span<const RankedCandidates> users, std::size_t n = 10);
double ndcg_at_n(std::span<const RankedCandidates> users, std::size_t n = 10);

/// Micro-averaged F1 of single-label predictions over `classes` classes,
/// computed from the confusion matrix.
double micro_f1(std::span<const int> predictions, std::span<const int> labels,
                std::size_t classes);

struct RankingMetrics {
  double auc = 0.0;
  double hit = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;
};

/// Scores every user's validation or test target against its stored
/// negatives (attach_negatives must have run).
template <typename T>
std::vector<RankedCandidates> score_candidates(const FairModel<T>& model,
                                               const SplitDataset& data, HistoryFor target,
                                               std::size_t batch_size = 256);

template <typename T>
RankingMetrics evaluate_ranking(const FairModel<T>& model, const SplitDataset& data,
                                HistoryFor target, std::size_t batch_size = 256);

/// Representation of every user built from its test history.
template <typename T>
Tensor<T> user_representations(const FairModel<T>& model, const SplitDataset& data,
                               std::size_t batch_size = 256);

struct AttackerConfig {
  double lr = 1e-3;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  double train_fraction = 0.8;
  double validation_fraction = 0.1;  // of the attacker-train part
  std::uint64_t seed = 0;
};

struct AttributeAttack {
  std::string attribute;
  std::size_t classes = 0;
  double micro_f1 = 0.0;
  double majority_f1 = 0.0;
  std::size_t train_users = 0;
  std::size_t validation_users = 0;
  std::size_t test_users = 0;
  std::size_t epochs = 0;
};

struct AttackerReport {
  std::vector<AttributeAttack> attributes;
};

/// Trains a fresh classifier head on reps [n, d] -> labels with Adam and
/// reports micro-F1 on the held-out users. Throws DataError when a class is
/// missing from the attacker-train split.
AttributeAttack train_attacker(const Tensor<float>& reps, std::span<const int> labels,
                               std::size_t classes, const AttackerConfig& config,
                               const std::string& name = "");

/// One attacker per attribute of the schema; labels come from data.users.
AttackerReport attack_all(const Tensor<float>& reps, const SplitDataset& data,
                          const AttackerConfig& config);

}  // namespace pfrec
