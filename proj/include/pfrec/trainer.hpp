// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pfrec/data.hpp"
#include "pfrec/eliminator.hpp"
#include "pfrec/eval.hpp"

namespace pfrec {

/// mean over pairs of -log sigmoid(pos - neg). Both inputs are [n], n >= 1.
template <typename T>
Var bpr_loss(Graph<T>& g, Var pos, Var neg);

/// Sum over the attributes of combination k of the mean cross-entropy of the
/// discriminator head for that attribute. `reps` is [rows, d]; `labels` is
/// rows x m.
template <typename T>
Var disc_loss(Graph<T>& g, const ParamStore<T>& store, AttributeCombination k,
              const std::vector<std::size_t>& class_counts, Var reps,
              std::span<const int> labels);

/// Creates the discriminator heads of combination k (one per member).
template <typename T>
void init_discriminator(ParamStore<T>& store, std::size_t dim,
                        const std::vector<std::size_t>& class_counts, AttributeCombination k,
                        std::uint64_t seed);

struct PretrainConfig {
  double lr = 1e-3;
  double l2 = 1e-6;
  std::size_t batch_size = 256;
  std::size_t epochs = 50;
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;
};

struct PretrainEpoch {
  std::size_t epoch = 0;
  double bpr = 0.0;
  bool evaluated = false;
  RankingMetrics validation;
};

struct PretrainReport {
  std::vector<PretrainEpoch> epochs;
  std::size_t best_epoch = 0;
  double best_hit = -1.0;
};

using EpochCallback = std::function<void(const std::string& line)>;

/// Trains the backbone slots of `store` (created by init_backbone) with Adam
/// on BPR over every real position, keeping the parameters with the best
/// validation HIT@10. Attributes are not used.
PretrainReport pretrain(ParamStore<float>& store, const EncoderConfig& encoder,
                        const EliminatorConfig& elim, const SplitDataset& data,
                        const PretrainConfig& config, const EpochCallback& log = {});

struct TuneConfig {
  double lr = 1e-4;
  double l2 = 1e-6;
  double disc_lr = 1e-4;
  std::size_t batch_size = 256;
  std::size_t epochs = 20;
  std::size_t disc_steps = 1;
  std::size_t eval_every = 1;
  double lambda = 1.0;
  TuneMode mode = TuneMode::pfrec;
  std::uint64_t seed = 0;
};

struct TuneEpoch {
  std::size_t epoch = 0;
  double bpr = 0.0;
  std::vector<double> disc;  // per attribute of k, mean cross-entropy
  bool evaluated = false;
  RankingMetrics validation;
  double parameter_ratio = 0.0;
};

struct TuneReport {
  TuneMode mode = TuneMode::pfrec;
  AttributeCombination k;
  std::size_t tuned_parameters = 0;
  std::size_t backbone_parameters = 0;
  std::vector<TuneEpoch> epochs;
};

/// The trainable set of a tuning mode, as slot-name prefixes.
std::vector<std::string> trainable_prefixes(TuneMode mode, std::uint32_t k);

/// Adversarial tuning of one combination. The store holds the backbone; the
/// eliminator (or filter) and discriminator slots of k are created here if
/// absent. Only the mode's trainable set and the discriminator change.
template <typename T>
class Tuner {
 public:
  Tuner(ParamStore<T>& store, EncoderConfig encoder, EliminatorConfig elim,
        std::vector<std::size_t> class_counts, AttributeCombination k, TuneConfig config);

  struct Objective {
    Var bpr;
    Var disc;
    Var total;  // bpr - lambda * disc
    Var reps;
  };

  /// Generator forward on a batch; the discriminator is read but frozen.
  Objective generator_objective(Graph<T>& g, const TrainingBatch& batch) const;

  /// One update of the discriminator on fixed representations; returns the
  /// loss before the update.
  double discriminator_step(const Tensor<T>& reps, std::span<const int> labels);

  /// Discriminator loss of fixed representations under the current heads.
  double discriminator_loss(const Tensor<T>& reps, std::span<const int> labels) const;

  /// One generator update (trainable set only); returns the objective parts.
  struct StepResult {
    double bpr = 0.0;
    double disc = 0.0;
    std::vector<double> disc_per_attribute;
  };

  /// disc_steps discriminator updates followed by one generator update, all
  /// on the same forward pass of the batch.
  StepResult train_batch(const TrainingBatch& batch, std::uint64_t dropout_seed);

  /// Runs config.epochs epochs; emits one record per epoch.
  TuneReport run(const SplitDataset& data, const EpochCallback& log = {});

  const FairModel<T>& model() const { return model_; }
  const TuneConfig& config() const { return config_; }
  ParamStore<T>& store() { return store_; }

 private:
  void freeze_all_but(const std::vector<std::string>& prefixes);

  ParamStore<T>& store_;
  EncoderConfig encoder_;
  EliminatorConfig elim_;
  std::vector<std::size_t> class_counts_;
  AttributeCombination k_;
  TuneConfig config_;
  FairModel<T> model_;
};

/// Line-delimited report records: `key=value` pairs separated by spaces,
/// floating values printed with 6 decimals.
std::string format_record(const PretrainEpoch& e);
std::string format_record(const TuneEpoch& e, const TuneReport& r,
                          const AttributeSchema& schema);

}  // namespace pfrec
