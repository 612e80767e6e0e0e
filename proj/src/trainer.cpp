// SPDX-License-Identifier: Apache-2.0
#include "pfrec/trainer.hpp"

#include <cstdio>

#include "pfrec/heads.hpp"

namespace pfrec {

namespace {

std::string disc_head_prefix(std::uint32_t k, std::size_t attribute) {
  return discriminator_prefix(k) + "a" + std::to_string(attribute) + "/";
}

/// BPR over the real positions of a batch given hidden states [B, W, d].
template <typename T>
Var batch_bpr(Graph<T>& g, const SeqEncoder<T>& encoder, Var hidden,
              const TrainingBatch& batch) {
  std::vector<int> rows, pos, neg;
  for (std::size_t i = 0; i < batch.targets.size(); ++i) {
    if (batch.targets[i] == 0) continue;
    rows.push_back(static_cast<int>(i));
    pos.push_back(batch.targets[i]);
    neg.push_back(batch.negatives[i]);
  }
  const std::size_t d = encoder.config().dim;
  const Var flat = g.reshape(hidden, {batch.rows * batch.width, d});
  const Var sel = g.gather(flat, rows, Shape{rows.size()});
  return bpr_loss(g, encoder.score(g, sel, pos), encoder.score(g, sel, neg));
}

template <typename T>
Var attribute_ce(Graph<T>& g, const ParamStore<T>& store, std::uint32_t k, std::size_t i,
                 const std::vector<std::size_t>& class_counts, Var reps,
                 std::span<const int> labels) {
  const std::size_t m = class_counts.size();
  const std::size_t rows = g.shape(reps).at(0);
  if (i >= m) throw UsageError("disc: attribute " + std::to_string(i) + " out of range");
  if (labels.size() != rows * m) {
    throw ShapeError("disc: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows x " + std::to_string(m) + " attributes");
  }
  std::vector<int> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    y[r] = labels[r * m + i];
    if (y[r] < 0 || static_cast<std::size_t>(y[r]) >= class_counts[i]) {
      throw UsageError("disc: label " + std::to_string(y[r]) + " >= " +
                       std::to_string(class_counts[i]) + " classes of attribute " +
                       std::to_string(i));
    }
  }
  const Var logits = classifier_logits(g, store, disc_head_prefix(k, i), reps);
  return g.scale(g.mean(g.pick(g.log_softmax(logits), y)), T(-1));
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

template <typename T>
Var bpr_loss(Graph<T>& g, Var pos, Var neg) {
  if (g.shape(pos).size() != 1 || g.shape(pos) != g.shape(neg)) {
    throw ShapeError("bpr: score vectors " + g.describe(pos) + " and " + g.describe(neg));
  }
  if (g.shape(pos)[0] == 0) throw UsageError("bpr: no score pairs");
  return g.scale(g.mean(g.log_sigmoid(g.sub(pos, neg))), T(-1));
}

template <typename T>
Var disc_loss(Graph<T>& g, const ParamStore<T>& store, AttributeCombination k,
              const std::vector<std::size_t>& class_counts, Var reps,
              std::span<const int> labels) {
  const auto members = k.members();
  if (members.empty()) throw UsageError("disc: empty attribute combination");
  Var total{};
  for (std::size_t i : members) {
    const Var ce = attribute_ce(g, store, k.k, i, class_counts, reps, labels);
    total = total.valid() ? g.add(total, ce) : ce;
  }
  return total;
}

template <typename T>
void init_discriminator(ParamStore<T>& store, std::size_t dim,
                        const std::vector<std::size_t>& class_counts, AttributeCombination k,
                        std::uint64_t seed) {
  for (std::size_t i : k.members()) {
    if (i >= class_counts.size()) {
      throw UsageError("disc: attribute " + std::to_string(i) + " out of range");
    }
    init_classifier_head(store, disc_head_prefix(k.k, i), dim, class_counts[i],
                         mix_seed(seed, 0xD15C + i));
    store.set_trainable_prefix(disc_head_prefix(k.k, i), false);
  }
}

std::vector<std::string> trainable_prefixes(TuneMode mode, std::uint32_t k) {
  switch (mode) {
    case TuneMode::pfrec:
    case TuneMode::no_prompt: return {eliminator_prefix(k)};
    case TuneMode::fine_tune: return {kBackbonePrefix, eliminator_prefix(k)};
    case TuneMode::filter_baseline: return {filter_prefix(k)};
  }
  return {};
}

PretrainReport pretrain(ParamStore<float>& store, const EncoderConfig& encoder,
                        const EliminatorConfig& elim, const SplitDataset& data,
                        const PretrainConfig& config, const EpochCallback& log) {
  if (config.epochs == 0 || config.batch_size == 0 || config.eval_every == 0) {
    throw UsageError("pretrain: epochs, batch_size and eval_every must be positive");
  }
  store.set_all_trainable(false);
  store.set_trainable_prefix(kBackbonePrefix, true);
  const FairModel<float> model(store, encoder, elim, data.schema.class_counts(), {},
                               TuneMode::pfrec);
  OptimizerConfig opt;
  opt.rule = UpdateRule::adam;
  opt.lr = config.lr;
  opt.l2 = config.l2;
  PretrainReport report;
  ParamStore<float> best;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches =
        make_batches(data, config.batch_size, encoder.max_len, config.seed, epoch);
    if (batches.empty()) throw DataError("pretrain: no user has two training events");
    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const TrainingBatch batch = trim_leading_padding(batches[b]);
      Graph<float> g(true, mix_seed(mix_seed(config.seed, epoch), b));
      const auto out = model.run(g, batch.inputs, batch.rows, batch.width, batch.labels);
      const Var loss = batch_bpr(g, model.encoder(), out.hidden, batch);
      total += g.value(loss).item();
      optimizer_step(store, g.backward(loss), opt);
    }
    PretrainEpoch rec;
    rec.epoch = epoch;
    rec.bpr = total / static_cast<double>(batches.size());
    if (epoch % config.eval_every == 0 || epoch == config.epochs) {
      rec.evaluated = true;
      rec.validation = evaluate_ranking(model, data, HistoryFor::validation);
      if (rec.validation.hit > report.best_hit) {
        report.best_hit = rec.validation.hit;
        report.best_epoch = epoch;
        best = ParamStore<float>();
        best.merge_from(store, kBackbonePrefix);
      }
    }
    report.epochs.push_back(rec);
    if (log) log(format_record(rec));
  }
  store.merge_from(best, kBackbonePrefix);
  return report;
}

template <typename T>
Tuner<T>::Tuner(ParamStore<T>& store, EncoderConfig encoder, EliminatorConfig elim,
                std::vector<std::size_t> class_counts, AttributeCombination k,
                TuneConfig config)
    : store_(store),
      encoder_(encoder),
      elim_(elim),
      class_counts_(class_counts),
      k_(k),
      config_(config),
      model_(store, encoder, elim, class_counts, k, config.mode) {
  if (k.is_identity()) throw UsageError("identity combination needs no tuning");
  if (config_.lambda < 0.0) throw UsageError("tune: lambda must be >= 0");
  if (config_.batch_size == 0 || config_.eval_every == 0) {
    throw UsageError("tune: batch_size and eval_every must be positive");
  }
  const std::string owned = config_.mode == TuneMode::filter_baseline
                                ? filter_prefix(k.k)
                                : eliminator_prefix(k.k);
  if (store_.names(owned).empty()) {
    init_eliminator(store_, encoder_, elim_, class_counts_, k.k, config_.mode, config_.seed);
  }
  if (store_.names(discriminator_prefix(k.k)).empty()) {
    init_discriminator(store_, encoder_.dim, class_counts_, k, config_.seed);
  }
  freeze_all_but(trainable_prefixes(config_.mode, k.k));
}

template <typename T>
void Tuner<T>::freeze_all_but(const std::vector<std::string>& prefixes) {
  store_.set_all_trainable(false);
  for (const auto& p : prefixes) store_.set_trainable_prefix(p, true);
}

template <typename T>
typename Tuner<T>::Objective Tuner<T>::generator_objective(Graph<T>& g,
                                                           const TrainingBatch& batch) const {
  const auto out = model_.run(g, batch.inputs, batch.rows, batch.width, batch.labels);
  Objective o;
  o.reps = out.last;
  o.bpr = batch_bpr(g, model_.encoder(), out.hidden, batch);
  o.disc = disc_loss(g, store_, k_, class_counts_, out.last, batch.labels);
  o.total = g.sub(o.bpr, g.scale(o.disc, static_cast<T>(config_.lambda)));
  return o;
}

template <typename T>
double Tuner<T>::discriminator_loss(const Tensor<T>& reps,
                                    std::span<const int> labels) const {
  Graph<T> g(false);
  return static_cast<double>(
      g.value(disc_loss(g, store_, k_, class_counts_, g.constant(reps), labels)).item());
}

template <typename T>
double Tuner<T>::discriminator_step(const Tensor<T>& reps, std::span<const int> labels) {
  const std::string p = discriminator_prefix(k_.k);
  store_.set_trainable_prefix(p, true);
  Graph<T> g(false);
  const Var loss = disc_loss(g, store_, k_, class_counts_, g.constant(reps), labels);
  OptimizerConfig opt;
  opt.rule = UpdateRule::rmsprop;
  opt.lr = config_.disc_lr;
  try {
    optimizer_step(store_, g.backward(loss), opt);
  } catch (...) {
    store_.set_trainable_prefix(p, false);
    throw;
  }
  store_.set_trainable_prefix(p, false);
  return static_cast<double>(g.value(loss).item());
}

template <typename T>
typename Tuner<T>::StepResult Tuner<T>::train_batch(const TrainingBatch& batch,
                                                    std::uint64_t dropout_seed) {
  Graph<T> g(true, dropout_seed);
  const auto out = model_.run(g, batch.inputs, batch.rows, batch.width, batch.labels);
  const Var bpr = batch_bpr(g, model_.encoder(), out.hidden, batch);
  const Tensor<T> reps = g.value(out.last);
  for (std::size_t s = 0; s < config_.disc_steps; ++s) discriminator_step(reps, batch.labels);

  StepResult r;
  Var disc{};
  for (std::size_t i : k_.members()) {
    const Var part = attribute_ce(g, store_, k_.k, i, class_counts_, out.last, batch.labels);
    r.disc_per_attribute.push_back(static_cast<double>(g.value(part).item()));
    disc = disc.valid() ? g.add(disc, part) : part;
  }
  const Var total = g.sub(bpr, g.scale(disc, static_cast<T>(config_.lambda)));
  OptimizerConfig opt;
  opt.rule = UpdateRule::rmsprop;
  opt.lr = config_.lr;
  opt.l2 = config_.l2;
  optimizer_step(store_, g.backward(total), opt);
  r.bpr = static_cast<double>(g.value(bpr).item());
  r.disc = static_cast<double>(g.value(disc).item());
  return r;
}

template <typename T>
TuneReport Tuner<T>::run(const SplitDataset& data, const EpochCallback& log) {
  TuneReport report;
  report.mode = config_.mode;
  report.k = k_;
  report.backbone_parameters = store_.parameter_count(kBackbonePrefix);
  for (const auto& p : trainable_prefixes(config_.mode, k_.k)) {
    report.tuned_parameters += store_.parameter_count(p);
  }
  const double ratio = static_cast<double>(report.tuned_parameters) /
                       static_cast<double>(report.backbone_parameters);
  for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
    const auto batches =
        make_batches(data, config_.batch_size, encoder_.max_len, config_.seed, epoch);
    if (batches.empty()) throw DataError("tune: no user has two training events");
    TuneEpoch rec;
    rec.epoch = epoch;
    rec.disc.assign(k_.members().size(), 0.0);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const TrainingBatch batch = trim_leading_padding(batches[b]);
      const StepResult r =
          train_batch(batch, mix_seed(mix_seed(config_.seed ^ 0x7C, epoch), b));
      rec.bpr += r.bpr;
      for (std::size_t i = 0; i < rec.disc.size(); ++i) rec.disc[i] += r.disc_per_attribute[i];
    }
    const double n = static_cast<double>(batches.size());
    rec.bpr /= n;
    for (double& v : rec.disc) v /= n;
    rec.parameter_ratio = ratio;
    if (epoch % config_.eval_every == 0 || epoch == config_.epochs) {
      rec.evaluated = true;
      rec.validation = evaluate_ranking(model_, data, HistoryFor::validation);
    }
    report.epochs.push_back(rec);
    if (log) log(format_record(rec, report, data.schema));
  }
  return report;
}

std::string format_record(const PretrainEpoch& e) {
  std::string s = "stage=pretrain epoch=" + std::to_string(e.epoch) + " bpr=" + fixed(e.bpr);
  if (e.evaluated) {
    s += " val_auc=" + fixed(e.validation.auc) + " val_hit10=" + fixed(e.validation.hit) +
         " val_ndcg10=" + fixed(e.validation.ndcg);
  }
  return s;
}

std::string format_record(const TuneEpoch& e, const TuneReport& r,
                          const AttributeSchema& schema) {
  std::string s = "stage=tune mode=" + to_string(r.mode) + " k=" + std::to_string(r.k.k) +
                  " epoch=" + std::to_string(e.epoch) + " bpr=" + fixed(e.bpr);
  const auto members = r.k.members();
  for (std::size_t i = 0; i < members.size() && i < e.disc.size(); ++i) {
    s += " disc_" + schema.names.at(members[i]) + "=" + fixed(e.disc[i]);
  }
  if (e.evaluated) {
    s += " val_auc=" + fixed(e.validation.auc) + " val_hit10=" + fixed(e.validation.hit) +
         " val_ndcg10=" + fixed(e.validation.ndcg);
  }
  s += " param_ratio=" + fixed(e.parameter_ratio);
  return s;
}

template Var bpr_loss(Graph<float>&, Var, Var);
template Var bpr_loss(Graph<double>&, Var, Var);
template Var disc_loss(Graph<float>&, const ParamStore<float>&, AttributeCombination,
                       const std::vector<std::size_t>&, Var, std::span<const int>);
template Var disc_loss(Graph<double>&, const ParamStore<double>&, AttributeCombination,
                       const std::vector<std::size_t>&, Var, std::span<const int>);
template void init_discriminator(ParamStore<float>&, std::size_t,
                                 const std::vector<std::size_t>&, AttributeCombination,
                                 std::uint64_t);
template void init_discriminator(ParamStore<double>&, std::size_t,
                                 const std::vector<std::size_t>&, AttributeCombination,
                                 std::uint64_t);
template class Tuner<float>;
template class Tuner<double>;

}  // namespace pfrec
