// SPDX-License-Identifier: Apache-2.0
#include "pfrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pfrec/heads.hpp"

namespace pfrec {

std::size_t rank_of_positive(const RankedCandidates& c) {
  std::size_t above = 0;
  for (std::size_t j = 0; j < c.negatives.size(); ++j) {
    const double s = c.negatives[j];
    if (s > c.positive || (s == c.positive && c.negative_items[j] < c.positive_item)) ++above;
  }
  return above + 1;
}

double user_auc(const RankedCandidates& c) {
  if (c.negatives.empty()) throw UsageError("auc: no negative candidates");
  double wins = 0.0;
  for (double s : c.negatives) {
    if (c.positive > s) {
      wins += 1.0;
    } else if (c.positive == s) {
      wins += 0.5;
    }
  }
  return wins / static_cast<double>(c.negatives.size());
}

double user_hit(const RankedCandidates& c, std::size_t n) {
  return rank_of_positive(c) <= n ? 1.0 : 0.0;
}

double user_ndcg(const RankedCandidates& c, std::size_t n) {
  const std::size_t r = rank_of_positive(c);
  return r <= n ? 1.0 / std::log2(static_cast<double>(r) + 1.0) : 0.0;
}

namespace {

template <typename F>
double mean_over(std::span<const RankedCandidates> users, F f) {
  if (users.empty()) return 0.0;
  double total = 0.0;
  for (const auto& c : users) total += f(c);
  return total / static_cast<double>(users.size());
}

}  // namespace

double auc(std::span<const RankedCandidates> users) { return mean_over(users, user_auc); }

double hit_at_n(std::span<const RankedCandidates> users, std::size_t n) {
  return mean_over(users, [n](const RankedCandidates& c) { return user_hit(c, n); });
}

double ndcg_at_n(std::span<const RankedCandidates> users, std::size_t n) {
  return mean_over(users, [n](const RankedCandidates& c) { return user_ndcg(c, n); });
}

double micro_f1(std::span<const int> predictions, std::span<const int> labels,
                std::size_t classes) {
  if (predictions.size() != labels.size()) {
    throw UsageError("micro_f1: " + std::to_string(predictions.size()) +
                     " predictions for " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) return 0.0;
  std::vector<std::size_t> confusion(classes * classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if (p < 0 || y < 0 || static_cast<std::size_t>(p) >= classes ||
        static_cast<std::size_t>(y) >= classes) {
      throw UsageError("micro_f1: class id out of range");
    }
    ++confusion[static_cast<std::size_t>(y) * classes + static_cast<std::size_t>(p)];
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t o = 0; o < classes; ++o) {
      if (o == c) {
        tp += confusion[c * classes + c];
      } else {
        fn += confusion[c * classes + o];
        fp += confusion[o * classes + c];
      }
    }
  }
  const double denom = static_cast<double>(2 * tp + fp + fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

template <typename T>
Tensor<T> user_representations(const FairModel<T>& model, const SplitDataset& data,
                               std::size_t batch_size) {
  std::vector<std::vector<int>> seqs, labels;
  seqs.reserve(data.users.size());
  for (const auto& u : data.users) {
    seqs.push_back(history(u, HistoryFor::test));
    labels.push_back(u.labels);
  }
  return model.representations(seqs, labels, batch_size);
}

template <typename T>
std::vector<RankedCandidates> score_candidates(const FairModel<T>& model,
                                               const SplitDataset& data, HistoryFor target,
                                               std::size_t batch_size) {
  std::vector<std::vector<int>> seqs, labels;
  for (const auto& u : data.users) {
    if (u.negatives.empty()) {
      throw UsageError("evaluate: user " + std::to_string(u.user_id) +
                       " has no negative candidates");
    }
    seqs.push_back(history(u, target));
    labels.push_back(u.labels);
  }
  const Tensor<T> reps = model.representations(seqs, labels, batch_size);
  const std::size_t d = model.encoder().config().dim;
  std::vector<RankedCandidates> out(data.users.size());
  for (std::size_t i = 0; i < data.users.size(); ++i) {
    const auto& u = data.users[i];
    const std::span<const T> rep(reps.data() + i * d, d);
    RankedCandidates& c = out[i];
    c.positive_item = target == HistoryFor::test ? u.test : u.validation;
    c.positive = static_cast<double>(model.encoder().score_value(rep, c.positive_item));
    c.negative_items = u.negatives;
    c.negatives.reserve(u.negatives.size());
    for (int item : u.negatives) {
      c.negatives.push_back(static_cast<double>(model.encoder().score_value(rep, item)));
    }
  }
  return out;
}

template <typename T>
RankingMetrics evaluate_ranking(const FairModel<T>& model, const SplitDataset& data,
                                HistoryFor target, std::size_t batch_size) {
  const auto c = score_candidates(model, data, target, batch_size);
  return {auc(c), hit_at_n(c, 10), ndcg_at_n(c, 10), c.size()};
}

namespace {

std::vector<int> predict(const ParamStore<float>& head, const Tensor<float>& x) {
  Graph<float> g(false);
  const Var logits = classifier_logits(g, head, "", g.constant(x));
  const Tensor<float>& v = g.value(logits);
  const std::size_t n = v.dim(0), c = v.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = v.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

double mean_ce(const ParamStore<float>& head, const Tensor<float>& x,
               std::span<const int> labels) {
  Graph<float> g(false);
  const Var logits = classifier_logits(g, head, "", g.constant(x));
  return -static_cast<double>(g.value(g.mean(g.pick(g.log_softmax(logits), labels))).item());
}

Tensor<float> rows_of(const Tensor<float>& reps, std::span<const std::size_t> idx) {
  const std::size_t d = reps.dim(1);
  Tensor<float> out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(reps.data() + idx[i] * d, d, out.data() + i * d);
  }
  return out;
}

}  // namespace

AttributeAttack train_attacker(const Tensor<float>& reps, std::span<const int> labels,
                               std::size_t classes, const AttackerConfig& config,
                               const std::string& name) {
  if (reps.rank() != 2 || reps.dim(0) != labels.size()) {
    throw ShapeError("attacker: representations " + shape_str(reps.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size(), d = reps.dim(1);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw UsageError("attacker: label " + std::to_string(y) + " out of range");
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(config.seed, 0xA77AC4));
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train_all = static_cast<std::size_t>(std::floor(config.train_fraction * n));
  const auto n_val = static_cast<std::size_t>(
      std::floor(config.validation_fraction * static_cast<double>(n_train_all)));
  const std::size_t n_fit = n_train_all - n_val;
  if (n_fit == 0 || n_val == 0 || n_train_all >= n) {
    throw DataError("attacker: " + std::to_string(n) + " users are too few to split");
  }
  const std::span<const std::size_t> fit_idx(order.data(), n_fit);
  const std::span<const std::size_t> val_idx(order.data() + n_fit, n_val);
  const std::span<const std::size_t> test_idx(order.data() + n_train_all, n - n_train_all);

  auto labels_of = [&](std::span<const std::size_t> idx) {
    std::vector<int> out;
    for (std::size_t i : idx) out.push_back(labels[i]);
    return out;
  };
  const std::vector<int> fit_y = labels_of(fit_idx), val_y = labels_of(val_idx),
                         test_y = labels_of(test_idx);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < n_train_all; ++i) ++counts[labels[order[i]]];
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) {
      throw DataError("attacker: class " + std::to_string(c) + " of attribute '" + name +
                      "' is absent from the attacker-train split; resample the seed");
    }
  }
  const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) -
                                        counts.begin());

  const Tensor<float> val_x = rows_of(reps, val_idx), test_x = rows_of(reps, test_idx);
  ParamStore<float> head;
  init_classifier_head(head, "", d, classes, mix_seed(config.seed, 0x4EAD));
  ParamStore<float> best = head;
  double best_loss = mean_ce(head, val_x, val_y);
  std::size_t since_best = 0, epochs = 0;
  OptimizerConfig opt;
  opt.rule = UpdateRule::adam;
  opt.lr = config.lr;
  std::vector<std::size_t> perm(n_fit);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng erng(mix_seed(config.seed, epoch + 1));
    erng.shuffle(std::span<std::size_t>(perm));
    for (std::size_t s = 0; s < n_fit; s += config.batch_size) {
      const std::size_t e = std::min(n_fit, s + config.batch_size);
      std::vector<std::size_t> idx;
      std::vector<int> y;
      for (std::size_t j = s; j < e; ++j) {
        idx.push_back(fit_idx[perm[j]]);
        y.push_back(fit_y[perm[j]]);
      }
      Graph<float> g(true);
      const Var logits = classifier_logits(g, head, "", g.constant(rows_of(reps, idx)));
      const Var loss = g.scale(g.mean(g.pick(g.log_softmax(logits), y)), -1.0f);
      optimizer_step(head, g.backward(loss), opt);
    }
    ++epochs;
    const double loss = mean_ce(head, val_x, val_y);
    if (loss < best_loss) {
      best_loss = loss;
      best = head;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  AttributeAttack out;
  out.attribute = name;
  out.classes = classes;
  out.micro_f1 = micro_f1(predict(best, test_x), test_y, classes);
  const std::vector<int> base(test_y.size(), majority);
  out.majority_f1 = micro_f1(base, test_y, classes);
  out.train_users = n_fit;
  out.validation_users = n_val;
  out.test_users = test_y.size();
  out.epochs = epochs;
  return out;
}

AttackerReport attack_all(const Tensor<float>& reps, const SplitDataset& data,
                          const AttackerConfig& config) {
  AttackerReport report;
  for (std::size_t i = 0; i < data.attribute_count(); ++i) {
    std::vector<int> labels;
    labels.reserve(data.users.size());
    for (const auto& u : data.users) labels.push_back(u.labels.at(i));
    AttackerConfig c = config;
    c.seed = mix_seed(config.seed, i);
    report.attributes.push_back(
        train_attacker(reps, labels, data.schema.classes(i), c, data.schema.names[i]));
  }
  return report;
}

template std::vector<RankedCandidates> score_candidates(const FairModel<float>&,
                                                        const SplitDataset&, HistoryFor,
                                                        std::size_t);
template std::vector<RankedCandidates> score_candidates(const FairModel<double>&,
                                                        const SplitDataset&, HistoryFor,
                                                        std::size_t);
template RankingMetrics evaluate_ranking(const FairModel<float>&, const SplitDataset&,
                                         HistoryFor, std::size_t);
template RankingMetrics evaluate_ranking(const FairModel<double>&, const SplitDataset&,
                                         HistoryFor, std::size_t);
template Tensor<float> user_representations(const FairModel<float>&, const SplitDataset&,
                                            std::size_t);
template Tensor<double> user_representations(const FairModel<double>&, const SplitDataset&,
                                             std::size_t);

}  // namespace pfrec
