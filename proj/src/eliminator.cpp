// SPDX-License-Identifier: Apache-2.0
#include "pfrec/eliminator.hpp"

#include <numeric>

#include "pfrec/heads.hpp"

namespace pfrec {

namespace {

constexpr double kInitStd = 0.02;
const char* const kAdapters[] = {"attn_adapter", "ffn_adapter"};

template <typename T>
Tensor<T> normal_tensor(Shape shape, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal() * kInitStd);
  return t;
}

std::string adapter_slot(std::uint32_t k, std::size_t layer, Sublayer which,
                         const std::string& name) {
  return eliminator_prefix(k) + "layer" + std::to_string(layer) + "/" +
         kAdapters[which == Sublayer::attention ? 0 : 1] + "/" + name;
}

}  // namespace

void EliminatorConfig::validate(std::size_t dim) const {
  if (prompt_len < 1) throw UsageError("eliminator: prompt_len must be >= 1");
  if (bottleneck < 1 || bottleneck >= dim) {
    throw UsageError("eliminator: bottleneck must lie in [1, dim)");
  }
}

std::string to_string(TuneMode mode) {
  switch (mode) {
    case TuneMode::pfrec: return "pfrec";
    case TuneMode::no_prompt: return "no-prompt";
    case TuneMode::fine_tune: return "fine-tune";
    case TuneMode::filter_baseline: return "filter-baseline";
  }
  return "?";
}

TuneMode parse_tune_mode(const std::string& text) {
  for (TuneMode m : {TuneMode::pfrec, TuneMode::no_prompt, TuneMode::fine_tune,
                     TuneMode::filter_baseline}) {
    if (to_string(m) == text) return m;
  }
  throw UsageError("unknown tuning mode '" + text +
                   "' (expected pfrec, no-prompt, fine-tune or filter-baseline)");
}

std::string eliminator_prefix(std::uint32_t k) { return "elim/k=" + std::to_string(k) + "/"; }
std::string discriminator_prefix(std::uint32_t k) { return "disc/k=" + std::to_string(k) + "/"; }
std::string filter_prefix(std::uint32_t k) { return "filter/k=" + std::to_string(k) + "/"; }

template <typename T>
void init_eliminator(ParamStore<T>& store, const EncoderConfig& encoder,
                     const EliminatorConfig& elim,
                     const std::vector<std::size_t>& class_counts, std::uint32_t k,
                     TuneMode mode, std::uint64_t seed) {
  if (k == 0) throw UsageError("identity combination needs no tuning");
  encoder.validate();
  elim.validate(encoder.dim);
  const std::size_t d = encoder.dim;
  if (mode == TuneMode::filter_baseline) {
    init_filter(store, filter_prefix(k), d, mix_seed(seed, 0xF1));
    return;
  }
  Rng rng(mix_seed(seed, 0xE1 + k));
  const std::string p = eliminator_prefix(k);
  if (mode != TuneMode::no_prompt) {
    store.add(p + "task_prompt", normal_tensor<T>({elim.prompt_len, d}, rng));
  }
  for (std::size_t i = 0; i < class_counts.size(); ++i) {
    store.add(p + "attr" + std::to_string(i) + "/emb",
              normal_tensor<T>({class_counts[i], d}, rng));
  }
  for (std::size_t l = 0; l < encoder.layers; ++l) {
    for (Sublayer s : {Sublayer::attention, Sublayer::ffn}) {
      store.add(adapter_slot(k, l, s, "down"), normal_tensor<T>({d, elim.bottleneck}, rng));
      store.add(adapter_slot(k, l, s, "up"), Tensor<T>({elim.bottleneck, d}));
      store.add(adapter_slot(k, l, s, "norm/gamma"), Tensor<T>({elim.bottleneck}, T(1)));
      store.add(adapter_slot(k, l, s, "norm/beta"), Tensor<T>({elim.bottleneck}));
    }
  }
}

std::size_t eliminator_parameter_count(const EncoderConfig& encoder,
                                       const EliminatorConfig& elim,
                                       const std::vector<std::size_t>& class_counts,
                                       TuneMode mode) {
  const std::size_t d = encoder.dim, b = elim.bottleneck;
  if (mode == TuneMode::filter_baseline) return 2 * (d * d + d);
  const std::size_t classes =
      std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0});
  const std::size_t prompt = mode == TuneMode::no_prompt ? 0 : elim.prompt_len * d;
  return prompt + classes * d + encoder.layers * 2 * (2 * d * b + 2 * b);
}

template <typename T>
Var adapter_apply(Graph<T>& g, Var x, Var w_down, Var w_up, Var gamma, Var beta) {
  const Var h = g.layer_norm(g.matmul(x, w_down), gamma, beta);
  return g.add(g.matmul(h, w_up), x);
}

template <typename T>
FairModel<T>::FairModel(const ParamStore<T>& store, EncoderConfig encoder,
                        EliminatorConfig elim, std::vector<std::size_t> class_counts,
                        AttributeCombination k, TuneMode mode)
    : store_(store),
      encoder_(std::move(encoder), store),
      elim_(elim),
      class_counts_(std::move(class_counts)),
      k_(k),
      mode_(mode) {
  if (encoder_.config().prompt_rows != prompt_rows(elim_, class_counts_.size())) {
    throw UsageError("model: backbone reserves " +
                     std::to_string(encoder_.config().prompt_rows) +
                     " prompt positions, eliminator needs " +
                     std::to_string(prompt_rows(elim_, class_counts_.size())));
  }
  if (!k_.is_identity() && (k_.k >> class_counts_.size()) != 0) {
    throw UsageError("model: combination " + std::to_string(k_.k) +
                     " selects attributes beyond m = " +
                     std::to_string(class_counts_.size()));
  }
}

template <typename T>
PromptedSequence<T> FairModel<T>::build_prompt_sequence(Graph<T>& g,
                                                        std::span<const int> ids,
                                                        std::size_t rows, std::size_t width,
                                                        std::span<const int> labels) const {
  if (!uses_eliminator()) throw UsageError("model: no eliminator to prompt");
  const std::size_t m = class_counts_.size();
  if (labels.size() != rows * m) {
    throw ShapeError("prompt: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " users x " + std::to_string(m) + " attributes");
  }
  const std::string p = eliminator_prefix(k_.k);
  std::vector<Var> parts;
  if (mode_ != TuneMode::no_prompt) {
    std::vector<int> idx(rows * elim_.prompt_len);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i % elim_.prompt_len);
    parts.push_back(g.gather(g.param(store_, p + "task_prompt"), idx,
                             Shape{rows, elim_.prompt_len}));
  }
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<int> li(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const int label = labels[r * m + i];
      if (label < 0 || static_cast<std::size_t>(label) >= class_counts_[i]) {
        throw UsageError("prompt: unknown label " + std::to_string(label) +
                         " for attribute " + std::to_string(i));
      }
      li[r] = label;
    }
    parts.push_back(g.gather(g.param(store_, p + "attr" + std::to_string(i) + "/emb"), li,
                             Shape{rows, 1}));
  }
  const std::size_t prefix = (mode_ != TuneMode::no_prompt ? elim_.prompt_len : 0) + m;
  parts.push_back(encoder_.embed(g, ids, rows, width, encoder_.config().prompt_rows));
  PromptedSequence<T> out;
  out.embeddings = g.concat(parts, 1);
  out.mask = attention_mask<T>(ids, rows, width, prefix);
  out.prefix = prefix;
  return out;
}

template <typename T>
typename FairModel<T>::Output FairModel<T>::run(Graph<T>& g, std::span<const int> ids,
                                                std::size_t rows, std::size_t width,
                                                std::span<const int> labels) const {
  require_real_positions(ids, rows, width);
  Output out;
  if (!uses_eliminator()) {
    Var h = encoder_.forward(g, ids, rows, width);
    if (mode_ == TuneMode::filter_baseline && !k_.is_identity()) {
      h = apply_filter(g, store_, filter_prefix(k_.k), h);
    }
    out.hidden = h;
    out.last = encoder_.last_position(g, h);
    return out;
  }
  const PromptedSequence<T> seq = build_prompt_sequence(g, ids, rows, width, labels);
  const std::uint32_t k = k_.k;
  const ParamStore<T>& store = store_;
  const SublayerHook<T> hook = [k, &store](Graph<T>& gg, std::size_t layer, Sublayer s,
                                           Var x) {
    auto P = [&](const char* n) { return gg.param(store, adapter_slot(k, layer, s, n)); };
    return adapter_apply(gg, x, P("down"), P("up"), P("norm/gamma"), P("norm/beta"));
  };
  const Var h = encoder_.encode(g, seq.embeddings, seq.mask, &hook);
  out.hidden = g.slice(h, 1, seq.prefix, seq.prefix + width);
  out.last = encoder_.last_position(g, h);
  return out;
}

template <typename T>
Tensor<T> FairModel<T>::representations(const std::vector<std::vector<int>>& sequences,
                                        const std::vector<std::vector<int>>& labels,
                                        std::size_t batch_size) const {
  const std::size_t n = sequences.size(), d = encoder_.config().dim;
  const std::size_t m = class_counts_.size();
  if (labels.size() != n) throw ShapeError("representations: labels/sequences mismatch");
  Tensor<T> out({n, d});
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    std::vector<std::vector<int>> chunk(sequences.begin() + start, sequences.begin() + end);
    std::size_t width = 0;
    const std::vector<int> ids = pad_sequences(chunk, encoder_.config().max_len, width);
    std::vector<int> lab;
    lab.reserve((end - start) * m);
    for (std::size_t u = start; u < end; ++u) {
      if (labels[u].size() != m) throw ShapeError("representations: label arity mismatch");
      lab.insert(lab.end(), labels[u].begin(), labels[u].end());
    }
    Graph<T> g(false);
    const Output o = run(g, ids, end - start, width, lab);
    const Tensor<T>& v = g.value(o.last);
    std::copy(v.data(), v.data() + v.size(), out.data() + start * d);
  }
  return out;
}

template void init_eliminator(ParamStore<float>&, const EncoderConfig&,
                              const EliminatorConfig&, const std::vector<std::size_t>&,
                              std::uint32_t, TuneMode, std::uint64_t);
template void init_eliminator(ParamStore<double>&, const EncoderConfig&,
                              const EliminatorConfig&, const std::vector<std::size_t>&,
                              std::uint32_t, TuneMode, std::uint64_t);
template Var adapter_apply(Graph<float>&, Var, Var, Var, Var, Var);
template Var adapter_apply(Graph<double>&, Var, Var, Var, Var, Var);
template class FairModel<float>;
template class FairModel<double>;

}  // namespace pfrec
