// SPDX-License-Identifier: Apache-2.0
#include "pfrec/encoder.hpp"

#include <cmath>

namespace pfrec {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kMaskedLogit = -1e9;

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

}  // namespace

void EncoderConfig::validate() const {
  if (layers < 1) throw UsageError("encoder: layers must be >= 1");
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw UsageError("encoder: dim must be a positive multiple of heads");
  }
  if (max_len < 1) throw UsageError("encoder: max_len must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw UsageError("encoder: dropout must lie in [0, 1)");
  }
}

template <typename T>
void init_backbone(ParamStore<T>& store, const EncoderConfig& config,
                   std::size_t num_items, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, 0xB4C4B0));
  const std::size_t d = config.dim, f = config.ffn();
  Tensor<T> items = normal_tensor<T>({num_items + 1, d}, kInitStd, rng);
  for (std::size_t j = 0; j < d; ++j) items[j] = T(0);
  const std::string p = kBackbonePrefix;
  store.add(p + "item_emb", std::move(items));
  store.add(p + "pos_emb", normal_tensor<T>({config.position_rows(), d}, kInitStd, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string lp = p + "layer" + std::to_string(l) + "/";
    store.add(lp + "attn_norm/gamma", Tensor<T>({d}, T(1)));
    store.add(lp + "attn_norm/beta", Tensor<T>({d}));
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      store.add(lp + "attn/" + w, normal_tensor<T>({d, d}, kInitStd, rng));
      store.add(lp + "attn/b" + std::string(w + 1), Tensor<T>({d}));
    }
    store.add(lp + "ffn_norm/gamma", Tensor<T>({d}, T(1)));
    store.add(lp + "ffn_norm/beta", Tensor<T>({d}));
    store.add(lp + "ffn/w1", normal_tensor<T>({d, f}, kInitStd, rng));
    store.add(lp + "ffn/b1", Tensor<T>({f}));
    store.add(lp + "ffn/w2", normal_tensor<T>({f, d}, kInitStd, rng));
    store.add(lp + "ffn/b2", Tensor<T>({d}));
  }
  store.add(p + "final_norm/gamma", Tensor<T>({d}, T(1)));
  store.add(p + "final_norm/beta", Tensor<T>({d}));
}

std::size_t backbone_parameter_count(const EncoderConfig& config,
                                     std::size_t num_items) {
  const std::size_t d = config.dim, f = config.ffn();
  const std::size_t per_layer = 2 * d             // attention norm
                                + 4 * (d * d + d)  // q, k, v, o
                                + 2 * d            // ffn norm
                                + d * f + f + f * d + d;
  return (num_items + 1) * d + config.position_rows() * d +
         config.layers * per_layer + 2 * d;
}

void require_real_positions(std::span<const int> ids, std::size_t rows,
                            std::size_t width) {
  for (std::size_t r = 0; r < rows; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < width && !any; ++c) any = ids[r * width + c] != 0;
    if (!any) {
      throw UsageError("encoder: row " + std::to_string(r) +
                       " has no real positions");
    }
  }
}

template <typename T>
Tensor<T> attention_mask(std::span<const int> ids, std::size_t rows,
                         std::size_t width, std::size_t prefix) {
  const std::size_t total = prefix + width;
  Tensor<T> mask({rows, total, total}, static_cast<T>(kMaskedLogit));
  for (std::size_t r = 0; r < rows; ++r) {
    T* m = mask.data() + r * total * total;
    const int* row_ids = ids.data() + r * width;
    for (std::size_t q = 0; q < total; ++q) {
      for (std::size_t k = 0; k < prefix; ++k) m[q * total + k] = T(0);
      if (q < prefix) continue;
      const std::size_t qc = q - prefix;
      bool any = prefix > 0;
      if (row_ids[qc] != 0) {
        for (std::size_t kc = 0; kc <= qc; ++kc) {
          if (row_ids[kc] != 0) {
            m[q * total + prefix + kc] = T(0);
            any = true;
          }
        }
      }
      if (!any) m[q * total + q] = T(0);
    }
  }
  return mask;
}

template <typename T>
SeqEncoder<T>::SeqEncoder(EncoderConfig config, const ParamStore<T>& store)
    : config_(std::move(config)), store_(store) {
  config_.validate();
  const auto& items = store_.value(kBackbonePrefix + "item_emb");
  if (items.rank() != 2 || items.dim(1) != config_.dim) {
    throw ShapeError("encoder: item table " + shape_str(items.shape()) +
                     " does not match dim " + std::to_string(config_.dim));
  }
  const auto& pos = store_.value(kBackbonePrefix + "pos_emb");
  if (pos.shape() != Shape{config_.position_rows(), config_.dim}) {
    throw ShapeError("encoder: position table " + shape_str(pos.shape()) +
                     " does not match config");
  }
  num_items_ = items.dim(0) - 1;
}

template <typename T>
std::string SeqEncoder<T>::slot(std::size_t layer, const std::string& name) const {
  return kBackbonePrefix + "layer" + std::to_string(layer) + "/" + name;
}

template <typename T>
Var SeqEncoder<T>::embed(Graph<T>& g, std::span<const int> ids, std::size_t rows,
                         std::size_t width, std::size_t offset) const {
  if (ids.size() != rows * width) {
    throw ShapeError("embed: " + std::to_string(ids.size()) + " ids for a " +
                     std::to_string(rows) + "x" + std::to_string(width) + " batch");
  }
  if (width > config_.max_len || offset + config_.max_len > config_.position_rows()) {
    throw ShapeError("embed: width " + std::to_string(width) + " with offset " +
                     std::to_string(offset) + " exceeds the position table");
  }
  const Var items = g.param(store_, kBackbonePrefix + "item_emb");
  const Var pos = g.param(store_, kBackbonePrefix + "pos_emb");
  const Var h = g.gather(items, ids, Shape{rows, width});
  const std::size_t first = offset + (config_.max_len - width);
  const Var p = g.slice(pos, 0, first, first + width);
  Tensor<T> real({rows, width});
  for (std::size_t i = 0; i < ids.size(); ++i) real[i] = ids[i] != 0 ? T(1) : T(0);
  return g.scale_rows(g.add(h, p), real);
}

template <typename T>
Var SeqEncoder<T>::encode(Graph<T>& g, Var x, const Tensor<T>& mask,
                          const SublayerHook<T>* hook) const {
  const Shape xs = g.shape(x);
  if (xs.size() != 3 || xs[2] != config_.dim) {
    throw ShapeError("encode: expected [rows, positions, " +
                     std::to_string(config_.dim) + "], got node " + g.describe(x));
  }
  const std::size_t B = xs[0], N = xs[1], d = config_.dim, H = config_.heads;
  const std::size_t dh = d / H;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  x = g.dropout(x, config_.dropout);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    auto P = [&](const std::string& name) { return g.param(store_, slot(l, name)); };
    // Attention sublayer.
    const Var a = g.layer_norm(x, P("attn_norm/gamma"), P("attn_norm/beta"));
    auto heads = [&](const char* w, const char* b) {
      const Var proj = g.add(g.matmul(a, P(w)), P(b));
      return g.permute(g.reshape(proj, {B, N, H, dh}), {0, 2, 1, 3});
    };
    const Var q = heads("attn/wq", "attn/bq");
    const Var k = heads("attn/wk", "attn/bk");
    const Var v = heads("attn/wv", "attn/bv");
    const Var scores = g.scale(g.bmm(q, g.permute(k, {0, 1, 3, 2})), inv_sqrt);
    const Var probs = g.softmax(scores, &mask);
    const Var ctx = g.reshape(g.permute(g.bmm(probs, v), {0, 2, 1, 3}), {B, N, d});
    Var att = g.add(g.matmul(ctx, P("attn/wo")), P("attn/bo"));
    if (hook) att = (*hook)(g, l, Sublayer::attention, att);
    x = g.add(x, g.dropout(att, config_.dropout));
    // Feed-forward sublayer.
    const Var f0 = g.layer_norm(x, P("ffn_norm/gamma"), P("ffn_norm/beta"));
    const Var f1 = g.gelu(g.add(g.matmul(f0, P("ffn/w1")), P("ffn/b1")));
    Var ffn = g.add(g.matmul(f1, P("ffn/w2")), P("ffn/b2"));
    if (hook) ffn = (*hook)(g, l, Sublayer::ffn, ffn);
    x = g.add(x, g.dropout(ffn, config_.dropout));
  }
  return g.layer_norm(x, g.param(store_, kBackbonePrefix + "final_norm/gamma"),
                      g.param(store_, kBackbonePrefix + "final_norm/beta"));
}

template <typename T>
Var SeqEncoder<T>::forward(Graph<T>& g, std::span<const int> ids, std::size_t rows,
                           std::size_t width) const {
  require_real_positions(ids, rows, width);
  const Var h0 = embed(g, ids, rows, width, config_.prompt_rows);
  const Tensor<T> mask = attention_mask<T>(ids, rows, width, 0);
  return encode(g, h0, mask);
}

template <typename T>
Var SeqEncoder<T>::last_position(Graph<T>& g, Var hidden) const {
  const Shape& s = g.shape(hidden);
  if (s.size() != 3) throw ShapeError("last_position: expected rank-3 node " + g.describe(hidden));
  return g.reshape(g.slice(hidden, 1, s[1] - 1, s[1]), {s[0], s[2]});
}

template <typename T>
Var SeqEncoder<T>::score(Graph<T>& g, Var reps, std::span<const int> items) const {
  const Shape& s = g.shape(reps);
  if (s.empty() || s.back() != config_.dim || shape_size(s) / config_.dim != items.size()) {
    throw ShapeError("score: " + std::to_string(items.size()) +
                     " items for representations " + g.describe(reps));
  }
  for (int item : items) {
    if (item == 0) throw UsageError("score: padding id 0 is not an item");
  }
  const Var table = g.param(store_, kBackbonePrefix + "item_emb");
  const Var e = g.gather(table, items, Shape(s.begin(), s.end() - 1));
  return g.sum_last(g.mul(reps, e));
}

template <typename T>
T SeqEncoder<T>::score_value(std::span<const T> rep, int item) const {
  if (item <= 0 || static_cast<std::size_t>(item) > num_items_) {
    throw UsageError("score: invalid item id " + std::to_string(item));
  }
  const T* e = store_.value(kBackbonePrefix + "item_emb").data() +
               static_cast<std::size_t>(item) * config_.dim;
  T total = 0;
  for (std::size_t j = 0; j < config_.dim; ++j) total += rep[j] * e[j];
  return total;
}

template void init_backbone(ParamStore<float>&, const EncoderConfig&, std::size_t, std::uint64_t);
template void init_backbone(ParamStore<double>&, const EncoderConfig&, std::size_t, std::uint64_t);
template Tensor<float> attention_mask(std::span<const int>, std::size_t, std::size_t, std::size_t);
template Tensor<double> attention_mask(std::span<const int>, std::size_t, std::size_t, std::size_t);
template class SeqEncoder<float>;
template class SeqEncoder<double>;

}  // namespace pfrec
