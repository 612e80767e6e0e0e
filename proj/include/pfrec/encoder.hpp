// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "pfrec/graph.hpp"

namespace pfrec {

struct EncoderConfig {
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t max_len = 50;
  std::size_t ffn_width = 0;    // 0 selects 4 * dim
  std::size_t prompt_rows = 0;  // position rows reserved ahead of behaviours
  double dropout = 0.2;

  void validate() const;
  std::size_t ffn() const { return ffn_width ? ffn_width : 4 * dim; }
  std::size_t position_rows() const { return max_len + prompt_rows; }
};

inline const std::string kBackbonePrefix = "backbone/";

/// Creates every backbone slot (item table with an all-zero padding row 0,
/// position table, per-layer attention/FFN/norm weights, final norm).
template <typename T>
void init_backbone(ParamStore<T>& store, const EncoderConfig& config,
                   std::size_t num_items, std::uint64_t seed);

/// Closed-form size of the backbone created by init_backbone.
std::size_t backbone_parameter_count(const EncoderConfig& config,
                                     std::size_t num_items);

/// Additive attention mask of shape [rows, prefix + width, prefix + width]
/// for left-padded `ids` (rows x width). Every query sees all prefix rows;
/// behaviour rows see earlier real behaviour rows; prefix rows see only the
/// prefix. A padding query with nothing visible attends to itself.
template <typename T>
Tensor<T> attention_mask(std::span<const int> ids, std::size_t rows,
                         std::size_t width, std::size_t prefix);

enum class Sublayer { attention, ffn };

/// Called on each sublayer output before its residual add (adapter slot).
template <typename T>
using SublayerHook = std::function<Var(Graph<T>&, std::size_t layer, Sublayer, Var)>;

/// Causal self-attention recommender over a ParamStore holding backbone/*.
///
/// Blocks are pre-norm: x += Attn(LN(x)); x += FFN(LN(x)); a final LN follows
/// the last block. The user representation is the hidden state of the last
/// (most recent) position.
template <typename T>
class SeqEncoder {
 public:
  SeqEncoder(EncoderConfig config, const ParamStore<T>& store);

  const EncoderConfig& config() const { return config_; }
  const ParamStore<T>& store() const { return store_; }
  std::size_t num_items() const { return num_items_; }

  /// Item plus position embedding of a left-padded id matrix, shape
  /// [rows, width, dim]. Columns are aligned to a max_len-wide frame, so
  /// column c uses position row offset + (max_len - width) + c; with
  /// width == max_len this is offset + c. Padding rows are zero.
  Var embed(Graph<T>& g, std::span<const int> ids, std::size_t rows,
            std::size_t width, std::size_t offset) const;

  /// Runs the blocks on x [rows, total, dim]; returns final hidden states.
  Var encode(Graph<T>& g, Var x, const Tensor<T>& mask,
             const SublayerHook<T>* hook = nullptr) const;

  /// embed (offset = prompt_rows) + causal mask + encode.
  Var forward(Graph<T>& g, std::span<const int> ids, std::size_t rows,
              std::size_t width) const;

  /// Hidden state of the last position: [rows, total, dim] -> [rows, dim].
  Var last_position(Graph<T>& g, Var hidden) const;

  /// <reps[..., :], item_emb[items[...]]>; reps is [..., dim] and `items`
  /// holds one id per leading index. Padding id 0 is rejected.
  Var score(Graph<T>& g, Var reps, std::span<const int> items) const;

  /// Same as score() for plain tensors (evaluation path, no graph).
  T score_value(std::span<const T> rep, int item) const;

 private:
  std::string slot(std::size_t layer, const std::string& name) const;

  EncoderConfig config_;
  const ParamStore<T>& store_;
  std::size_t num_items_;
};

/// Throws UsageError unless every row of the id matrix has a real item.
void require_real_positions(std::span<const int> ids, std::size_t rows,
                            std::size_t width);

}  // namespace pfrec
