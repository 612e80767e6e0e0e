// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pfrec/data.hpp"
#include "pfrec/encoder.hpp"

namespace pfrec {

struct EliminatorConfig {
  std::size_t prompt_len = 10;  // task prompt tokens (m1)
  std::size_t bottleneck = 16;  // adapter width (d_down)

  void validate(std::size_t dim) const;
};

enum class TuneMode { pfrec, no_prompt, fine_tune, filter_baseline };

std::string to_string(TuneMode mode);
/// Accepts pfrec, no-prompt, fine-tune, filter-baseline.
TuneMode parse_tune_mode(const std::string& text);

std::string eliminator_prefix(std::uint32_t k);  // "elim/k=<k>/"
std::string discriminator_prefix(std::uint32_t k);  // "disc/k=<k>/"
std::string filter_prefix(std::uint32_t k);  // "filter/k=<k>/"

/// Position rows the backbone must reserve ahead of behaviours.
inline std::size_t prompt_rows(const EliminatorConfig& elim, std::size_t attributes) {
  return elim.prompt_len + attributes;
}

/// Creates the slots of one combination's eliminator:
///   task_prompt [m1, d]               (omitted in no-prompt mode)
///   attr<i>/emb [C_i, d]
///   layer<l>/{attn,ffn}_adapter/{down, up, norm/gamma, norm/beta}
/// For filter-baseline mode a filter is created instead. All slots trainable.
template <typename T>
void init_eliminator(ParamStore<T>& store, const EncoderConfig& encoder,
                     const EliminatorConfig& elim,
                     const std::vector<std::size_t>& class_counts, std::uint32_t k,
                     TuneMode mode, std::uint64_t seed);

/// Closed-form size of what init_eliminator creates.
std::size_t eliminator_parameter_count(const EncoderConfig& encoder,
                                       const EliminatorConfig& elim,
                                       const std::vector<std::size_t>& class_counts,
                                       TuneMode mode);

/// LayerNorm(X W_d) W_u + X over the last axis.
template <typename T>
Var adapter_apply(Graph<T>& g, Var x, Var w_down, Var w_up, Var gamma, Var beta);

/// Prompt-enhanced input: embeddings [rows, prefix + width, d] and the
/// matching attention mask.
template <typename T>
struct PromptedSequence {
  Var embeddings;
  Tensor<T> mask;
  std::size_t prefix = 0;  // prompt rows ahead of the behaviours
};

/// A recommender view over one ParamStore: the plain backbone (k = 0), a
/// backbone plus eliminator k (pfrec, no-prompt, fine-tune) or a backbone
/// followed by a representation filter (filter-baseline).
template <typename T>
class FairModel {
 public:
  FairModel(const ParamStore<T>& store, EncoderConfig encoder, EliminatorConfig elim,
            std::vector<std::size_t> class_counts, AttributeCombination k, TuneMode mode);

  struct Output {
    Var hidden;  // [rows, width, d] behaviour positions
    Var last;    // [rows, d] user representation
  };

  /// `labels` holds rows x m attribute labels (ignored when k = 0).
  Output run(Graph<T>& g, std::span<const int> ids, std::size_t rows, std::size_t width,
             std::span<const int> labels) const;

  PromptedSequence<T> build_prompt_sequence(Graph<T>& g, std::span<const int> ids,
                                            std::size_t rows, std::size_t width,
                                            std::span<const int> labels) const;

  /// Representations of many users (no gradient), one row per sequence.
  Tensor<T> representations(const std::vector<std::vector<int>>& sequences,
                            const std::vector<std::vector<int>>& labels,
                            std::size_t batch_size = 256) const;

  const SeqEncoder<T>& encoder() const { return encoder_; }
  const ParamStore<T>& store() const { return store_; }
  AttributeCombination combination() const { return k_; }
  TuneMode mode() const { return mode_; }
  const std::vector<std::size_t>& class_counts() const { return class_counts_; }

 private:
  bool uses_eliminator() const {
    return !k_.is_identity() && mode_ != TuneMode::filter_baseline;
  }

  const ParamStore<T>& store_;
  SeqEncoder<T> encoder_;
  EliminatorConfig elim_;
  std::vector<std::size_t> class_counts_;
  AttributeCombination k_;
  TuneMode mode_;
};

}  // namespace pfrec
