// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations used by unit and acceptance tests.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfrec/eval.hpp"
#include "pfrec/rng.hpp"

namespace pfrec::testing {

/// Mann-Whitney AUC of one positive against negatives via average ranks.
double oracle_auc(const RankedCandidates& c);
/// 0-based position of the positive after a full sort by (score desc, id asc).
std::size_t oracle_position(const RankedCandidates& c);
double oracle_hit(const RankedCandidates& c, std::size_t n = 10);
double oracle_ndcg(const RankedCandidates& c, std::size_t n = 10);
/// Micro-F1 from per-class TP/FP/FN tallies.
double oracle_micro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                       std::size_t classes);

/// Small candidate list drawn from a coarse score grid so ties are common.
RankedCandidates random_candidates(Rng& rng);

/// A raw click log with attribute rows, in arbitrary line order.
struct RawLog {
  struct Row {
    std::int64_t user, item, timestamp;
  };
  std::vector<Row> rows;
  std::vector<std::pair<std::int64_t, std::vector<std::string>>> attributes;
  std::size_t attribute_count = 0;

  std::string interactions_tsv() const;
  std::string attributes_tsv() const;
};

RawLog random_raw_log(Rng& rng);

/// Runs ingest, min-10 filtering, the split, negative sampling and batching
/// on `log` and checks every output against a direct recomputation.
/// Returns an empty string on success, otherwise the first discrepancy.
std::string verify_protocol(const RawLog& log, std::uint64_t seed);

/// Parameter counts listed tensor by tensor (d model width, f FFN width).
struct ModelShape {
  std::size_t d = 64, layers = 2, ffn = 256, items = 500, max_len = 50;
  std::size_t prompt_len = 10, bottleneck = 16;
  std::vector<std::size_t> classes = {2, 4};
  bool task_prompt = true;
};
std::size_t oracle_backbone_count(const ModelShape& s);
std::size_t oracle_eliminator_count(const ModelShape& s);

}  // namespace pfrec::testing
