// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace pfrec {

struct Interaction {
  std::int64_t user = 0;
  std::int64_t item = 0;
  std::int64_t timestamp = 0;
};

/// Names and label vocabularies of the m sensitive attributes. Label strings
/// map to dense ids in first-seen order.
struct AttributeSchema {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> labels;

  std::size_t count() const { return names.size(); }
  std::size_t classes(std::size_t attribute) const {
    return labels.at(attribute).size();
  }
  std::vector<std::size_t> class_counts() const;
  /// Index of a named attribute; throws UsageError if unknown.
  std::size_t index_of(const std::string& name) const;
};

/// Click log plus per-user attribute records. Events are sorted per user by
/// (timestamp, item id).
struct InteractionLog {
  AttributeSchema schema;
  std::map<std::int64_t, std::vector<int>> attributes;
  std::map<std::int64_t, std::vector<Interaction>> events;

  std::size_t event_count() const;
  std::size_t user_count() const { return events.size(); }
};

/// Parses the two TSV inputs:
///   interactions: user_id TAB item_id TAB timestamp
///   attributes:   user_id TAB label_1 ... TAB label_m
/// Attribute names default to a1..am when `attribute_names` is empty.
/// Malformed rows raise DataError naming the file and line; so does a user
/// that clicks but has no attribute record.
InteractionLog ingest(std::istream& interactions, std::istream& attributes,
                      const std::vector<std::string>& attribute_names = {});
InteractionLog ingest_files(const std::string& interactions_path,
                            const std::string& attributes_path,
                            const std::vector<std::string>& attribute_names = {});

/// Drops users with fewer than `threshold` events. threshold must be >= 3.
InteractionLog filter_min_activity(const InteractionLog& log,
                                   std::size_t threshold = 10);

struct UserSplit {
  std::int64_t user_id = 0;
  std::vector<int> train;  // dense item ids, oldest first
  int validation = 0;
  int test = 0;
  std::vector<int> labels;
  std::vector<int> clicked;    // sorted unique dense ids over all splits
  std::vector<int> negatives;  // evaluation candidates, never clicked
  bool negatives_exhausted = false;

  bool has_clicked(int item) const;
};

/// Leave-one-out split. Dense item id 0 is the padding id; real items are
/// numbered 1..num_items() in ascending raw-id order.
struct SplitDataset {
  AttributeSchema schema;
  std::vector<std::int64_t> item_ids;  // dense id -> raw id; [0] unused
  std::vector<UserSplit> users;

  std::size_t num_items() const { return item_ids.empty() ? 0 : item_ids.size() - 1; }
  std::size_t attribute_count() const { return schema.count(); }
};

/// Per user: test = last event, validation = second to last, train = rest.
/// Throws DataError for a user with fewer than 3 events.
SplitDataset split_leave_one_out(const InteractionLog& log);

struct NegativeSample {
  std::vector<int> items;
  bool exhausted = false;  // complement was smaller than requested
};

/// `n` distinct items the user never clicked, deterministic in (seed, user).
/// When fewer than `n` exist the whole complement is returned and flagged.
NegativeSample sample_negatives(const UserSplit& user, std::size_t num_items,
                                std::size_t n, std::uint64_t seed);

/// Fills UserSplit::negatives for every user; returns the number flagged.
std::size_t attach_negatives(SplitDataset& data, std::size_t n, std::uint64_t seed);

/// One training mini-batch. Sequences are left-padded with 0 to `width`;
/// position t predicts targets[t] against negatives[t] (both 0 at pads).
struct TrainingBatch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<std::size_t> users;  // indices into SplitDataset::users
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<int> negatives;
  std::vector<int> labels;  // rows x m

  std::size_t real_positions() const;
};

/// One epoch of batches over users with at least two train events. The input
/// of a user is train[0..n-2] (most recent max_len kept) and its targets are
/// train[1..n-1]. User order is shuffled from (seed, epoch); each target gets
/// one uniformly drawn unclicked negative.
std::vector<TrainingBatch> make_batches(const SplitDataset& data,
                                        std::size_t batch_size, std::size_t max_len,
                                        std::uint64_t seed, std::size_t epoch);

/// Removes leading columns that are padding in every row.
TrainingBatch trim_leading_padding(const TrainingBatch& batch);

/// Left-pads sequences (keeping the most recent `max_len` ids) into a
/// rows x width matrix with width = longest kept sequence.
std::vector<int> pad_sequences(const std::vector<std::vector<int>>& sequences,
                               std::size_t max_len, std::size_t& width);

enum class HistoryFor { validation, test };

/// Behaviour sequence used to rank the validation or the test target.
std::vector<int> history(const UserSplit& user, HistoryFor target);

/// Subset of attributes selected for debiasing; bit i of k selects attribute i.
struct AttributeCombination {
  std::uint32_t k = 0;

  bool contains(std::size_t attribute) const { return (k >> attribute) & 1U; }
  bool is_identity() const { return k == 0; }
  std::vector<std::size_t> members() const;
  std::string describe(const AttributeSchema& schema) const;
};

/// All 2^m combinations indexed by bitmask; k = 0 means "no debiasing" and is
/// served by the pre-trained model. m must lie in [1, 16].
std::vector<AttributeCombination> enumerate_combinations(std::size_t m);

/// Resolves "gender,age" (or "none") to a combination over the schema.
AttributeCombination combination_from_names(const AttributeSchema& schema,
                                            const std::string& names);

}  // namespace pfrec
