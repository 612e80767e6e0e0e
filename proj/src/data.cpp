// SPDX-License-Identifier: Apache-2.0
#include "pfrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <set>
#include <string_view>

#include "pfrec/error.hpp"
#include "pfrec/rng.hpp"

namespace pfrec {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::int64_t parse_id(std::string_view field, const std::string& where,
                      const char* what) {
  std::int64_t v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw DataError(where + ": " + what + " '" + std::string(field) +
                    "' is not an integer");
  }
  if (v < 0) {
    throw DataError(where + ": " + what + " must be non-negative");
  }
  return v;
}

bool event_less(const Interaction& a, const Interaction& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.item < b.item;
}

}  // namespace

std::vector<std::size_t> AttributeSchema::class_counts() const {
  std::vector<std::size_t> out;
  for (const auto& l : labels) out.push_back(l.size());
  return out;
}

std::size_t AttributeSchema::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    std::string known;
    for (const auto& n : names) known += (known.empty() ? "" : ",") + n;
    throw UsageError("unknown attribute '" + name + "' (known: " + known + ")");
  }
  return static_cast<std::size_t>(it - names.begin());
}

std::size_t InteractionLog::event_count() const {
  std::size_t n = 0;
  for (const auto& [u, ev] : events) n += ev.size();
  return n;
}

InteractionLog ingest(std::istream& interactions, std::istream& attributes,
                      const std::vector<std::string>& attribute_names) {
  InteractionLog log;
  std::vector<std::map<std::string, int, std::less<>>> label_ids;
  std::string line;
  std::size_t line_no = 0;
  std::size_t m = 0;
  while (std::getline(attributes, line)) {
    ++line_no;
    const std::string where = "attributes line " + std::to_string(line_no);
    const auto fields = split_tabs(line);
    if (fields.size() < 2) {
      throw DataError(where + ": expected user_id and at least one label");
    }
    if (m == 0) {
      m = fields.size() - 1;
      if (!attribute_names.empty() && attribute_names.size() != m) {
        throw DataError(where + ": " + std::to_string(m) + " labels but " +
                        std::to_string(attribute_names.size()) +
                        " attribute names configured");
      }
      for (std::size_t i = 0; i < m; ++i) {
        log.schema.names.push_back(attribute_names.empty()
                                       ? "a" + std::to_string(i + 1)
                                       : attribute_names[i]);
      }
      log.schema.labels.resize(m);
      label_ids.resize(m);
    }
    if (fields.size() != m + 1) {
      throw DataError(where + ": expected " + std::to_string(m + 1) +
                      " columns, found " + std::to_string(fields.size()));
    }
    const std::int64_t user = parse_id(fields[0], where, "user_id");
    std::vector<int> labels(m);
    for (std::size_t i = 0; i < m; ++i) {
      const std::string_view label = fields[i + 1];
      if (label.empty()) throw DataError(where + ": empty label");
      auto it = label_ids[i].find(label);
      if (it == label_ids[i].end()) {
        it = label_ids[i]
                 .emplace(std::string(label),
                          static_cast<int>(log.schema.labels[i].size()))
                 .first;
        log.schema.labels[i].emplace_back(label);
      }
      labels[i] = it->second;
    }
    if (!log.attributes.emplace(user, std::move(labels)).second) {
      throw DataError(where + ": duplicate attribute record for user " +
                      std::to_string(user));
    }
  }
  line_no = 0;
  while (std::getline(interactions, line)) {
    ++line_no;
    const std::string where = "interactions line " + std::to_string(line_no);
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw DataError(where + ": expected 3 columns, found " +
                      std::to_string(fields.size()));
    }
    Interaction ev{parse_id(fields[0], where, "user_id"),
                   parse_id(fields[1], where, "item_id"),
                   parse_id(fields[2], where, "timestamp")};
    if (!log.attributes.count(ev.user)) {
      throw DataError(where + ": user " + std::to_string(ev.user) +
                      " has no attribute record");
    }
    log.events[ev.user].push_back(ev);
  }
  for (auto& [u, ev] : log.events) {
    std::stable_sort(ev.begin(), ev.end(), event_less);
  }
  return log;
}

InteractionLog ingest_files(const std::string& interactions_path,
                            const std::string& attributes_path,
                            const std::vector<std::string>& attribute_names) {
  std::ifstream inter(interactions_path);
  if (!inter) throw DataError("cannot open interactions file '" + interactions_path + "'");
  std::ifstream attrs(attributes_path);
  if (!attrs) throw DataError("cannot open attributes file '" + attributes_path + "'");
  try {
    return ingest(inter, attrs, attribute_names);
  } catch (const DataError& e) {
    throw DataError(interactions_path + " / " + attributes_path + ": " + e.what());
  }
}

InteractionLog filter_min_activity(const InteractionLog& log,
                                   std::size_t threshold) {
  if (threshold < 3) {
    throw UsageError("filter_min_activity: threshold must be >= 3");
  }
  InteractionLog out;
  out.schema = log.schema;
  for (const auto& [user, ev] : log.events) {
    if (ev.size() >= threshold) {
      out.events.emplace(user, ev);
      out.attributes.emplace(user, log.attributes.at(user));
    }
  }
  return out;
}

bool UserSplit::has_clicked(int item) const {
  return std::binary_search(clicked.begin(), clicked.end(), item);
}

SplitDataset split_leave_one_out(const InteractionLog& log) {
  SplitDataset out;
  out.schema = log.schema;
  std::set<std::int64_t> items;
  for (const auto& [user, ev] : log.events) {
    for (const auto& e : ev) items.insert(e.item);
  }
  out.item_ids.push_back(-1);
  std::map<std::int64_t, int> dense;
  for (std::int64_t raw : items) {
    dense.emplace(raw, static_cast<int>(out.item_ids.size()));
    out.item_ids.push_back(raw);
  }
  for (const auto& [user, ev] : log.events) {
    if (ev.size() < 3) {
      throw DataError("split: user " + std::to_string(user) + " has " +
                      std::to_string(ev.size()) +
                      " events; at least 3 are required (filter first)");
    }
    UserSplit s;
    s.user_id = user;
    s.labels = log.attributes.at(user);
    for (std::size_t i = 0; i + 2 < ev.size(); ++i) s.train.push_back(dense.at(ev[i].item));
    s.validation = dense.at(ev[ev.size() - 2].item);
    s.test = dense.at(ev.back().item);
    for (const auto& e : ev) s.clicked.push_back(dense.at(e.item));
    std::sort(s.clicked.begin(), s.clicked.end());
    s.clicked.erase(std::unique(s.clicked.begin(), s.clicked.end()), s.clicked.end());
    out.users.push_back(std::move(s));
  }
  return out;
}

NegativeSample sample_negatives(const UserSplit& user, std::size_t num_items,
                                std::size_t n, std::uint64_t seed) {
  NegativeSample out;
  const std::size_t complement = num_items - user.clicked.size();
  if (complement <= n) {
    for (std::size_t item = 1; item <= num_items; ++item) {
      if (!user.has_clicked(static_cast<int>(item))) out.items.push_back(static_cast<int>(item));
    }
    out.exhausted = complement < n;
    return out;
  }
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(user.user_id)));
  std::vector<char> taken(num_items + 1, 0);
  for (int c : user.clicked) taken[c] = 1;
  while (out.items.size() < n) {
    const int item = static_cast<int>(1 + rng.below(num_items));
    if (taken[item]) continue;
    taken[item] = 1;
    out.items.push_back(item);
  }
  return out;
}

std::size_t attach_negatives(SplitDataset& data, std::size_t n, std::uint64_t seed) {
  std::size_t flagged = 0;
  for (auto& u : data.users) {
    auto s = sample_negatives(u, data.num_items(), n, seed);
    u.negatives = std::move(s.items);
    u.negatives_exhausted = s.exhausted;
    flagged += s.exhausted ? 1 : 0;
  }
  return flagged;
}

std::size_t TrainingBatch::real_positions() const {
  return static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](int t) { return t != 0; }));
}

std::vector<TrainingBatch> make_batches(const SplitDataset& data,
                                        std::size_t batch_size, std::size_t max_len,
                                        std::uint64_t seed, std::size_t epoch) {
  if (max_len == 0) throw UsageError("make_batches: max_len must be >= 1");
  if (batch_size == 0) throw UsageError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < data.users.size(); ++i) {
    if (data.users[i].train.size() >= 2) order.push_back(i);
  }
  Rng rng(mix_seed(seed, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t num_items = data.num_items();
  std::vector<TrainingBatch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    TrainingBatch b;
    b.rows = std::min(batch_size, order.size() - start);
    b.width = max_len;
    b.inputs.assign(b.rows * max_len, 0);
    b.targets.assign(b.rows * max_len, 0);
    b.negatives.assign(b.rows * max_len, 0);
    for (std::size_t r = 0; r < b.rows; ++r) {
      const std::size_t ui = order[start + r];
      const UserSplit& u = data.users[ui];
      b.users.push_back(ui);
      b.labels.insert(b.labels.end(), u.labels.begin(), u.labels.end());
      const std::size_t n_inputs = u.train.size() - 1;
      const std::size_t keep = std::min(n_inputs, max_len);
      const std::size_t first = n_inputs - keep;
      const std::size_t pad = max_len - keep;
      for (std::size_t j = 0; j < keep; ++j) {
        const std::size_t pos = r * max_len + pad + j;
        b.inputs[pos] = u.train[first + j];
        b.targets[pos] = u.train[first + j + 1];
        if (u.clicked.size() >= num_items) {
          throw DataError("make_batches: user " + std::to_string(u.user_id) +
                          " clicked every item; no negative exists");
        }
        int neg;
        do {
          neg = static_cast<int>(1 + rng.below(num_items));
        } while (u.has_clicked(neg));
        b.negatives[pos] = neg;
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

TrainingBatch trim_leading_padding(const TrainingBatch& batch) {
  std::size_t first = batch.width;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t c = 0; c < batch.width; ++c) {
      if (batch.inputs[r * batch.width + c] != 0) {
        first = std::min(first, c);
        break;
      }
    }
  }
  if (first == 0) return batch;
  if (first == batch.width) first = batch.width - 1;
  TrainingBatch out = batch;
  out.width = batch.width - first;
  auto cut = [&](const std::vector<int>& v) {
    std::vector<int> o;
    o.reserve(batch.rows * out.width);
    for (std::size_t r = 0; r < batch.rows; ++r) {
      o.insert(o.end(), v.begin() + r * batch.width + first,
               v.begin() + (r + 1) * batch.width);
    }
    return o;
  };
  out.inputs = cut(batch.inputs);
  out.targets = cut(batch.targets);
  out.negatives = cut(batch.negatives);
  return out;
}

std::vector<int> pad_sequences(const std::vector<std::vector<int>>& sequences,
                               std::size_t max_len, std::size_t& width) {
  width = 1;
  for (const auto& s : sequences) width = std::max(width, std::min(s.size(), max_len));
  std::vector<int> out(sequences.size() * width, 0);
  for (std::size_t r = 0; r < sequences.size(); ++r) {
    const auto& s = sequences[r];
    const std::size_t keep = std::min(s.size(), width);
    std::copy(s.end() - keep, s.end(), out.begin() + (r + 1) * width - keep);
  }
  return out;
}

std::vector<int> history(const UserSplit& user, HistoryFor target) {
  std::vector<int> h = user.train;
  if (target == HistoryFor::test) h.push_back(user.validation);
  return h;
}

std::vector<std::size_t> AttributeCombination::members() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < 32; ++i) {
    if (contains(i)) out.push_back(i);
  }
  return out;
}

std::string AttributeCombination::describe(const AttributeSchema& schema) const {
  if (k == 0) return "none";
  std::string out;
  for (std::size_t i : members()) {
    if (!out.empty()) out += ",";
    out += i < schema.count() ? schema.names[i] : "a" + std::to_string(i + 1);
  }
  return out;
}

std::vector<AttributeCombination> enumerate_combinations(std::size_t m) {
  if (m < 1 || m > 16) {
    throw UsageError("enumerate_combinations: m must lie in [1, 16], got " +
                     std::to_string(m));
  }
  std::vector<AttributeCombination> out;
  for (std::uint32_t k = 0; k < (1U << m); ++k) out.push_back(AttributeCombination{k});
  return out;
}

AttributeCombination combination_from_names(const AttributeSchema& schema,
                                            const std::string& names) {
  AttributeCombination c;
  if (names == "none" || names.empty()) return c;
  std::size_t start = 0;
  while (start <= names.size()) {
    std::size_t comma = names.find(',', start);
    if (comma == std::string::npos) comma = names.size();
    const std::string name = names.substr(start, comma - start);
    c.k |= 1U << schema.index_of(name);
    start = comma + 1;
  }
  return c;
}

}  // namespace pfrec
