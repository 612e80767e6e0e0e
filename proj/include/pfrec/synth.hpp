// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pfrec/data.hpp"

namespace pfrec {

/// Attribute-biased click generator.
///
/// Items 1..items are split into `clusters` contiguous clusters. Label l of
/// attribute i prefers cluster offset_i + l, where offset_i is the sum of the
/// class counts of the earlier attributes. Every click is driven by one
/// attribute drawn uniformly; with probability coupling[i] it lands in the
/// driver's preferred cluster, otherwise in a uniformly drawn cluster. Inside
/// the chosen cluster the item is the one at the user's ring cursor, which
/// advances by one per click.
struct SynthConfig {
  std::size_t users = 2000;
  std::size_t items = 500;
  std::size_t clusters = 10;
  std::vector<std::size_t> classes = {2, 4};
  std::vector<double> coupling = {0.9, 0.9};
  std::size_t min_len = 15;
  std::size_t max_len = 50;
  std::vector<std::string> attribute_names = {"gender", "age"};
  std::uint64_t seed = 0;

  /// Throws UsageError naming the offending field.
  void validate() const;
};

struct SyntheticClick {
  Interaction event;
  std::size_t cluster = 0;
  std::size_t driver = 0;  // attribute that drove the click
};

struct SyntheticUser {
  std::int64_t user = 0;
  std::vector<int> labels;  // label index per attribute
  std::vector<SyntheticClick> clicks;
};

struct SyntheticData {
  SynthConfig config;
  std::vector<SyntheticUser> users;
};

SyntheticData generate(const SynthConfig& config);

/// First item id and one-past-last item id of a cluster.
std::pair<std::int64_t, std::int64_t> cluster_range(const SynthConfig& config,
                                                    std::size_t cluster);
std::size_t cluster_of(const SynthConfig& config, std::int64_t item);
std::size_t preferred_cluster(const SynthConfig& config, std::size_t attribute, int label);

/// Label strings written to the attributes file: "<name>_<index>".
std::string label_name(const SynthConfig& config, std::size_t attribute, int label);

void write_interactions(const SyntheticData& data, std::ostream& out);
void write_attributes(const SyntheticData& data, std::ostream& out);

}  // namespace pfrec
