// SPDX-License-Identifier: Apache-2.0
#include "pfrec/synth.hpp"

#include <numeric>
#include <ostream>

#include "pfrec/error.hpp"
#include "pfrec/rng.hpp"

namespace pfrec {

void SynthConfig::validate() const {
  const std::size_t m = classes.size();
  if (m == 0 || m > 16) throw UsageError("synth.classes: need 1 to 16 attributes");
  if (coupling.size() != m) {
    throw UsageError("synth.coupling: " + std::to_string(coupling.size()) +
                     " values for " + std::to_string(m) + " attributes");
  }
  if (!attribute_names.empty() && attribute_names.size() != m) {
    throw UsageError("synth.attribute_names: " + std::to_string(attribute_names.size()) +
                     " names for " + std::to_string(m) + " attributes");
  }
  for (double r : coupling) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw UsageError("synth.coupling: " + std::to_string(r) + " is outside [0, 1]");
    }
  }
  for (std::size_t c : classes) {
    if (c < 2) throw UsageError("synth.classes: every attribute needs >= 2 classes");
  }
  if (users == 0) throw UsageError("synth.users: must be positive");
  if (clusters == 0 || clusters > items) {
    throw UsageError("synth.clusters: must lie in [1, items]");
  }
  const std::size_t needed = std::accumulate(classes.begin(), classes.end(), std::size_t{0});
  if (needed > clusters) {
    throw UsageError("synth.clusters: " + std::to_string(needed) +
                     " preferred clusters needed but only " + std::to_string(clusters) +
                     " available");
  }
  if (min_len < 3 || min_len > max_len) {
    throw UsageError("synth.min_len: must satisfy 3 <= min_len <= max_len");
  }
}

std::pair<std::int64_t, std::int64_t> cluster_range(const SynthConfig& config,
                                                    std::size_t cluster) {
  const auto begin = static_cast<std::int64_t>(cluster * config.items / config.clusters);
  const auto end = static_cast<std::int64_t>((cluster + 1) * config.items / config.clusters);
  return {begin + 1, end + 1};
}

std::size_t cluster_of(const SynthConfig& config, std::int64_t item) {
  for (std::size_t c = 0; c < config.clusters; ++c) {
    if (item < cluster_range(config, c).second) return c;
  }
  throw UsageError("synth: item " + std::to_string(item) + " is out of range");
}

std::size_t preferred_cluster(const SynthConfig& config, std::size_t attribute, int label) {
  std::size_t offset = 0;
  for (std::size_t i = 0; i < attribute; ++i) offset += config.classes[i];
  return offset + static_cast<std::size_t>(label);
}

std::string label_name(const SynthConfig& config, std::size_t attribute, int label) {
  const std::string base = config.attribute_names.empty()
                               ? "a" + std::to_string(attribute + 1)
                               : config.attribute_names[attribute];
  return base + "_" + std::to_string(label);
}

SyntheticData generate(const SynthConfig& config) {
  config.validate();
  SyntheticData out;
  out.config = config;
  const std::size_t m = config.classes.size();
  out.users.reserve(config.users);
  for (std::size_t u = 0; u < config.users; ++u) {
    Rng rng(mix_seed(config.seed, u));
    SyntheticUser user;
    user.user = static_cast<std::int64_t>(u + 1);
    for (std::size_t i = 0; i < m; ++i) {
      user.labels.push_back(static_cast<int>(rng.below(config.classes[i])));
    }
    const std::size_t len =
        config.min_len + rng.below(config.max_len - config.min_len + 1);
    std::uint64_t cursor = rng.below(config.items);
    std::int64_t t = 1'600'000'000 + static_cast<std::int64_t>(rng.below(1'000'000));
    for (std::size_t s = 0; s < len; ++s) {
      const std::size_t driver = rng.below(m);
      std::size_t cluster;
      if (rng.bernoulli(config.coupling[driver])) {
        cluster = preferred_cluster(config, driver, user.labels[driver]);
      } else {
        cluster = rng.below(config.clusters);
      }
      const auto [begin, end] = cluster_range(config, cluster);
      const auto size = static_cast<std::uint64_t>(end - begin);
      t += 1 + static_cast<std::int64_t>(rng.below(3600));
      SyntheticClick click;
      click.event = {user.user, begin + static_cast<std::int64_t>(cursor % size), t};
      click.cluster = cluster;
      click.driver = driver;
      user.clicks.push_back(click);
      ++cursor;
    }
    out.users.push_back(std::move(user));
  }
  return out;
}

void write_interactions(const SyntheticData& data, std::ostream& out) {
  for (const auto& u : data.users) {
    for (const auto& c : u.clicks) {
      out << c.event.user << '\t' << c.event.item << '\t' << c.event.timestamp << '\n';
    }
  }
}

void write_attributes(const SyntheticData& data, std::ostream& out) {
  for (const auto& u : data.users) {
    out << u.user;
    for (std::size_t i = 0; i < u.labels.size(); ++i) {
      out << '\t' << label_name(data.config, i, u.labels[i]);
    }
    out << '\n';
  }
}

}  // namespace pfrec
