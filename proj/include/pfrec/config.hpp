// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pfrec/eliminator.hpp"
#include "pfrec/eval.hpp"
#include "pfrec/synth.hpp"
#include "pfrec/trainer.hpp"

namespace pfrec {

/// Flat `key = value` run configuration. Every key has a default; unknown
/// keys are rejected. Lines starting with '#' are comments.
class RunConfig {
 public:
  RunConfig();

  /// Reads a config file; later keys override earlier ones.
  void load_file(const std::string& path);
  void parse(const std::string& text, const std::string& origin = "config");
  /// Applies one `key=value` override.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::string text(const std::string& key) const { return get(key); }
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed() const;
  std::vector<std::string> list(const std::string& key) const;

  /// Every key with its value, sorted by key, one `key = value` per line.
  std::string resolved() const;

  /// Output directory; a relative path is placed under $PFREC_OUT if set.
  std::string output_dir() const;
  /// `key` if set, otherwise output_dir()/fallback.
  std::string path_or(const std::string& key, const std::string& fallback) const;

  EncoderConfig encoder(std::size_t attributes) const;
  EliminatorConfig eliminator() const;
  PretrainConfig pretrain() const;
  TuneConfig tune() const;
  AttackerConfig attacker() const;
  SynthConfig synth() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace pfrec
