// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "pfrec/config.hpp"
#include "pfrec/data.hpp"
#include "pfrec/eliminator.hpp"

namespace pfrec {

/// Loads, filters and splits the configured dataset and attaches evaluation
/// negatives, reading <output_dir>/negatives.tsv when it matches the seed and
/// count and regenerating it otherwise.
SplitDataset load_dataset(const RunConfig& config, std::ostream& log);

/// A backbone plus (optionally) one tuned combination, ready to score.
struct LoadedModel {
  std::string source;
  std::unique_ptr<ParamStore<float>> store;  // stable address for `model`
  AttributeCombination k;
  TuneMode mode = TuneMode::pfrec;
  std::unique_ptr<FairModel<float>> model;

  std::string describe() const;  // "pretrained" or "<mode> k=<k>"
};

/// Reads `checkpoint`; a tuned checkpoint is layered on `backbone`.
LoadedModel load_model(const RunConfig& config, const SplitDataset& data,
                       const std::string& checkpoint, const std::string& backbone);

// Subcommands. Each writes the resolved config next to its outputs and
// returns the paths it produced.
std::vector<std::string> run_synth(const RunConfig& config, std::ostream& log);
std::vector<std::string> run_pretrain(const RunConfig& config, std::ostream& log);
std::vector<std::string> run_tune(const RunConfig& config, const std::string& backbone,
                                  std::ostream& log);
std::vector<std::string> run_evaluate(const RunConfig& config,
                                      const std::vector<std::string>& checkpoints,
                                      const std::string& backbone, std::ostream& log);
std::vector<std::string> run_attack(const RunConfig& config,
                                    const std::vector<std::string>& checkpoints,
                                    const std::string& backbone, const std::string& csv,
                                    std::ostream& log);

/// Default file names inside output_dir.
std::string backbone_path(const RunConfig& config);
std::string tuned_path(const RunConfig& config, std::uint32_t k, TuneMode mode);

}  // namespace pfrec
