// SPDX-License-Identifier: Apache-2.0
// pfrec command-line driver.
#include <CLI11.hpp>

#include <iostream>

#include "pfrec/error.hpp"
#include "pfrec/workflow.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file");
  cmd->add_option("--set", c.overrides, "override one key (key=value); repeatable");
}

pfrec::RunConfig resolve(const Common& c) {
  pfrec::RunConfig config;
  if (!c.config_path.empty()) config.load_file(c.config_path);
  for (const auto& o : c.overrides) config.set(o);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pfrec: prompt-based selective fairness for sequential recommenders"};
  app.require_subcommand(1);

  Common synth_opts, pre_opts, tune_opts, eval_opts, attack_opts;
  auto* synth = app.add_subcommand("synth", "generate a synthetic attribute-biased dataset");
  add_common(synth, synth_opts);

  auto* pre = app.add_subcommand("pretrain", "train the backbone recommender");
  add_common(pre, pre_opts);

  std::string tune_attrs, tune_mode, tune_backbone;
  auto* tune = app.add_subcommand("tune", "tune the eliminator of one attribute combination");
  add_common(tune, tune_opts);
  tune->add_option("--attrs", tune_attrs, "comma separated attribute names");
  tune->add_option("--mode", tune_mode, "pfrec, no-prompt, fine-tune or filter-baseline");
  tune->add_option("--backbone", tune_backbone, "backbone checkpoint");

  std::vector<std::string> eval_ckpts;
  std::string eval_backbone;
  auto* eval = app.add_subcommand("evaluate", "ranking metrics of one or more checkpoints");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_ckpts, "checkpoint to evaluate; repeatable");
  eval->add_option("--backbone", eval_backbone, "backbone for tuned checkpoints");

  std::vector<std::string> attack_ckpts;
  std::string attack_backbone, attack_csv;
  auto* attack = app.add_subcommand("attack", "attribute inference audit of checkpoints");
  add_common(attack, attack_opts);
  attack->add_option("--checkpoint", attack_ckpts, "checkpoint to audit; repeatable");
  attack->add_option("--backbone", attack_backbone, "backbone for tuned checkpoints");
  attack->add_option("--csv", attack_csv, "write fairness-vs-accuracy pairs as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      pfrec::run_synth(resolve(synth_opts), std::cout);
    } else if (pre->parsed()) {
      pfrec::run_pretrain(resolve(pre_opts), std::cout);
    } else if (tune->parsed()) {
      pfrec::RunConfig config = resolve(tune_opts);
      if (!tune_attrs.empty()) {
        if (tune_attrs == "none") throw pfrec::UsageError("identity combination needs no tuning");
        config.set("tune.attrs", tune_attrs);
      }
      if (!tune_mode.empty()) config.set("tune.mode", tune_mode);
      pfrec::run_tune(config, tune_backbone, std::cout);
    } else if (eval->parsed()) {
      pfrec::run_evaluate(resolve(eval_opts), eval_ckpts, eval_backbone, std::cout);
    } else if (attack->parsed()) {
      pfrec::run_attack(resolve(attack_opts), attack_ckpts, attack_backbone, attack_csv,
                        std::cout);
    }
  } catch (const pfrec::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const pfrec::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const pfrec::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const pfrec::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
