// SPDX-License-Identifier: Apache-2.0
#include "pfrec/workflow.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "pfrec/checkpoint.hpp"
#include "pfrec/error.hpp"
#include "pfrec/eval.hpp"
#include "pfrec/synth.hpp"
#include "pfrec/trainer.hpp"

namespace fs = std::filesystem;

namespace pfrec {

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string ensure_output_dir(const RunConfig& config) {
  const std::string dir = config.output_dir();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir + "': " + ec.message());
  return dir;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path + "'");
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

/// Attribute names from the dataset metadata next to the attributes file.
std::vector<std::string> metadata_names(const std::string& attributes_path) {
  const fs::path meta = fs::path(attributes_path).parent_path() / "dataset_meta.txt";
  std::ifstream in(meta);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string tag, index, name;
    if (fields >> tag >> index >> name && tag == "attribute") names.push_back(name);
  }
  return names;
}

int dense_id(const SplitDataset& data, std::int64_t raw) {
  const auto it = std::lower_bound(data.item_ids.begin() + 1, data.item_ids.end(), raw);
  if (it == data.item_ids.end() || *it != raw) return 0;
  return static_cast<int>(it - data.item_ids.begin());
}

bool read_negative_cache(const std::string& path, SplitDataset& data, std::uint64_t seed,
                         std::size_t n) {
  std::ifstream in(path);
  if (!in) return false;
  std::string header;
  if (!std::getline(in, header) ||
      header != "# negatives seed=" + std::to_string(seed) + " n=" + std::to_string(n)) {
    return false;
  }
  std::map<std::int64_t, std::vector<int>> by_user;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::int64_t user = 0;
    if (!(fields >> user)) return false;
    std::vector<int> items;
    std::int64_t raw;
    while (fields >> raw) {
      const int id = dense_id(data, raw);
      if (id == 0) return false;
      items.push_back(id);
    }
    by_user[user] = std::move(items);
  }
  if (by_user.size() != data.users.size()) return false;
  for (auto& u : data.users) {
    auto it = by_user.find(u.user_id);
    if (it == by_user.end()) return false;
    for (int item : it->second) {
      if (u.has_clicked(item)) return false;
    }
    u.negatives = it->second;
    u.negatives_exhausted = u.negatives.size() < n;
  }
  return true;
}

void write_negative_cache(const std::string& path, const SplitDataset& data,
                          std::uint64_t seed, std::size_t n) {
  std::string text = "# negatives seed=" + std::to_string(seed) + " n=" + std::to_string(n) + "\n";
  for (const auto& u : data.users) {
    text += std::to_string(u.user_id);
    for (int item : u.negatives) text += "\t" + std::to_string(data.item_ids[item]);
    text += "\n";
  }
  write_text(path, text);
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string slot_inventory(const ParamStore<float>& store, const std::string& prefix) {
  std::string out;
  for (const auto& name : store.names(prefix)) {
    out += "slot " + name + " " + shape_str(store.value(name).shape()) + "\n";
  }
  return out;
}

ParamStore<float> select(const ParamStore<float>& store, const std::vector<std::string>& prefixes) {
  ParamStore<float> out;
  for (const auto& p : prefixes) out.merge_from(store, p);
  return out;
}

std::uint32_t parse_k(const std::string& slot, const std::string& family) {
  const std::string head = family + "/k=";
  const auto rest = slot.substr(head.size());
  return static_cast<std::uint32_t>(std::stoul(rest.substr(0, rest.find('/'))));
}

}  // namespace

std::string backbone_path(const RunConfig& config) {
  return (fs::path(config.output_dir()) / "backbone.ckpt").string();
}

std::string tuned_path(const RunConfig& config, std::uint32_t k, TuneMode mode) {
  return (fs::path(config.output_dir()) /
          ("tuned_k" + std::to_string(k) + "_" + to_string(mode) + ".ckpt"))
      .string();
}

SplitDataset load_dataset(const RunConfig& config, std::ostream& log) {
  const std::string inter = config.path_or("data.interactions", "interactions.tsv");
  const std::string attrs = config.path_or("data.attributes", "attributes.tsv");
  std::vector<std::string> names = config.list("data.attribute_names");
  if (names.empty()) names = metadata_names(attrs);
  const InteractionLog raw = ingest_files(inter, attrs, names);
  const InteractionLog kept = filter_min_activity(raw, config.count("data.min_activity"));
  if (kept.user_count() == 0) {
    throw DataError("no user has at least " + config.get("data.min_activity") + " events");
  }
  SplitDataset data = split_leave_one_out(kept);
  const std::size_t n = config.count("data.eval_negatives");
  const std::string cache = (fs::path(ensure_output_dir(config)) / "negatives.tsv").string();
  if (!read_negative_cache(cache, data, config.seed(), n)) {
    const std::size_t flagged = attach_negatives(data, n, config.seed());
    write_negative_cache(cache, data, config.seed(), n);
    log << "negatives: sampled " << n << " per user (" << flagged
        << " users with fewer available), cached in " << cache << "\n";
  }
  log << "data: " << raw.user_count() << " users, " << kept.user_count()
      << " after filtering, " << data.num_items() << " items, attributes "
      << join(data.schema.names, ",") << "\n";
  return data;
}

namespace {

std::string model_kind(const LoadedModel& m) {
  return m.k.is_identity() ? "pretrained" : to_string(m.mode);
}

}  // namespace

std::string LoadedModel::describe() const {
  if (k.is_identity()) return "pretrained";
  return to_string(mode) + " k=" + std::to_string(k.k);
}

LoadedModel load_model(const RunConfig& config, const SplitDataset& data,
                       const std::string& checkpoint, const std::string& backbone) {
  LoadedModel out;
  out.source = checkpoint;
  ParamStore<float> ckpt = load_checkpoint(checkpoint);
  const bool has_backbone = !ckpt.names(kBackbonePrefix).empty();
  const auto elim = ckpt.names("elim/");
  const auto filt = ckpt.names("filter/");
  if (!elim.empty()) {
    out.k.k = parse_k(elim.front(), "elim");
    const bool prompt = ckpt.contains(eliminator_prefix(out.k.k) + "task_prompt");
    out.mode = has_backbone ? TuneMode::fine_tune
                            : (prompt ? TuneMode::pfrec : TuneMode::no_prompt);
  } else if (!filt.empty()) {
    out.k.k = parse_k(filt.front(), "filter");
    out.mode = TuneMode::filter_baseline;
  } else if (!has_backbone) {
    throw DataError(checkpoint + ": holds neither a backbone nor an eliminator");
  }
  if (!has_backbone) {
    out.store = std::make_unique<ParamStore<float>>(load_checkpoint(backbone));
    if (out.store->names(kBackbonePrefix).empty()) {
      throw DataError(backbone + ": holds no backbone slots");
    }
    out.store->merge_from(ckpt);
  } else {
    out.store = std::make_unique<ParamStore<float>>(std::move(ckpt));
  }
  const auto counts = data.schema.class_counts();
  out.model = std::make_unique<FairModel<float>>(*out.store, config.encoder(counts.size()),
                                                 config.eliminator(), counts, out.k, out.mode);
  return out;
}

std::vector<std::string> run_synth(const RunConfig& config, std::ostream& log) {
  const SynthConfig sc = config.synth();
  const std::string dir = ensure_output_dir(config);
  const SyntheticData data = generate(sc);
  const std::string inter = config.path_or("data.interactions", "interactions.tsv");
  const std::string attrs = config.path_or("data.attributes", "attributes.tsv");
  {
    std::ofstream out(inter, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + inter + "'");
    write_interactions(data, out);
  }
  {
    std::ofstream out(attrs, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + attrs + "'");
    write_attributes(data, out);
  }
  std::string meta;
  for (std::size_t i = 0; i < sc.classes.size(); ++i) {
    const std::string name = sc.attribute_names.empty() ? "a" + std::to_string(i + 1)
                                                        : sc.attribute_names[i];
    meta += "attribute " + std::to_string(i) + " " + name + " classes=" +
            std::to_string(sc.classes[i]) + " coupling=" + fixed(sc.coupling[i], 6) + "\n";
  }
  AttributeSchema schema;
  schema.names = sc.attribute_names;
  if (schema.names.empty()) {
    for (std::size_t i = 0; i < sc.classes.size(); ++i) {
      schema.names.push_back("a" + std::to_string(i + 1));
    }
  }
  for (const auto& c : enumerate_combinations(sc.classes.size())) {
    meta += "combination k=" + std::to_string(c.k) + " " + c.describe(schema) + "\n";
  }
  const std::string meta_path =
      (fs::path(attrs).parent_path() / "dataset_meta.txt").string();
  write_text(meta_path, meta);
  const std::string cfg = (fs::path(dir) / "synth.config").string();
  write_text(cfg, config.resolved());
  std::size_t clicks = 0;
  for (const auto& u : data.users) clicks += u.clicks.size();
  log << "synth: " << data.users.size() << " users, " << clicks << " clicks -> " << inter
      << ", " << attrs << "\n";
  return {inter, attrs, meta_path, cfg};
}

std::vector<std::string> run_pretrain(const RunConfig& config, std::ostream& log) {
  const std::string dir = ensure_output_dir(config);
  const SplitDataset data = load_dataset(config, log);
  const EncoderConfig enc = config.encoder(data.attribute_count());
  ParamStore<float> store;
  init_backbone(store, enc, data.num_items(), config.seed());
  std::string report;
  const PretrainReport r =
      pretrain(store, enc, config.eliminator(), data, config.pretrain(),
               [&](const std::string& line) {
                 report += line + "\n";
                 log << line << "\n" << std::flush;
               });
  const FairModel<float> model(store, enc, config.eliminator(), data.schema.class_counts(), {},
                               TuneMode::pfrec);
  const RankingMetrics test = evaluate_ranking(model, data, HistoryFor::test);
  const std::string summary =
      "stage=pretrain summary best_epoch=" + std::to_string(r.best_epoch) +
      " best_val_hit10=" + fixed(r.best_hit, 6) + " test_auc=" + fixed(test.auc, 6) +
      " test_hit10=" + fixed(test.hit, 6) + " test_ndcg10=" + fixed(test.ndcg, 6) +
      " backbone_parameters=" + std::to_string(store.parameter_count(kBackbonePrefix));
  report += summary + "\n";
  log << summary << "\n";
  const std::string ckpt = backbone_path(config);
  save_checkpoint(ckpt, store, kBackbonePrefix);
  const std::string rep = (fs::path(dir) / "pretrain_report.txt").string();
  write_text(rep, report);
  const std::string cfg = (fs::path(dir) / "pretrain.config").string();
  write_text(cfg, config.resolved());
  return {ckpt, rep, cfg};
}

std::vector<std::string> run_tune(const RunConfig& config, const std::string& backbone,
                                  std::ostream& log) {
  const std::string dir = ensure_output_dir(config);
  const SplitDataset data = load_dataset(config, log);
  const std::vector<std::string> attrs = config.list("tune.attrs");
  const AttributeCombination k =
      attrs.empty() ? AttributeCombination{(1U << data.attribute_count()) - 1}
                    : combination_from_names(data.schema, config.get("tune.attrs"));
  if (k.is_identity()) throw UsageError("identity combination needs no tuning");
  const TuneConfig tc = config.tune();
  const auto counts = data.schema.class_counts();
  const EncoderConfig enc = config.encoder(counts.size());
  ParamStore<float> store = load_checkpoint(backbone.empty() ? backbone_path(config) : backbone);
  if (store.names(kBackbonePrefix).size() != store.size()) {
    throw DataError("backbone checkpoint holds non-backbone slots");
  }
  Tuner<float> tuner(store, enc, config.eliminator(), counts, k, tc);
  std::string report;
  const TuneReport r = tuner.run(data, [&](const std::string& line) {
    report += line + "\n";
    log << line << "\n" << std::flush;
  });
  const RankingMetrics test = evaluate_ranking(tuner.model(), data, HistoryFor::test);
  const std::string ep = eliminator_prefix(k.k);
  const bool prompt = store.contains(ep + "task_prompt");
  std::string summary = "stage=tune summary mode=" + to_string(tc.mode) +
                        " k=" + std::to_string(k.k) + " attrs=" + k.describe(data.schema) +
                        " tuned_parameters=" + std::to_string(r.tuned_parameters) +
                        " backbone_parameters=" + std::to_string(r.backbone_parameters) +
                        " param_ratio=" +
                        fixed(static_cast<double>(r.tuned_parameters) /
                                  static_cast<double>(r.backbone_parameters), 6) +
                        " prompt_slots=" + (prompt ? "present" : "absent") +
                        " test_auc=" + fixed(test.auc, 6) + " test_hit10=" + fixed(test.hit, 6) +
                        " test_ndcg10=" + fixed(test.ndcg, 6);
  report += summary + "\n";
  std::vector<std::string> prefixes = trainable_prefixes(tc.mode, k.k);
  prefixes.push_back(discriminator_prefix(k.k));
  for (const auto& p : prefixes) report += slot_inventory(store, p);
  log << summary << "\n";
  const std::string ckpt = tuned_path(config, k.k, tc.mode);
  save_checkpoint(ckpt, select(store, prefixes));
  const std::string stem = "tune_k" + std::to_string(k.k) + "_" + to_string(tc.mode);
  const std::string rep = (fs::path(dir) / (stem + "_report.txt")).string();
  write_text(rep, report);
  const std::string cfg = (fs::path(dir) / (stem + ".config")).string();
  write_text(cfg, config.resolved());
  return {ckpt, rep, cfg};
}

std::vector<std::string> run_evaluate(const RunConfig& config,
                                      const std::vector<std::string>& checkpoints,
                                      const std::string& backbone, std::ostream& log) {
  const std::string dir = ensure_output_dir(config);
  const SplitDataset data = load_dataset(config, log);
  const std::vector<std::string> paths =
      checkpoints.empty() ? std::vector<std::string>{backbone_path(config)} : checkpoints;
  const std::string base = backbone.empty() ? backbone_path(config) : backbone;
  std::string table = "checkpoint\tmodel\tAUC\tHIT@10\tNDCG@10\n";
  std::string records;
  for (const auto& p : paths) {
    const LoadedModel m = load_model(config, data, p, base);
    const RankingMetrics r = evaluate_ranking(*m.model, data, HistoryFor::test);
    table += fs::path(p).filename().string() + "\t" + m.describe() + "\t" + fixed(r.auc) +
             "\t" + fixed(r.hit) + "\t" + fixed(r.ndcg) + "\n";
    records += "stage=evaluate checkpoint=" + fs::path(p).filename().string() +
               " model=" + model_kind(m) + " k=" + std::to_string(m.k.k) +
               " users=" + std::to_string(r.users) + " test_auc=" + fixed(r.auc, 6) +
               " test_hit10=" + fixed(r.hit, 6) + " test_ndcg10=" + fixed(r.ndcg, 6) + "\n";
  }
  log << table;
  const std::string rep = (fs::path(dir) / "evaluate_report.txt").string();
  write_text(rep, records);
  const std::string cfg = (fs::path(dir) / "evaluate.config").string();
  write_text(cfg, config.resolved());
  return {rep, cfg};
}

std::vector<std::string> run_attack(const RunConfig& config,
                                    const std::vector<std::string>& checkpoints,
                                    const std::string& backbone, const std::string& csv,
                                    std::ostream& log) {
  const std::string dir = ensure_output_dir(config);
  const SplitDataset data = load_dataset(config, log);
  const std::vector<std::string> paths =
      checkpoints.empty() ? std::vector<std::string>{backbone_path(config)} : checkpoints;
  const std::string base = backbone.empty() ? backbone_path(config) : backbone;
  std::string table = "checkpoint\tmodel\tattribute\tmicro-F1\tmajority\ttrain/val/test\n";
  std::string records;
  std::string rows = "checkpoint,model,k,attribute,micro_f1,majority_f1,auc,hit10,ndcg10\n";
  for (const auto& p : paths) {
    const std::string before = read_bytes(p);
    const LoadedModel m = load_model(config, data, p, base);
    const RankingMetrics acc = evaluate_ranking(*m.model, data, HistoryFor::test);
    const Tensor<float> reps = user_representations(*m.model, data);
    const AttackerReport report = attack_all(reps, data, config.attacker());
    if (read_bytes(p) != before) {
      throw NumericError("audited checkpoint " + p + " changed during the attack");
    }
    const std::string name = fs::path(p).filename().string();
    for (const auto& a : report.attributes) {
      table += name + "\t" + m.describe() + "\t" + a.attribute + "\t" + fixed(a.micro_f1) +
               "\t" + fixed(a.majority_f1) + "\t" + std::to_string(a.train_users) + "/" +
               std::to_string(a.validation_users) + "/" + std::to_string(a.test_users) + "\n";
      records += "stage=attack checkpoint=" + name + " model=" + model_kind(m) +
                 " k=" + std::to_string(m.k.k) + " attribute=" + a.attribute +
                 " classes=" + std::to_string(a.classes) + " micro_f1=" + fixed(a.micro_f1, 6) +
                 " majority_f1=" + fixed(a.majority_f1, 6) +
                 " train_users=" + std::to_string(a.train_users) +
                 " validation_users=" + std::to_string(a.validation_users) +
                 " test_users=" + std::to_string(a.test_users) +
                 " epochs=" + std::to_string(a.epochs) + "\n";
      rows += name + "," + model_kind(m) +
              "," + std::to_string(m.k.k) + "," + a.attribute + "," + fixed(a.micro_f1, 6) +
              "," + fixed(a.majority_f1, 6) + "," + fixed(acc.auc, 6) + "," +
              fixed(acc.hit, 6) + "," + fixed(acc.ndcg, 6) + "\n";
    }
  }
  log << table;
  std::vector<std::string> out;
  const std::string rep = (fs::path(dir) / "attack_report.txt").string();
  write_text(rep, records);
  out.push_back(rep);
  if (!csv.empty()) {
    write_text(csv, rows);
    out.push_back(csv);
  }
  const std::string cfg = (fs::path(dir) / "attack.config").string();
  write_text(cfg, config.resolved());
  out.push_back(cfg);
  return out;
}

}  // namespace pfrec
