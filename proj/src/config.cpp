// SPDX-License-Identifier: Apache-2.0
#include "pfrec/config.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pfrec/error.hpp"

namespace pfrec {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

RunConfig::RunConfig() {
  values_ = {
      {"seed", "0"},
      {"output_dir", "out"},
      {"data.interactions", ""},
      {"data.attributes", ""},
      {"data.attribute_names", ""},
      {"data.min_activity", "10"},
      {"data.eval_negatives", "99"},
      {"encoder.dim", "64"},
      {"encoder.layers", "2"},
      {"encoder.heads", "2"},
      {"encoder.max_len", "50"},
      {"encoder.ffn_width", "0"},
      {"encoder.dropout", "0.2"},
      {"eliminator.prompt_len", "10"},
      {"eliminator.bottleneck", "16"},
      {"pretrain.lr", "1e-3"},
      {"pretrain.l2", "1e-6"},
      {"pretrain.batch_size", "256"},
      {"pretrain.epochs", "20"},
      {"pretrain.eval_every", "1"},
      {"tune.lr", "1e-4"},
      {"tune.disc_lr", "1e-4"},
      {"tune.l2", "1e-6"},
      {"tune.batch_size", "256"},
      {"tune.epochs", "20"},
      {"tune.lambda", "1"},
      {"tune.disc_steps", "1"},
      {"tune.eval_every", "1"},
      {"tune.mode", "pfrec"},
      {"tune.attrs", ""},
      {"attack.lr", "1e-3"},
      {"attack.batch_size", "256"},
      {"attack.max_epochs", "200"},
      {"attack.patience", "5"},
      {"synth.users", "2000"},
      {"synth.items", "500"},
      {"synth.clusters", "10"},
      {"synth.classes", "2,4"},
      {"synth.coupling", "0.9,0.9"},
      {"synth.min_len", "15"},
      {"synth.max_len", "50"},
      {"synth.attribute_names", "gender,age"},
  };
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  parse(buf.str(), path);
}

void RunConfig::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + " line " + std::to_string(n) + ": expected key = value");
    }
    set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw UsageError("override '" + assignment + "' is not of the form key=value");
  }
  set(trim(std::string_view(assignment).substr(0, eq)),
      trim(std::string_view(assignment).substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') {
    throw UsageError("config key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

std::size_t RunConfig::count(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw UsageError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

std::uint64_t RunConfig::seed() const { return count("seed"); }

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::output_dir() const {
  std::filesystem::path p = get("output_dir");
  if (p.is_relative()) {
    if (const char* root = std::getenv("PFREC_OUT"); root && *root) p = std::filesystem::path(root) / p;
  }
  return p.string();
}

std::string RunConfig::path_or(const std::string& key, const std::string& fallback) const {
  const std::string& v = get(key);
  if (!v.empty()) return v;
  return (std::filesystem::path(output_dir()) / fallback).string();
}

EncoderConfig RunConfig::encoder(std::size_t attributes) const {
  EncoderConfig c;
  c.dim = count("encoder.dim");
  c.layers = count("encoder.layers");
  c.heads = count("encoder.heads");
  c.max_len = count("encoder.max_len");
  c.ffn_width = count("encoder.ffn_width");
  c.dropout = real("encoder.dropout");
  c.prompt_rows = prompt_rows(eliminator(), attributes);
  c.validate();
  return c;
}

EliminatorConfig RunConfig::eliminator() const {
  EliminatorConfig c;
  c.prompt_len = count("eliminator.prompt_len");
  c.bottleneck = count("eliminator.bottleneck");
  c.validate(count("encoder.dim"));
  return c;
}

PretrainConfig RunConfig::pretrain() const {
  PretrainConfig c;
  c.lr = real("pretrain.lr");
  c.l2 = real("pretrain.l2");
  c.batch_size = count("pretrain.batch_size");
  c.epochs = count("pretrain.epochs");
  c.eval_every = count("pretrain.eval_every");
  c.seed = seed();
  return c;
}

TuneConfig RunConfig::tune() const {
  TuneConfig c;
  c.lr = real("tune.lr");
  c.disc_lr = real("tune.disc_lr");
  c.l2 = real("tune.l2");
  c.batch_size = count("tune.batch_size");
  c.epochs = count("tune.epochs");
  c.lambda = real("tune.lambda");
  if (c.lambda < 0) throw UsageError("config key 'tune.lambda': must be >= 0");
  c.disc_steps = count("tune.disc_steps");
  c.eval_every = count("tune.eval_every");
  c.mode = parse_tune_mode(get("tune.mode"));
  c.seed = seed();
  return c;
}

AttackerConfig RunConfig::attacker() const {
  AttackerConfig c;
  c.lr = real("attack.lr");
  c.batch_size = count("attack.batch_size");
  c.max_epochs = count("attack.max_epochs");
  c.patience = count("attack.patience");
  c.seed = seed();
  return c;
}

SynthConfig RunConfig::synth() const {
  SynthConfig c;
  c.users = count("synth.users");
  c.items = count("synth.items");
  c.clusters = count("synth.clusters");
  c.classes.clear();
  for (const auto& s : list("synth.classes")) {
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw UsageError("config key 'synth.classes': '" + s + "' is not an integer");
    }
    c.classes.push_back(v);
  }
  c.coupling.clear();
  for (const auto& s : list("synth.coupling")) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (*end != '\0') {
      throw UsageError("config key 'synth.coupling': '" + s + "' is not a number");
    }
    c.coupling.push_back(v);
  }
  c.min_len = count("synth.min_len");
  c.max_len = count("synth.max_len");
  c.attribute_names = list("synth.attribute_names");
  c.seed = seed();
  c.validate();
  return c;
}

}  // namespace pfrec
