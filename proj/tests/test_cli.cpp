// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run pfrec(const std::string& args) {
  const std::string cmd = std::string(PFREC_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Fresh output directory plus a small-run config file.
struct Workspace {
  fs::path dir;
  std::string cfg;

  explicit Workspace(const std::string& name) {
    dir = fs::temp_directory_path() / ("pfrec_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream out(dir / "run.config");
    out << "output_dir = " << dir.string() << "\n"
        << "seed = 5\n"
        << "synth.users = 150\nsynth.items = 80\nsynth.clusters = 6\n"
        << "synth.classes = 2,3\nsynth.min_len = 10\nsynth.max_len = 20\n"
        << "data.eval_negatives = 30\n"
        << "encoder.dim = 8\nencoder.layers = 1\nencoder.max_len = 10\n"
        << "eliminator.prompt_len = 2\neliminator.bottleneck = 4\n"
        << "pretrain.epochs = 1\npretrain.batch_size = 64\n"
        << "tune.epochs = 1\ntune.batch_size = 64\n"
        << "attack.max_epochs = 5\n";
    cfg = "--config " + (dir / "run.config").string();
  }
  std::string path(const std::string& f) const { return (dir / f).string(); }
};

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(pfrec("").code == 1);
  CHECK(pfrec("bogus").code == 1);
  const Run r = pfrec("synth --set nope=1");
  CHECK(r.code == 1);
  CHECK(r.output.find("unknown config key 'nope'") != std::string::npos);
}

TEST_CASE("synth writes files deterministically and validates coupling") {
  Workspace w("synth");
  REQUIRE(pfrec("synth " + w.cfg).code == 0);
  CHECK(fs::exists(w.path("interactions.tsv")));
  CHECK(fs::exists(w.path("attributes.tsv")));
  CHECK(fs::exists(w.path("synth.config")));
  CHECK(slurp(w.path("dataset_meta.txt")).find("combination k=3 gender,age") !=
        std::string::npos);
  const std::string first = slurp(w.path("interactions.tsv"));
  REQUIRE(pfrec("synth " + w.cfg).code == 0);
  CHECK(slurp(w.path("interactions.tsv")) == first);

  // The resolved config alone reproduces the run.
  Workspace v("synth_replay");
  std::string resolved = slurp(w.path("synth.config"));
  const auto at = resolved.find(w.dir.string());
  resolved.replace(at, w.dir.string().size(), v.dir.string());
  std::ofstream(v.path("replay.config")) << resolved;
  REQUIRE(pfrec("synth --config " + v.path("replay.config")).code == 0);
  CHECK(slurp(v.path("interactions.tsv")) == first);

  const Run bad = pfrec("synth " + w.cfg + " --set synth.coupling=1.5,0.9");
  CHECK(bad.code == 1);
  CHECK(bad.output.find("synth.coupling") != std::string::npos);
}

TEST_CASE("pretrain, tune, evaluate and attack end to end") {
  Workspace w("flow");
  REQUIRE(pfrec("synth " + w.cfg).code == 0);
  const Run pre = pfrec("pretrain " + w.cfg);
  REQUIRE(pre.code == 0);
  const std::string backbone = slurp(w.path("backbone.ckpt"));
  CHECK(!backbone.empty());
  CHECK(slurp(w.path("pretrain_report.txt")).find("stage=pretrain summary") !=
        std::string::npos);
  REQUIRE(pfrec("pretrain " + w.cfg).code == 0);
  CHECK(slurp(w.path("backbone.ckpt")) == backbone);

  const Run tune = pfrec("tune " + w.cfg + " --attrs gender,age");
  REQUIRE(tune.code == 0);
  CHECK(tune.output.find("k=3") != std::string::npos);
  CHECK(pfrec("tune " + w.cfg + " --attrs none").code == 1);
  CHECK(pfrec("tune " + w.cfg + " --attrs height").code == 1);
  REQUIRE(pfrec("tune " + w.cfg + " --attrs age --mode no-prompt").code == 0);
  const std::string np = slurp(w.path("tune_k2_no-prompt_report.txt"));
  CHECK(np.find("prompt_slots=absent") != std::string::npos);
  CHECK(slurp(w.path("tune_k3_pfrec_report.txt")).find("prompt_slots=present") !=
        std::string::npos);

  fs::remove(w.path("negatives.tsv"));
  const Run ev = pfrec("evaluate " + w.cfg + " --checkpoint " + w.path("backbone.ckpt") +
                       " --checkpoint " + w.path("tuned_k3_pfrec.ckpt"));
  REQUIRE(ev.code == 0);
  CHECK(ev.output.find("pretrained") != std::string::npos);
  CHECK(ev.output.find("pfrec k=3") != std::string::npos);
  const std::string negatives = slurp(w.path("negatives.tsv"));
  fs::remove(w.path("negatives.tsv"));
  REQUIRE(pfrec("evaluate " + w.cfg + " --checkpoint " + w.path("backbone.ckpt")).code == 0);
  CHECK(slurp(w.path("negatives.tsv")) == negatives);

  const std::string tuned = slurp(w.path("tuned_k3_pfrec.ckpt"));
  const Run at = pfrec("attack " + w.cfg + " --checkpoint " + w.path("backbone.ckpt") +
                       " --checkpoint " + w.path("tuned_k3_pfrec.ckpt") + " --csv " +
                       w.path("pairs.csv"));
  REQUIRE(at.code == 0);
  CHECK(slurp(w.path("tuned_k3_pfrec.ckpt")) == tuned);
  CHECK(slurp(w.path("backbone.ckpt")) == backbone);
  const std::string csv = slurp(w.path("pairs.csv"));
  CHECK(csv.find("checkpoint,model,k,attribute,micro_f1,majority_f1,auc,hit10,ndcg10") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  // A damaged checkpoint is a data error.
  std::string broken = backbone;
  broken[broken.size() / 2] ^= 0x55;
  std::ofstream(w.path("broken.ckpt"), std::ios::binary) << broken;
  const Run bad = pfrec("evaluate " + w.cfg + " --checkpoint " + w.path("broken.ckpt"));
  CHECK(bad.code == 2);
  CHECK(bad.output.find("checksum") != std::string::npos);
}

TEST_CASE("missing input files are data errors") {
  Workspace w("missing");
  CHECK(pfrec("pretrain " + w.cfg).code == 2);
}
