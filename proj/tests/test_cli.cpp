#include <filesystem>
#include <fstream>
#include <sstream>

#include "batmil/binio.hpp"
#include "batmil/checkpoint.hpp"
#include "batmil/data.hpp"
#include "batmil/rng.hpp"
#include "batmil/tiles.hpp"
#include "batmil/train.hpp"
#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace batmil;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "batmil");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  RunResult r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& leaf) const { return (dir / leaf).string(); }
};

const char* kSmallConfig =
    "preset = toy\n"
    "d_model = 8\n"
    "fusion_dim = 8\n"
    "n_state = 4\n"
    "hidden_mult = 2\n"
    "epochs = 3\n"
    "batch_size = 4\n"
    "lr = 1e-3\n";

}  // namespace

TEST_CASE("usage errors and exit codes") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
  const RunResult help = run({"train", "--help"});
  CHECK(help.code == cli::kExitOk);
  CHECK(help.out.find("--manifest") != std::string::npos);
  CHECK(run({"synth", "--bogus", "1", "--out", "/tmp/x"}).code == cli::kExitUsage);
  CHECK(run({"synth"}).code == cli::kExitUsage);  // --out is required
  CHECK(run({"eval", "--manifest", "/nonexistent/m.tsv", "--ckpt", "/nonexistent/c.bmil"}).code == cli::kExitUsage);
  CHECK(run({"kernel-bench", "--lengths", "16,abc"}).code == cli::kExitUsage);
  CHECK(run({"kernel-bench", "--runs", "0"}).code == cli::kExitUsage);
  CHECK(run({"route-stats"}).code == cli::kExitUsage);
  CHECK(run({"synth", "--bags", "1", "--out", "/tmp/batmil_cli_never"}).code == cli::kExitRuntime);
}

TEST_CASE("route-stats renormalizes dense probabilities") {
  const RunResult r = run({"route-stats", "--probs", "0.10,0.53,0.30,0.07"});
  REQUIRE(r.code == cli::kExitOk);
  const auto rows = lines_of(r.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "expert\tdense_prob\trenormalized");
  CHECK(rows[1] == "1\t0.530000\t0.638554");
  CHECK(rows[2] == "2\t0.300000\t0.361446");
  CHECK(run({"route-stats", "--probs", "0.5,0.5", "--top-k", "3"}).code == cli::kExitRuntime);
}

TEST_CASE("synth, train, eval, route-stats, saliency") {
  Workspace ws("batmil_test_cli_flow");
  const std::vector<std::string> synth_args{"synth", "--bags", "20", "--bag-size", "10", "--dim", "6", "--seed", "3",
                                            "--out"};
  auto synth_a = synth_args, synth_b = synth_args;
  synth_a.push_back(ws / "a");
  synth_b.push_back(ws / "b");
  REQUIRE(run(synth_a).code == cli::kExitOk);
  REQUIRE(run(synth_b).code == cli::kExitOk);

  // Same seed, same bytes.
  const data::Manifest m = data::read_manifest(ws / "a/manifest.tsv");
  REQUIRE(m.entries.size() == 20);
  for (const auto& e : m.entries) CHECK(slurp(m.resolve(e)) == slurp(fs::path(ws / "b") / e.path));
  CHECK(slurp(ws / "a/manifest.tsv") == slurp(ws / "b/manifest.tsv"));
  CHECK(m.indices_with_split("fold0").size() == 4);
  CHECK(m.indices_with_split("fold4").size() == 4);
  CHECK(lines_of(slurp(ws / "a/witness.tsv")).size() == 21);

  std::ofstream(ws / "small.cfg") << kSmallConfig;
  const std::vector<std::string> train_args{"train", "--manifest", ws / "a/manifest.tsv", "--config", ws / "small.cfg",
                                            "--seed", "5", "--holdout", "fold0"};
  auto t1 = train_args, t2 = train_args;
  t1.insert(t1.end(), {"--out", ws / "m1.bmil", "--log", ws / "m1.tsv"});
  t2.insert(t2.end(), {"--out", ws / "m2.bmil", "--log", ws / "m2.tsv"});
  const RunResult tr = run(t1);
  REQUIRE(tr.code == cli::kExitOk);
  CHECK(tr.out.find("trained on 16 bags for 3 epochs") != std::string::npos);
  REQUIRE(run(t2).code == cli::kExitOk);
  CHECK(slurp(ws / "m1.bmil") == slurp(ws / "m2.bmil"));
  CHECK(slurp(ws / "m1.tsv") == slurp(ws / "m2.tsv"));
  const auto log = lines_of(slurp(ws / "m1.tsv"));
  REQUIRE(log.size() == 4);
  CHECK(log[0].rfind("epoch\tlr\ttrain_loss\ttrain_acc\tval_loss", 0) == 0);

  SUBCASE("eval") {
    const RunResult ev = run({"eval", "--manifest", ws / "a/manifest.tsv", "--ckpt", ws / "m1.bmil", "--split", "fold0"});
    REQUIRE(ev.code == cli::kExitOk);
    const auto j = nlohmann::json::parse(ev.out);
    CHECK(j["n_eval"] == 4);
    CHECK(j["fold"] == "fold0");
    CHECK(j["f1_scheme"].get<std::string>().find("macro") != std::string::npos);
    REQUIRE(run({"eval", "--manifest", ws / "a/manifest.tsv", "--ckpt", ws / "m1.bmil", "--split", "all", "--report",
                 ws / "all.json"})
                .code == cli::kExitOk);
    CHECK(nlohmann::json::parse(slurp(ws / "all.json"))["n_eval"] == 20);
    CHECK(run({"eval", "--manifest", ws / "a/manifest.tsv", "--ckpt", ws / "m1.bmil", "--split", "val"}).code ==
          cli::kExitRuntime);
    CHECK(run({"eval", "--manifest", ws / "a/manifest.tsv", "--ckpt", ws / "a/manifest.tsv"}).code == cli::kExitRuntime);
  }
  SUBCASE("lr 0 checkpoint evaluates like the untrained init") {
    std::ofstream(ws / "frozen.cfg") << kSmallConfig << "lr = 0\n";
    REQUIRE(run({"train", "--manifest", ws / "a/manifest.tsv", "--config", ws / "frozen.cfg", "--seed", "5", "--out",
                 ws / "frozen.bmil"})
                .code == cli::kExitOk);
    model::ModelConfig mc = train::read_train_config(ws / "frozen.cfg").model;
    mc.d_in = 6;
    mc.seed = 5;
    model::BatmilParams init = model::init_model(mc);
    model::checkpoint_save(init, ws / "init.bmil");
    const RunResult a = run({"eval", "--manifest", ws / "a/manifest.tsv", "--ckpt", ws / "frozen.bmil", "--split", "all"});
    const RunResult b = run({"eval", "--manifest", ws / "a/manifest.tsv", "--ckpt", ws / "init.bmil", "--split", "all"});
    REQUIRE(a.code == cli::kExitOk);
    CHECK(a.out == b.out);
  }
  SUBCASE("route-stats on a checkpoint") {
    const RunResult rs = run({"route-stats", "--manifest", ws / "a/manifest.tsv", "--ckpt", ws / "m1.bmil", "--records",
                              ws / "rec.tsv"});
    REQUIRE(rs.code == cli::kExitOk);
    const auto rows = lines_of(rs.out);
    // 2 blocks × 4 experts load rows, 2 aux rows, top-2 plus 4 forced-expert rows.
    CHECK(rows[0] == "block\texpert\tfraction\timportance");
    CHECK(rs.out.find("block\taux_loss") != std::string::npos);
    CHECK(rs.out.find("\ntop2\t") != std::string::npos);
    for (int e = 0; e < 4; ++e) CHECK(rs.out.find("\nexpert" + std::to_string(e) + "\t") != std::string::npos);
    // Block 0: fractions count both routing slots, importances are mean probabilities.
    double frac = 0, imp = 0;
    for (int i = 1; i <= 4; ++i) {
      std::istringstream cols(rows[i]);
      std::size_t block = 9, expert = 9;
      double f = 0, p = 0;
      cols >> block >> expert >> f >> p;
      CHECK(block == 0);
      frac += f;
      imp += p;
    }
    CHECK(frac == doctest::Approx(2.0).epsilon(1e-5));
    CHECK(imp == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(lines_of(slurp(ws / "rec.tsv")).size() == 1 + 20 * 10 * 2);
  }
  SUBCASE("saliency") {
    const std::string bag = (fs::path(ws / "a") / m.entries[0].path).string();
    const RunResult s1 = run({"saliency", "--bag", bag, "--ckpt", ws / "m1.bmil"});
    REQUIRE(s1.code == cli::kExitOk);
    const auto rows = lines_of(s1.out);
    REQUIRE(rows.size() == 11);
    CHECK(rows[0] == "instance\tscore");
    double total = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) total += std::stod(rows[i].substr(rows[i].find('\t') + 1));
    CHECK(total > 0.0);
    REQUIRE(run({"saliency", "--bag", bag, "--ckpt", ws / "m1.bmil", "--out", ws / "sal.tsv"}).code == cli::kExitOk);
    CHECK(slurp(ws / "sal.tsv") == s1.out);
  }
  SUBCASE("sweep-c emits one row per curvature") {
    const RunResult sw = run({"sweep-c", "--values", "0.05,0.1,0.2", "--manifest", ws / "a/manifest.tsv", "--config",
                              ws / "small.cfg", "--out-dir", ws / "sweep"});
    REQUIRE(sw.code == cli::kExitOk);
    const auto rows = lines_of(sw.out);
    REQUIRE(rows.size() == 4);
    CHECK(rows[1].rfind("0.050000\tweighted_add\t3\t", 0) == 0);
    CHECK(rows[3].rfind("0.200000\t", 0) == 0);
    CHECK(fs::exists(ws / "sweep/c0.100000.bmil"));
    CHECK(fs::exists(ws / "sweep/c0.100000.log.tsv"));
    CHECK(model::checkpoint_load(ws / "sweep/c0.050000.bmil").config.curvature == 0.05);
    CHECK(run({"sweep-c", "--values", "0.1,x", "--manifest", ws / "a/manifest.tsv"}).code == cli::kExitUsage);
    CHECK(run({"sweep-c", "--values", "0.1", "--manifest", ws / "a/manifest.tsv", "--holdout", "test"}).code ==
          cli::kExitRuntime);
    CHECK(run({"sweep-c", "--values", "-0.1", "--manifest", ws / "a/manifest.tsv", "--config", ws / "small.cfg"}).code ==
          cli::kExitRuntime);
  }
  SUBCASE("malformed config") {
    std::ofstream(ws / "bad.cfg") << "epochs = 3\nlearning_rate = 1\n";
    const RunResult bad = run({"train", "--manifest", ws / "a/manifest.tsv", "--config", ws / "bad.cfg", "--out",
                               ws / "bad.bmil"});
    CHECK(bad.code == cli::kExitRuntime);
    CHECK(bad.err.find("bad.cfg:2:") != std::string::npos);
    CHECK_FALSE(fs::exists(ws / "bad.bmil"));
  }
}

TEST_CASE("tiles subcommand") {
  Workspace ws("batmil_test_cli_tiles");
  tiles::RgbImage img(448, 230, 250);
  Rng rng = make_rng(7);
  for (std::size_t y = 0; y < 224; ++y) {
    for (std::size_t x = 0; x < 224; ++x) {
      const auto v = static_cast<std::uint8_t>(40 + rng() % 100);
      img.set(x, y, v, static_cast<std::uint8_t>(v / 2), v);
    }
  }
  tiles::write_png(ws / "slide.png", img);
  const RunResult r = run({"tiles", "--input", ws / "slide.png", "--out", ws / "kept", "--report", ws / "report.tsv"});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(r.out.find("kept 1 of 2 tiles") != std::string::npos);
  const auto report = lines_of(slurp(ws / "report.tsv"));
  REQUIRE(report.size() == 3);
  CHECK(report[1].find("keep") != std::string::npos);
  CHECK(report[2].find("reject\toccupancy") != std::string::npos);
  const tiles::RgbImage kept = tiles::read_png(ws / "kept/tile_r000_c000.png");
  CHECK(kept.pixels == tiles::crop(img, 0, 0, 224, 224).pixels);
  CHECK(run({"tiles", "--input", ws / "missing.png", "--out", ws / "kept"}).code == cli::kExitUsage);
  std::ofstream(ws / "not.png") << "plain text";
  CHECK(run({"tiles", "--input", ws / "not.png", "--out", ws / "kept"}).code == cli::kExitRuntime);
}

TEST_CASE("kernel-bench table") {
  const RunResult r = run({"kernel-bench", "--lengths", "64,128", "--runs", "3", "--channels", "2"});
  REQUIRE(r.code == cli::kExitOk);
  const auto rows = lines_of(r.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].rfind("# kernels: ", 0) == 0);
  CHECK(rows[1] == "length\tconv_ms\tscan_ms\tconv_ratio_vs_prev");
  CHECK(rows[2].rfind("64\t", 0) == 0);
  CHECK(rows[3].rfind("128\t", 0) == 0);
}
