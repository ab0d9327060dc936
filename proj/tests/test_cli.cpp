#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "prism/cli.hpp"
#include "prism/models.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "prism");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = prism::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// metrics lines with the timing field removed
std::vector<json> metrics_without_time(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    j.erase("wall_ms");
    out.push_back(j);
  }
  return out;
}

struct Sandbox {
  fs::path root;
  fs::path config;
  Sandbox() {
    root = fs::temp_directory_path() / ("prism_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    auto c = prism::cli::default_config();
    c["data"]["content_size"] = 20;
    c["data"]["min_len"] = 2;
    c["data"]["max_len"] = 6;
    c["data"]["train_pairs"] = 200;
    c["data"]["valid_pairs"] = 30;
    c["data"]["test_pairs"] = 5;
    auto& t = c["train"];
    t["steps"] = 30;
    t["eval_steps"] = {10, 20};
    t["token_budget"] = 100;
    t["peak_lr"] = 3e-3;
    t["warmup_steps"] = 5;
    t["eval_sentences"] = 10;
    t["model"]["d_model"] = 16;
    t["model"]["heads"] = 2;
    t["model"]["enc_layers"] = 1;
    t["model"]["dec_layers"] = 1;
    c["bench"]["lengths"] = {16, 32, 64, 128};
    c["bench"]["d_model"] = 16;
    c["bench"]["heads"] = 2;
    c["bench"]["min_rep_ms"] = 0.2;
    c["bench"]["fit_min"] = 32;
    config = root / "smoke.json";
    std::ofstream(config) << c.dump(2);
  }
  ~Sandbox() { fs::remove_all(root); }
  std::string out(const std::string& name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("gen-data is deterministic and guarded") {
  Sandbox s;
  REQUIRE(cli({"gen-data", "--config", s.config.string(), "--out", s.out("a")}).code == 0);
  REQUIRE(cli({"gen-data", "--config", s.config.string(), "--out", s.out("b")}).code == 0);
  for (const auto* f : {"train.tsv", "valid.tsv", "test.tsv", "vocab.tsv", "injection_train.tsv", "injection_eval.tsv"}) {
    INFO(f);
    CHECK(slurp(fs::path(s.out("a")) / "data" / f) == slurp(fs::path(s.out("b")) / "data" / f));
    CHECK(!slurp(fs::path(s.out("a")) / "data" / f).empty());
  }
  const auto again = cli({"gen-data", "--config", s.config.string(), "--out", s.out("a")});
  CHECK(again.code == 2);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(cli({"gen-data", "--config", s.config.string(), "--out", s.out("a"), "--force", "--seed", "9"}).code == 0);
  CHECK(slurp(fs::path(s.out("a")) / "data" / "train.tsv") != slurp(fs::path(s.out("b")) / "data" / "train.tsv"));
  CHECK(read_json(fs::path(s.out("a")) / "data" / "manifest.json")["config"]["data"]["seed"] == 9);
}

TEST_CASE("config errors exit with code 2") {
  Sandbox s;
  auto c = read_json(s.config);
  c["data"].erase("content_size");
  const auto broken = s.root / "broken.json";
  std::ofstream(broken) << c.dump();
  auto r = cli({"gen-data", "--config", broken.string(), "--out", s.out("x")});
  CHECK(r.code == 2);
  CHECK(r.err.find("data.content_size") != std::string::npos);

  c = read_json(s.config);
  c["train"]["model"].erase("heads");
  std::ofstream(broken) << c.dump();
  r = cli({"train", "--config", broken.string(), "--out", s.out("x")});
  CHECK(r.code == 2);
  CHECK(r.err.find("train.model.heads") != std::string::npos);

  c = read_json(s.config);
  c["train"]["learning_rate"] = 1.0;
  std::ofstream(broken) << c.dump();
  r = cli({"train", "--config", broken.string(), "--out", s.out("x")});
  CHECK(r.code == 2);
  CHECK(r.err.find("train.learning_rate") != std::string::npos);

  CHECK(cli({"train", "--config", s.config.string(), "--set", "train.nope=1", "--out", s.out("x")}).code == 2);
  CHECK(cli({"train", "--config", s.config.string(), "--arch", "lstm", "--out", s.out("x")}).code == 2);
  CHECK(cli({"train", "--config", s.config.string(), "--preset", "sprint", "--out", s.out("x")}).code == 2);
  CHECK(cli({"train", "--config", (s.root / "missing.json").string()}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"inject", "--config", s.config.string(), "--out", s.out("x")}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  CHECK_FALSE(fs::exists(s.out("x")));
}

TEST_CASE("train writes one directory per seed and re-runs from its manifest") {
  Sandbox s;
  const auto r = cli({"train", "--config", s.config.string(), "--out", s.out("o"), "--seed", "4,5", "--arch", "prism",
                      "--preset", "marathon"});
  REQUIRE(r.code == 0);
  for (const auto* seed : {"4", "5"}) {
    const auto dir = fs::path(s.out("o")) / "train" / "prism" / seed;
    CHECK(fs::exists(dir / "final.ckpt"));
    CHECK(metrics_without_time(dir / "metrics.jsonl").size() == 3);
    const auto m = read_json(dir / "manifest.json");
    CHECK(m["status"] == "complete");
    CHECK(m["seeds"] == json::array({std::stoi(seed)}));
    CHECK(m["config"]["train"]["peak_lr"] == 8e-4);
    CHECK(m["config"]["train"]["warmup_steps"] == 120);
    CHECK(m["config"]["train"]["model"]["arch"] == "prism");
    CHECK(m.contains("revision"));
    CHECK(!m["finished_at"].is_null());
  }
  const auto ckpt = prism::models::load_checkpoint(fs::path(s.out("o")) / "train/prism/4/final.ckpt");
  CHECK(ckpt.model->steps_trained == 30);
  CHECK(ckpt.model->config().seed == 4);

  const auto manifest = fs::path(s.out("o")) / "train/prism/5/manifest.json";
  REQUIRE(cli({"train", "--config", manifest.string(), "--out", s.out("again")}).code == 0);
  CHECK_FALSE(fs::exists(fs::path(s.out("again")) / "train/prism/4"));
  CHECK(metrics_without_time(fs::path(s.out("again")) / "train/prism/5/metrics.jsonl") ==
        metrics_without_time(fs::path(s.out("o")) / "train/prism/5/metrics.jsonl"));
  CHECK(slurp(fs::path(s.out("again")) / "train/prism/5/final.ckpt") ==
        slurp(fs::path(s.out("o")) / "train/prism/5/final.ckpt"));
}

#ifdef PRISM_CLI_PATH
TEST_CASE("an interrupted run leaves its manifest incomplete") {
  Sandbox s;
  const std::string cmd = std::string("timeout -s KILL 2 ") + PRISM_CLI_PATH + " train --config " + s.config.string() +
                          " --set train.steps=100000 --set train.eval_steps=[] --seed 1 --out " + s.out("k") +
                          " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  CHECK(rc != 0);
  const auto m = read_json(fs::path(s.out("k")) / "train/baseline/1/manifest.json");
  CHECK(m["status"] == "incomplete");
  CHECK(m["finished_at"].is_null());
}
#endif

TEST_CASE("ismr emits per-seed streams and a table") {
  Sandbox s;
  const auto r = cli({"ismr", "--config", s.config.string(), "--out", s.out("i"), "--seed", "3"});
  REQUIRE(r.code == 0);
  const auto base = fs::path(s.out("i")) / "ismr" / "baseline";
  const auto table = slurp(base / "ismr_table.csv");
  CHECK(table.substr(0, table.find('\n')) == "step,baseline,ismr,ablation");
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  const auto checks = read_json(base / "3" / "checks.json");
  CHECK(checks["transplant_exact"] == true);
  CHECK(checks["column_stats_identical"] == true);
  CHECK(checks["map_table"] == "shared");
  CHECK(metrics_without_time(base / "3" / "metrics.jsonl").size() == 9);
  const auto e1 = prism::models::load_map_file(base / "3" / "map_e1.map");
  const auto sh = prism::models::load_map_file(base / "3" / "map_shuffled.map");
  CHECK(prism::models::column_stats(e1.matrix) == prism::models::column_stats(sh.matrix));

  REQUIRE(cli({"ismr", "--config", (base / "3" / "manifest.json").string(), "--out", s.out("i2")}).code == 0);
  CHECK(metrics_without_time(fs::path(s.out("i2")) / "ismr/baseline/3/metrics.jsonl") ==
        metrics_without_time(base / "3" / "metrics.jsonl"));

  const auto two = cli({"ismr", "--config", s.config.string(), "--out", s.out("j"), "--seed", "3,4", "--arch", "prism",
                        "--set", "train.steps=10", "--set", "train.eval_steps=[10]"});
  REQUIRE(two.code == 0);
  const auto banded = slurp(fs::path(s.out("j")) / "ismr/prism/ismr_table.csv");
  CHECK(banded.find("baseline_min,baseline_max") != std::string::npos);
  CHECK(read_json(fs::path(s.out("j")) / "ismr/prism/4/checks.json")["map_table"] == "amplitude");
}

TEST_CASE("inject records its settings and emits the four-row summary") {
  Sandbox s;
  REQUIRE(cli({"train", "--config", s.config.string(), "--out", s.out("t"), "--seed", "2", "--arch", "prism"}).code == 0);
  const auto ckpt = (fs::path(s.out("t")) / "train/prism/2/final.ckpt").string();

  auto r = cli({"inject", "--checkpoint", ckpt, "--lr", "2e-4", "--steps", "10", "--out", s.out("inj")});
  REQUIRE(r.code == 0);
  const auto dir = fs::path(s.out("inj")) / "inject/prism/2";
  const auto m = read_json(dir / "manifest.json");
  CHECK(m["config"]["injection"]["lr"] == 2e-4);
  CHECK(m["config"]["injection"]["steps"] == 10);
  CHECK(m["checkpoint"] == ckpt);
  const auto summary = slurp(dir / "summary.csv");
  CHECK(summary.find("Updates,10\n") != std::string::npos);
  CHECK(summary.find("\nAcquisition,") != std::string::npos);
  CHECK(summary.find("\nPost-Inj BLEU,") != std::string::npos);
  CHECK(summary.find("\nStability Delta,") != std::string::npos);
  const auto rec = metrics_without_time(dir / "metrics.jsonl");
  REQUIRE(rec.size() == 1);
  CHECK(rec[0]["split"] == "injection");
  CHECK(rec[0]["acquisition"].is_number());

  REQUIRE(cli({"inject", "--config", (dir / "manifest.json").string(), "--out", s.out("inj2")}).code == 0);
  CHECK(slurp(fs::path(s.out("inj2")) / "inject/prism/2/metrics.jsonl").size() > 0);
  CHECK(metrics_without_time(fs::path(s.out("inj2")) / "inject/prism/2/metrics.jsonl") == rec);

  r = cli({"inject", "--checkpoint", ckpt, "--steps", "0", "--out", s.out("zero")});
  REQUIRE(r.code == 0);
  CHECK(slurp(fs::path(s.out("zero")) / "inject/prism/2/summary.csv").find("Stability Delta,+0.00") != std::string::npos);

  // same checkpoint against another vocabulary
  auto c = read_json(s.config);
  c["data"]["seed"] = 77;
  const auto other = s.root / "other.json";
  std::ofstream(other) << c.dump();
  r = cli({"inject", "--config", other.string(), "--checkpoint", ckpt, "--out", s.out("mm")});
  CHECK(r.code == 2);
  CHECK(r.err.find("vocab") != std::string::npos);

  r = cli({"report", "--out", s.out("zero")});
  CHECK(r.code == 0);
  CHECK(fs::exists(fs::path(s.out("zero")) / "report/injection.csv"));
}

TEST_CASE("bench writes a report with machine metadata") {
  Sandbox s;
  const auto r = cli({"bench", "--config", s.config.string(), "--out", s.out("b")});
  REQUIRE(r.code == 0);
  const auto report = slurp(fs::path(s.out("b")) / "bench/report.csv");
  CHECK(report.find("primitive,slope,ci_low,ci_high") != std::string::npos);
  const auto machine = read_json(fs::path(s.out("b")) / "bench/machine.json");
  CHECK(machine.contains("cpu"));
  CHECK(machine.contains("note"));
  CHECK(prism::cli::default_config()["bench"]["lengths"] == json::array({128, 256, 512, 1024, 2048, 4096}));
}
