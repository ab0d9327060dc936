#include "prism/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>

#include "prism/bench.hpp"
#include "prism/protocols.hpp"

#ifndef PRISM_BUILD_REVISION
#define PRISM_BUILD_REVISION "unknown"
#endif

namespace prism::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Usage and configuration problems; mapped to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string arch;
  std::string preset;
  std::string out = "runs";
  bool force = false;
  std::vector<std::string> sets;
  std::optional<double> lr;
  std::optional<std::size_t> steps;
  bool separate_batches = false;
  std::string map_table;
  std::vector<std::string> checkpoints;
  std::vector<std::string> argv;
};

// Fields filled from the task or the command line rather than the file.
const std::set<std::string> kDerived = {"train.model.vocab_size", "train.model.vocab_hash", "train.model.max_src_len",
                                        "train.model.seed", "train.model.arch", "train.seeds"};

std::vector<std::string> sections_for(const std::string& command) {
  if (command == "gen-data") return {"data"};
  if (command == "train") return {"data", "train"};
  if (command == "ismr") return {"data", "train", "ismr"};
  if (command == "inject") return {"injection"};
  if (command == "bench") return {"bench"};
  return {};
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void check_fields(const json& expected, const json& given, const std::string& path) {
  if (!given.is_object()) throw UsageError("config: field " + path + " must be an object");
  for (const auto& [key, value] : expected.items()) {
    const std::string full = path + "." + key;
    if (!given.contains(key)) {
      if (kDerived.count(full)) continue;
      throw UsageError("config: missing field " + full);
    }
    if (value.is_object()) check_fields(value, given.at(key), full);
  }
  for (const auto& [key, value] : given.items())
    if (!expected.contains(key)) throw UsageError("config: unknown field " + path + "." + key);
}

json merge(json base, const json& over) {
  for (const auto& [key, value] : over.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object())
      base[key] = merge(base[key], value);
    else
      base[key] = value;
  }
  return base;
}

void apply_set(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &cfg;
  std::stringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw UsageError("--set: unknown field " + key);
    node = &(*node)[part];
  }
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  *node = value;
}

template <typename T>
T parse_section(const json& cfg, const std::string& name) {
  try {
    return cfg.at(name).get<T>();
  } catch (const json::exception& e) {
    throw UsageError("config: bad section " + name + ": " + e.what());
  }
}

struct Resolved {
  json config;  // only the sections the command uses
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> checkpoints;
};

Resolved resolve(const Options& o) {
  const auto defaults = default_config();
  json cfg = defaults;
  Resolved r;
  r.seeds = o.seeds;
  r.checkpoints = o.checkpoints;
  std::string arch = o.arch;
  const auto sections = sections_for(o.command);

  if (!o.config_path.empty()) {
    json file = json::parse(read_file(o.config_path), nullptr, false);
    if (file.is_discarded() || !file.is_object()) throw UsageError("config: " + o.config_path + " is not a JSON object");
    if (file.contains("command") && file.contains("config")) {
      // a run manifest: re-run exactly what it recorded
      if (file.at("command") != o.command)
        throw UsageError("config: manifest was written by '" + file.at("command").get<std::string>() + "'");
      if (r.seeds.empty() && file.contains("seeds")) r.seeds = file.at("seeds").get<std::vector<std::uint64_t>>();
      if (arch.empty() && file.contains("arch") && file.at("arch").is_string()) arch = file.at("arch").get<std::string>();
      if (r.checkpoints.empty() && file.contains("checkpoint")) r.checkpoints = {file.at("checkpoint").get<std::string>()};
      file = file.at("config");
    }
    for (const auto& s : sections) {
      if (!file.contains(s)) throw UsageError("config: missing field " + s);
      check_fields(defaults.at(s), file.at(s), s);
      cfg[s] = merge(defaults.at(s), file.at(s));
    }
    if (o.command == "inject" && file.contains("data")) {
      check_fields(defaults.at("data"), file.at("data"), "data");
      cfg["data"] = file.at("data");
    } else if (o.command == "inject") {
      cfg.erase("data");
    }
  } else if (o.command == "inject") {
    cfg.erase("data");
  }

  if (!o.preset.empty()) {
    auto tc = parse_section<training::TrainConfig>(cfg, "train");
    try {
      training::apply_preset(tc, o.preset);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    cfg["train"] = tc;
  }
  if (!arch.empty()) {
    try {
      cfg["train"]["model"]["arch"] = models::arch_name(models::parse_arch(arch));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (o.command == "gen-data" && !r.seeds.empty()) {
    if (r.seeds.size() != 1) throw UsageError("gen-data takes a single --seed");
    cfg["data"]["seed"] = r.seeds.front();
  }
  if (o.lr) cfg["injection"]["lr"] = *o.lr;
  if (o.steps) cfg["injection"]["steps"] = *o.steps;
  if (o.separate_batches) cfg["injection"]["separate_batches"] = true;
  if (!o.map_table.empty()) cfg["ismr"]["map_table"] = o.map_table;
  for (const auto& s : o.sets) apply_set(cfg, s);

  if (o.command == "train" || o.command == "ismr") {
    if (r.seeds.empty()) r.seeds = cfg["train"]["seeds"].get<std::vector<std::uint64_t>>();
    cfg["train"]["seeds"] = r.seeds;
  }
  for (const auto& s : sections) r.config[s] = cfg.at(s);
  if (cfg.contains("data") && !r.config.contains("data")) r.config["data"] = cfg["data"];
  if (o.command == "inject" && r.checkpoints.empty()) throw UsageError("inject requires --checkpoint");
  return r;
}

void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw UsageError(dir.string() + " already exists (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

struct Manifest {
  fs::path path;
  json body;

  void write() const { write_file(path, body.dump(2) + "\n"); }
  void finish(const std::string& status) {
    body["status"] = status;
    body["finished_at"] = now_utc();
    write();
  }
};

Manifest start_manifest(const fs::path& dir, const Options& o, const json& config, const json& extra) {
  Manifest m;
  m.path = dir / "manifest.json";
  m.body = {{"command", o.command},     {"status", "incomplete"},   {"config", config},
            {"output_dir", dir.string()}, {"revision", PRISM_BUILD_REVISION}, {"argv", o.argv},
            {"started_at", now_utc()},  {"finished_at", nullptr}};
  for (const auto& [k, v] : extra.items()) m.body[k] = v;
  m.write();
  return m;
}

class MetricsFile {
 public:
  explicit MetricsFile(const fs::path& path) : f_(path, std::ios::binary) {
    if (!f_) throw std::runtime_error("cannot write " + path.string());
  }
  void operator()(const training::MetricsRecord& r) {
    f_ << json(r).dump() << '\n';
    f_.flush();
  }

 private:
  std::ofstream f_;
};

protocols::TaskData build_task(const json& data_json) {
  return protocols::make_task(parse_section<protocols::DataConfig>(json{{"data", data_json}}, "data"));
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o, const Resolved& r, std::ostream& out) {
  const auto data = parse_section<protocols::DataConfig>(r.config, "data");
  const fs::path dir = fs::path(o.out) / "data";
  prepare_dir(dir, o.force);
  auto manifest = start_manifest(dir, o, r.config, {{"seeds", {data.seed}}});
  const auto task = protocols::make_task(data);
  datagen::write_corpus_files(dir, task.lexicon, task.corpus, task.injection);
  manifest.finish("complete");
  out << "wrote " << task.corpus.train.size() << '/' << task.corpus.valid.size() << '/' << task.corpus.test.size()
      << " pairs, vocabulary " << task.lexicon.vocab_size() << " -> " << dir.string() << '\n';
  return 0;
}

training::TrainConfig bound_train_config(const Resolved& r, const protocols::TaskData& task) {
  auto tc = parse_section<training::TrainConfig>(r.config, "train");
  const auto data = parse_section<protocols::DataConfig>(r.config, "data");
  protocols::bind_model_to_task(tc.model, task, data);
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return tc;
}

int cmd_train(const Options& o, const Resolved& r, std::ostream& out, std::ostream& err) {
  const auto task = build_task(r.config.at("data"));
  const auto tc = bound_train_config(r, task);
  const std::string arch = models::arch_name(tc.model.arch);
  const fs::path base = fs::path(o.out) / "train" / arch;
  for (auto seed : r.seeds) prepare_dir(base / std::to_string(seed), o.force);

  int status = 0;
  for (auto seed : r.seeds) {
    const fs::path dir = base / std::to_string(seed);
    json snapshot = r.config;
    snapshot["train"]["seeds"] = {seed};
    auto manifest = start_manifest(dir, o, snapshot, {{"seeds", {seed}}, {"arch", arch}});
    try {
      auto mc = tc.model;
      mc.seed = seed;
      auto model = models::init_model(mc);
      MetricsFile metrics(dir / "metrics.jsonl");
      const auto result = training::train(*model, task.corpus.train, task.corpus.valid, tc, seed,
                                          "train/" + arch + "/" + std::to_string(seed), std::ref(metrics));
      models::save_checkpoint(dir / "final.ckpt", *model,
                              {{"data", r.config.at("data")}, {"train", snapshot.at("train")}, {"seed", seed}});
      manifest.finish("complete");
      const auto& last = result.records.back();
      char buf[128];
      std::snprintf(buf, sizeof buf, "seed %llu: step %zu valid loss %.4f bleu %.2f\n",
                    static_cast<unsigned long long>(seed), last.step, last.loss, *last.bleu);
      out << buf;
    } catch (const std::exception& e) {
      manifest.finish("failed");
      err << "seed " << seed << " failed: " << e.what() << '\n';
      status = 1;
    }
  }
  return status;
}

int cmd_ismr(const Options& o, const Resolved& r, std::ostream& out, std::ostream& err) {
  const auto task = build_task(r.config.at("data"));
  const auto tc = bound_train_config(r, task);
  const std::string arch = models::arch_name(tc.model.arch);
  std::string table_name = r.config.at("ismr").at("map_table").get<std::string>();
  if (table_name == "auto") table_name = tc.model.arch == models::Arch::baseline ? "shared" : "amplitude";
  models::MapTable table;
  try {
    table = models::parse_map_table(table_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path base = fs::path(o.out) / "ismr" / arch;
  for (auto seed : r.seeds) prepare_dir(base / std::to_string(seed), o.force);

  std::vector<protocols::IsmrRun> runs;
  int status = 0;
  for (auto seed : r.seeds) {
    const fs::path dir = base / std::to_string(seed);
    json snapshot = r.config;
    snapshot["train"]["seeds"] = {seed};
    snapshot["ismr"]["map_table"] = table_name;
    auto manifest = start_manifest(dir, o, snapshot, {{"seeds", {seed}}, {"arch", arch}});
    try {
      MetricsFile metrics(dir / "metrics.jsonl");
      auto run = protocols::run_ismr(tc, task, seed, table, "ismr/" + arch + "/" + std::to_string(seed), std::ref(metrics));
      models::save_map(dir / "map_e1.map", run.map);
      models::save_map(dir / "map_shuffled.map", run.shuffled);
      const auto s1 = models::column_stats(run.map.matrix);
      const auto s2 = models::column_stats(run.shuffled.matrix);
      std::string stats = "column,e1_mean,e1_var,shuffled_mean,shuffled_var\n";
      for (std::size_t j = 0; j < s1.mean.size(); ++j)
        stats += std::to_string(j) + ',' + fmt17(s1.mean[j]) + ',' + fmt17(s1.variance[j]) + ',' + fmt17(s2.mean[j]) +
                 ',' + fmt17(s2.variance[j]) + '\n';
      write_file(dir / "column_stats.csv", stats);
      write_file(dir / "checks.json", json{{"transplant_exact", run.transplant_exact},
                                           {"column_stats_identical", s1 == s2},
                                           {"map_table", table_name}}
                                          .dump(2) +
                                          "\n");
      write_file(dir / "ismr_table.csv", protocols::ismr_table({run}));
      manifest.finish("complete");
      out << "seed " << seed << " done (transplant " << (run.transplant_exact ? "exact" : "NOT exact") << ")\n";
      runs.push_back(std::move(run));
    } catch (const std::exception& e) {
      manifest.finish("failed");
      err << "seed " << seed << " failed: " << e.what() << '\n';
      status = 1;
    }
  }
  if (!runs.empty()) {
    const auto table_csv = protocols::ismr_table(runs);
    write_file(base / "ismr_table.csv", table_csv);
    out << table_csv;
  }
  return status;
}

int cmd_inject(const Options& o, const Resolved& r, std::ostream& out, std::ostream& err) {
  const auto ic = parse_section<protocols::InjectionConfig>(r.config, "injection");
  std::map<std::string, protocols::TaskData> tasks;
  std::vector<std::pair<std::string, protocols::InjectionRun>> runs;
  int status = 0;

  struct Job {
    fs::path checkpoint;
    models::LoadedCheckpoint loaded;
    json data;
    fs::path dir;
  };
  std::vector<Job> jobs;
  for (const auto& path : r.checkpoints) {
    Job job;
    job.checkpoint = path;
    try {
      job.loaded = models::load_checkpoint(path);
    } catch (const std::exception& e) {
      throw UsageError("cannot load checkpoint " + path + ": " + e.what());
    }
    if (r.config.contains("data")) {
      job.data = r.config.at("data");
    } else if (job.loaded.meta.is_object() && job.loaded.meta.contains("data")) {
      job.data = job.loaded.meta.at("data");
    } else {
      throw UsageError("checkpoint " + path + " records no data config; pass one with --config");
    }
    const auto& mc = job.loaded.model->config();
    job.dir = fs::path(o.out) / "inject" / models::arch_name(mc.arch) / std::to_string(mc.seed);
    jobs.push_back(std::move(job));
  }
  for (const auto& job : jobs) prepare_dir(job.dir, o.force);

  for (auto& job : jobs) {
    const auto key = job.data.dump();
    if (!tasks.count(key)) tasks.emplace(key, build_task(job.data));
    const auto& task = tasks.at(key);
    auto& model = *job.loaded.model;
    const auto& mc = model.config();
    if (mc.vocab_hash != task.lexicon.hash() || mc.vocab_size != task.lexicon.vocab_size())
      throw UsageError("checkpoint/vocab mismatch: " + job.checkpoint.string() + " was trained on another vocabulary");

    const std::string arch = models::arch_name(mc.arch);
    json snapshot = {{"injection", r.config.at("injection")}, {"data", job.data}};
    auto manifest = start_manifest(job.dir, o, snapshot,
                                   {{"seeds", {mc.seed}}, {"arch", arch}, {"checkpoint", job.checkpoint.string()}});
    try {
      const auto run = protocols::run_injection(model, task.injection, task.corpus.valid, ic);
      const std::string label = arch + "/" + std::to_string(mc.seed);
      training::MetricsRecord rec;
      rec.run_id = "inject/" + label;
      rec.seed = mc.seed;
      rec.step = run.steps_executed;
      rec.split = "injection";
      rec.loss = models::evaluate_loss(model, task.corpus.valid, 2000);
      rec.bleu = run.post_bleu.bleu;
      rec.lr = ic.lr;
      rec.acquisition = run.post_acquisition.score();
      rec.stability_delta = run.delta;
      MetricsFile metrics(job.dir / "metrics.jsonl");
      metrics(rec);
      write_file(job.dir / "summary.csv", protocols::injection_table({{label, run}}));
      write_file(job.dir / "concepts.csv", protocols::concept_breakdown(run, task.injection));
      json norms = json::object();
      for (std::size_t i = 0; i < run.param_names.size(); ++i) norms[run.param_names[i]] = run.update_norms[i];
      write_file(job.dir / "update_norms.json", norms.dump(2) + "\n");
      models::save_checkpoint(job.dir / "injected.ckpt", model, job.loaded.meta);
      manifest.finish("complete");
      runs.emplace_back(label, run);
    } catch (const std::exception& e) {
      manifest.finish("failed");
      err << job.checkpoint.string() << " failed: " << e.what() << '\n';
      status = 1;
    }
  }
  if (!runs.empty()) out << protocols::injection_table(runs);
  return status;
}

int cmd_bench(const Options& o, const Resolved& r, std::ostream& out) {
  const auto bc = parse_section<bench::BenchConfig>(r.config, "bench");
  try {
    bc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = fs::path(o.out) / "bench";
  prepare_dir(dir, o.force);
  auto manifest = start_manifest(dir, o, r.config, {{"seeds", {bc.seed}}});
  const auto summary = bench::run_bench(bc);
  const auto report = bench::format_report(summary);
  write_file(dir / "report.csv", report);
  write_file(dir / "machine.json", summary.machine.dump(2) + "\n");
  manifest.finish("complete");
  out << report;
  if (summary.crossover_flag) out << "warning: ghc was not faster than mhsa at the largest length\n";
  return 0;
}

// ----- report --------------------------------------------------------------

std::vector<training::MetricsRecord> read_metrics(const fs::path& path) {
  std::vector<training::MetricsRecord> out;
  std::ifstream f(path);
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(json::parse(line).get<training::MetricsRecord>());
  return out;
}

std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int cmd_report(const Options& o, std::ostream& out) {
  const fs::path root(o.out);
  if (!fs::is_directory(root)) throw UsageError("no output directory " + root.string());
  const fs::path dir = root / "report";
  fs::create_directories(dir);
  std::size_t written = 0;

  for (const auto& arch_dir : sorted_dirs(root / "ismr")) {
    std::vector<protocols::IsmrRun> runs;
    for (const auto& seed_dir : sorted_dirs(arch_dir)) {
      if (!fs::exists(seed_dir / "metrics.jsonl")) continue;
      protocols::IsmrRun run;
      for (auto& rec : read_metrics(seed_dir / "metrics.jsonl")) {
        run.seed = rec.seed;
        if (ends_with(rec.run_id, "/baseline")) run.baseline.push_back(rec);
        else if (ends_with(rec.run_id, "/ismr")) run.ismr.push_back(rec);
        else if (ends_with(rec.run_id, "/ablation")) run.ablation.push_back(rec);
      }
      runs.push_back(std::move(run));
    }
    if (runs.empty()) continue;
    const auto csv = protocols::ismr_table(runs);
    const auto name = "ismr_" + arch_dir.filename().string() + ".csv";
    write_file(dir / name, csv);
    out << "# " << name << " (" << runs.size() << " seeds)\n" << csv << '\n';
    ++written;
  }

  std::string train_csv = "arch,seed,step,split,loss,bleu\n";
  bool any_train = false;
  for (const auto& arch_dir : sorted_dirs(root / "train")) {
    for (const auto& seed_dir : sorted_dirs(arch_dir)) {
      if (!fs::exists(seed_dir / "metrics.jsonl")) continue;
      for (const auto& rec : read_metrics(seed_dir / "metrics.jsonl")) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%llu,%zu,%s,%.6f,%.4f\n", arch_dir.filename().c_str(),
                      static_cast<unsigned long long>(rec.seed), rec.step, rec.split.c_str(), rec.loss,
                      rec.bleu.value_or(0.0));
        train_csv += buf;
        any_train = true;
      }
    }
  }
  if (any_train) {
    write_file(dir / "train.csv", train_csv);
    out << "# train.csv\n" << train_csv << '\n';
    ++written;
  }

  // merge per-run injection summaries column-wise
  std::vector<std::string> rows;
  std::map<std::string, std::string> lines;
  for (const auto& arch_dir : sorted_dirs(root / "inject")) {
    for (const auto& seed_dir : sorted_dirs(arch_dir)) {
      if (!fs::exists(seed_dir / "summary.csv")) continue;
      std::istringstream in(read_file(seed_dir / "summary.csv"));
      std::string line;
      while (std::getline(in, line)) {
        const auto comma = line.find(',');
        const auto row = line.substr(0, comma);
        if (!lines.count(row)) rows.push_back(row);
        lines[row] += line.substr(comma);
      }
    }
  }
  if (!rows.empty()) {
    std::string csv;
    for (const auto& row : rows) csv += row + lines[row] + '\n';
    write_file(dir / "injection.csv", csv);
    out << "# injection.csv\n" << csv << '\n';
    ++written;
  }

  if (fs::exists(root / "bench" / "report.csv")) {
    fs::copy_file(root / "bench" / "report.csv", dir / "bench.csv", fs::copy_options::overwrite_existing);
    out << "# bench.csv\n" << read_file(dir / "bench.csv") << '\n';
    ++written;
  }
  if (written == 0) out << "nothing to report under " << root.string() << '\n';
  return 0;
}

}  // namespace

json default_config() {
  training::TrainConfig train;
  return json{{"data", protocols::DataConfig{}},
              {"train", train},
              {"ismr", {{"map_table", "auto"}}},
              {"injection", protocols::InjectionConfig{}},
              {"bench", bench::BenchConfig{}}};
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  for (int i = 0; i < argc; ++i) o.argv.emplace_back(argv[i]);

  CLI::App app{"Harmonic-embedding translation experiments"};
  app.require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config file or a run manifest");
    sub->add_option("--out", o.out, "output root")->capture_default_str();
    sub->add_flag("--force", o.force, "overwrite existing outputs");
    sub->add_option("--set", o.sets, "override a config field: section.key=value");
  };
  auto seeded = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seeds, "seed list, comma separated")->delimiter(',');
    sub->add_option("--arch", o.arch, "baseline | prism");
    sub->add_option("--preset", o.preset, "ismr | marathon");
  };
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  common(gen);
  gen->add_option("--seed", o.seeds, "data seed")->delimiter(',');
  auto* train = app.add_subcommand("train", "train one model per seed");
  common(train);
  seeded(train);
  auto* ismr = app.add_subcommand("ismr", "semantic map refinement with shuffled control");
  common(ismr);
  seeded(ismr);
  ismr->add_option("--map-table", o.map_table, "shared | amplitude | decoder | auto");
  auto* inject = app.add_subcommand("inject", "few-shot concept injection into trained checkpoints");
  common(inject);
  inject->add_option("--checkpoint", o.checkpoints, "checkpoint file (repeatable)");
  inject->add_option("--lr", o.lr, "constant learning rate");
  inject->add_option("--steps", o.steps, "gradient steps");
  inject->add_flag("--separate-batches", o.separate_batches, "one concept per step");
  auto* bench_cmd = app.add_subcommand("bench", "time attention against harmonic convolution");
  common(bench_cmd);
  auto* report = app.add_subcommand("report", "collect tables from an output root");
  report->add_option("--out", o.out, "output root")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  o.command = app.get_subcommands().front()->get_name();

  Resolved resolved;
  try {
    if (o.command != "report") resolved = resolve(o);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: config: " << e.what() << '\n';
    return 2;
  }

  try {
    if (o.command == "gen-data") return cmd_gen_data(o, resolved, out);
    if (o.command == "train") return cmd_train(o, resolved, out, err);
    if (o.command == "ismr") return cmd_ismr(o, resolved, out, err);
    if (o.command == "inject") return cmd_inject(o, resolved, out, err);
    if (o.command == "bench") return cmd_bench(o, resolved, out);
    return cmd_report(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace prism::cli
