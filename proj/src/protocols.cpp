#include "prism/protocols.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "prism/util.hpp"

namespace prism::protocols {

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"content_size", c.content_size},
                     {"novel_count", c.novel_count},
                     {"rule", datagen::rule_name(c.rule)},
                     {"min_len", c.min_len},
                     {"max_len", c.max_len},
                     {"train_pairs", c.sizes.train},
                     {"valid_pairs", c.sizes.valid},
                     {"test_pairs", c.sizes.test},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  j.at("content_size").get_to(c.content_size);
  j.at("novel_count").get_to(c.novel_count);
  c.rule = datagen::parse_rule(j.at("rule").get<std::string>());
  j.at("min_len").get_to(c.min_len);
  j.at("max_len").get_to(c.max_len);
  j.at("train_pairs").get_to(c.sizes.train);
  j.at("valid_pairs").get_to(c.sizes.valid);
  j.at("test_pairs").get_to(c.sizes.test);
  j.at("seed").get_to(c.seed);
}

TaskData make_task(const DataConfig& config) {
  auto lex = datagen::SyntheticLexicon::build(config.content_size, config.novel_count, config.seed);
  auto corpus = datagen::gen_corpus(lex, config.grammar(), config.sizes, config.seed);
  auto injection = datagen::make_injection_set(lex, config.grammar(), config.seed);
  return {std::move(lex), std::move(corpus), std::move(injection)};
}

void bind_model_to_task(models::ModelConfig& model, const TaskData& task, const DataConfig& data) {
  model.vocab_size = task.lexicon.vocab_size();
  model.vocab_hash = task.lexicon.hash();
  model.max_src_len = data.max_len;
}

// ---------------------------------------------------------------------------

IsmrRun run_ismr(const training::TrainConfig& config, const TaskData& task, std::uint64_t seed,
                 models::MapTable table, const std::string& run_prefix, const training::MetricsSink& sink) {
  const auto& train = task.corpus.train;
  const auto& valid = task.corpus.valid;
  IsmrRun run;
  run.seed = seed;

  auto mc = config.model;
  mc.seed = seed;
  auto first = models::init_model(mc);
  run.baseline = training::train(*first, train, valid, config, seed, run_prefix + "/baseline", sink).records;
  run.map = models::extract_map(*first, table);
  first.reset();

  const std::uint64_t reasoner_seed = derive_seed(seed, 2);
  auto second = models::init_model(mc);
  models::load_map(*second, run.map, true, reasoner_seed);
  run.transplant_exact = second->table(table).value.data == run.map.matrix.data;
  run.ismr = training::train(*second, train, valid, config, seed, run_prefix + "/ismr", sink).records;
  second.reset();

  run.shuffled = models::shuffle_map(run.map, derive_seed(seed, 3));
  auto control = models::init_model(mc);
  models::load_map(*control, run.shuffled, true, reasoner_seed);
  run.ablation = training::train(*control, train, valid, config, seed, run_prefix + "/ablation", sink).records;
  return run;
}

std::string ismr_table(const std::vector<IsmrRun>& runs) {
  if (runs.empty()) throw std::invalid_argument("ismr_table: no runs");
  const bool bands = runs.size() > 1;
  // step -> column -> per-seed values
  std::map<std::size_t, std::array<std::vector<double>, 3>> cells;
  for (const auto& r : runs) {
    const std::vector<MetricsRecord>* streams[3] = {&r.baseline, &r.ismr, &r.ablation};
    for (int c = 0; c < 3; ++c)
      for (const auto& rec : *streams[c])
        if (rec.split == "valid" && rec.bleu) cells[rec.step][c].push_back(*rec.bleu);
  }
  std::ostringstream out;
  const char* names[3] = {"baseline", "ismr", "ablation"};
  out << "step";
  for (auto* n : names) {
    out << ',' << n;
    if (bands) out << ',' << n << "_min," << n << "_max";
  }
  out << '\n';
  char buf[64];
  for (const auto& [step, cols] : cells) {
    out << step;
    for (const auto& v : cols) {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(std::max<std::size_t>(v.size(), 1));
      std::snprintf(buf, sizeof buf, "%.4f", mean);
      out << ',' << buf;
      if (bands) {
        std::snprintf(buf, sizeof buf, "%.4f,%.4f", *std::min_element(v.begin(), v.end()),
                      *std::max_element(v.begin(), v.end()));
        out << ',' << buf;
      }
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

std::size_t AcquisitionResult::concepts_acquired() const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < concept_totals.size(); ++c)
    if (concept_totals[c] > 0 && 2 * concept_successes[c] >= concept_totals[c]) ++n;
  return n;
}

AcquisitionResult acquisition_from_outputs(const datagen::InjectionSet& set,
                                           const std::vector<std::vector<int>>& outputs) {
  if (outputs.size() != set.eval.size()) throw std::invalid_argument("acquisition: output count mismatch");
  AcquisitionResult r;
  r.concept_successes.assign(set.novel_sources.size(), 0);
  r.concept_totals.assign(set.novel_sources.size(), 0);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& probe = set.eval[i];
    const auto& out = outputs[i];
    const int expected = set.mapped_targets.at(probe.concept_index);
    const bool hit = probe.target_position < out.size() && out[probe.target_position] == expected;
    ++r.total;
    ++r.concept_totals[probe.concept_index];
    if (hit) {
      ++r.successes;
      ++r.concept_successes[probe.concept_index];
    }
    if (out == training::reference_of(probe.pair)) ++r.exact_matches;
  }
  return r;
}

AcquisitionResult acquisition_score(Seq2SeqModel& model, const datagen::InjectionSet& set) {
  std::vector<SentencePair> pairs;
  for (const auto& p : set.eval) pairs.push_back(p.pair);
  return acquisition_from_outputs(set, training::decode_all(model, pairs));
}

BleuMeasurement measure_bleu(Seq2SeqModel& model, const std::vector<SentencePair>& split) {
  std::vector<std::vector<int>> refs;
  for (const auto& p : split) refs.push_back(training::reference_of(p));
  return {bleu_corpus(training::decode_all(model, split), refs), datagen::split_hash(split)};
}

double stability_delta(double pre_bleu, double post_bleu) { return post_bleu - pre_bleu; }

double stability_delta(const BleuMeasurement& pre, const BleuMeasurement& post) {
  if (pre.split_hash != post.split_hash) throw std::invalid_argument("stability delta: BLEU measured on different splits");
  return stability_delta(pre.bleu, post.bleu);
}

void to_json(nlohmann::json& j, const InjectionConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"steps", c.steps},
                     {"separate_batches", c.separate_batches},
                     {"clip_norm", c.clip_norm},
                     {"beta1", c.adamw.beta1},
                     {"beta2", c.adamw.beta2},
                     {"adam_eps", c.adamw.eps},
                     {"weight_decay", c.adamw.weight_decay}};
}

void from_json(const nlohmann::json& j, InjectionConfig& c) {
  j.at("lr").get_to(c.lr);
  j.at("steps").get_to(c.steps);
  j.at("separate_batches").get_to(c.separate_batches);
  j.at("clip_norm").get_to(c.clip_norm);
  j.at("beta1").get_to(c.adamw.beta1);
  j.at("beta2").get_to(c.adamw.beta2);
  j.at("adam_eps").get_to(c.adamw.eps);
  j.at("weight_decay").get_to(c.adamw.weight_decay);
}

InjectionRun run_injection(Seq2SeqModel& model, const datagen::InjectionSet& set,
                           const std::vector<SentencePair>& valid, const InjectionConfig& config) {
  if (set.train.empty()) throw std::invalid_argument("injection: empty training set");
  InjectionRun run;
  run.config = config;
  run.pre_bleu = measure_bleu(model, valid);
  run.pre_acquisition = acquisition_score(model, set);

  std::vector<models::Batch> batches;
  if (config.separate_batches) {
    for (std::size_t c = 0; c < set.novel_sources.size(); ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < set.train.size(); ++i)
        if (set.train_concept[i] == c) idx.push_back(i);
      batches.push_back(models::make_batch(set.train, idx));
    }
  } else {
    batches.push_back(models::make_batch(set.train));
  }

  auto& params = model.params();
  training::OptimizerState opt(params, config.adamw);
  for (const auto& p : params) run.param_names.push_back(p->name);
  run.update_norms.assign(params.size(), 0.0);
  std::vector<std::vector<double>> before(params.size());

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto& batch = batches[step % batches.size()];
    autodiff::Tape tape;
    const auto loss = models::forward_loss(tape, model, batch);
    if (!std::isfinite(tape.value(loss).data[0])) throw std::runtime_error("non-finite injection loss");
    params.zero_grad();
    tape.backward(loss);
    training::clip_global_norm(params, config.clip_norm);
    for (std::size_t i = 0; i < params.size(); ++i) before[i] = params.get(i).value.data;
    training::adamw_step(params, opt, config.lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      double sq = 0.0;
      const auto& now = params.get(i).value.data;
      for (std::size_t k = 0; k < now.size(); ++k) sq += (now[k] - before[i][k]) * (now[k] - before[i][k]);
      run.update_norms[i] = std::max(run.update_norms[i], std::sqrt(sq));
    }
    ++model.steps_trained;
    ++run.steps_executed;
  }

  if (run.steps_executed == 0) {
    run.post_bleu = run.pre_bleu;
    run.post_acquisition = run.pre_acquisition;
  } else {
    run.post_bleu = measure_bleu(model, valid);
    run.post_acquisition = acquisition_score(model, set);
  }
  run.delta = stability_delta(run.pre_bleu, run.post_bleu);
  return run;
}

std::string injection_table(const std::vector<std::pair<std::string, InjectionRun>>& runs) {
  std::ostringstream out;
  out << "row";
  for (const auto& [label, r] : runs) out << ',' << label;
  out << '\n';
  char buf[96];
  out << "Updates";
  for (const auto& [label, r] : runs) out << ',' << r.steps_executed;
  out << "\nAcquisition";
  for (const auto& [label, r] : runs) {
    const auto& a = r.post_acquisition;
    std::snprintf(buf, sizeof buf, "%zu/%zu (%zu/%zu)", a.concepts_acquired(), a.concept_totals.size(), a.successes,
                  a.total);
    out << ',' << buf;
  }
  out << "\nPost-Inj BLEU";
  for (const auto& [label, r] : runs) {
    std::snprintf(buf, sizeof buf, "%.2f", r.post_bleu.bleu);
    out << ',' << buf;
  }
  out << "\nStability Delta";
  for (const auto& [label, r] : runs) {
    std::snprintf(buf, sizeof buf, "%+.2f", r.delta);
    out << ',' << buf;
  }
  out << '\n';
  return out.str();
}

std::string concept_breakdown(const InjectionRun& run, const datagen::InjectionSet& set) {
  std::ostringstream out;
  out << "concept,novel_id,mapped_id,pre_successes,post_successes,total\n";
  for (std::size_t c = 0; c < set.novel_sources.size(); ++c) {
    out << c << ',' << set.novel_sources[c] << ',' << set.mapped_targets[c] << ','
        << run.pre_acquisition.concept_successes.at(c) << ',' << run.post_acquisition.concept_successes.at(c) << ','
        << run.post_acquisition.concept_totals.at(c) << '\n';
  }
  return out.str();
}

}  // namespace prism::protocols
