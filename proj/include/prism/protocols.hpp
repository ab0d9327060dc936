#pragma once

// The two experiments: iterative semantic map refinement (train, extract the
// embedding map, transplant into a re-initialized model, retrain; plus a
// row-shuffled control) and few-shot concept injection with its
// acquisition / stability metrics.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/bleu.hpp"
#include "prism/datagen.hpp"
#include "prism/models.hpp"
#include "prism/training.hpp"

namespace prism::protocols {

using datagen::SentencePair;
using models::Seq2SeqModel;
using training::MetricsRecord;

struct DataConfig {
  std::size_t content_size = 200;
  std::size_t novel_count = 5;
  datagen::ReorderRule rule = datagen::ReorderRule::adjacent_swap;
  std::size_t min_len = 4;
  std::size_t max_len = 32;
  datagen::CorpusSizes sizes;
  std::uint64_t seed = 1;

  datagen::GrammarSpec grammar() const { return {rule, min_len, max_len}; }
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct TaskData {
  datagen::SyntheticLexicon lexicon;
  datagen::Corpus corpus;
  datagen::InjectionSet injection;
};

TaskData make_task(const DataConfig& config);

/// Copies vocabulary size, hash and source length bound from the task into the model config.
void bind_model_to_task(models::ModelConfig& model, const TaskData& task, const DataConfig& data);

// ---------------------------------------------------------------------------
// ISMR

struct IsmrRun {
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> baseline;
  std::vector<MetricsRecord> ismr;
  std::vector<MetricsRecord> ablation;
  models::SemanticMap map;       // E1
  models::SemanticMap shuffled;  // row permutation of E1
  bool transplant_exact = false;  // iteration-2 table equals E1 before training
};

/// Seed streams: iteration 1 initializes from `seed`; the re-initialized
/// reasoner (shared by the transplant and the control) from a derived
/// stream; batch order is identical across the three runs.
IsmrRun run_ismr(const training::TrainConfig& config, const TaskData& task, std::uint64_t seed,
                 models::MapTable table, const std::string& run_prefix, const training::MetricsSink& sink = {});

/// Rows: eval checkpoints. Columns: mean validation BLEU of each run, with
/// min/max bands when there is more than one seed.
std::string ismr_table(const std::vector<IsmrRun>& runs);

// ---------------------------------------------------------------------------
// Injection

struct AcquisitionResult {
  std::size_t successes = 0;
  std::size_t total = 0;
  std::vector<std::size_t> concept_successes;
  std::vector<std::size_t> concept_totals;
  std::size_t exact_matches = 0;

  double score() const { return total == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(total); }
  /// A concept counts as acquired when at least half of its probes succeed.
  std::size_t concepts_acquired() const;
};

/// Scores decoded outputs (EOS stripped) against the injection probes:
/// success iff the mapped target sits at the grammar-aligned position.
AcquisitionResult acquisition_from_outputs(const datagen::InjectionSet& set,
                                           const std::vector<std::vector<int>>& outputs);
AcquisitionResult acquisition_score(Seq2SeqModel& model, const datagen::InjectionSet& set);

struct BleuMeasurement {
  double bleu = 0.0;
  std::uint64_t split_hash = 0;
};

BleuMeasurement measure_bleu(Seq2SeqModel& model, const std::vector<SentencePair>& split);

/// post - pre in BLEU points; both must come from the same split.
double stability_delta(double pre_bleu, double post_bleu);
double stability_delta(const BleuMeasurement& pre, const BleuMeasurement& post);

struct InjectionConfig {
  double lr = 2e-4;
  std::size_t steps = 10;
  bool separate_batches = false;  // one concept per step instead of all 25 pairs
  double clip_norm = 1.0;
  training::AdamWConfig adamw;
};

void to_json(nlohmann::json& j, const InjectionConfig& c);
void from_json(const nlohmann::json& j, InjectionConfig& c);

struct InjectionRun {
  InjectionConfig config;
  std::size_t steps_executed = 0;
  BleuMeasurement pre_bleu;
  BleuMeasurement post_bleu;
  AcquisitionResult pre_acquisition;
  AcquisitionResult post_acquisition;
  std::vector<std::string> param_names;
  std::vector<double> update_norms;  // per parameter, largest single-step update norm
  double delta = 0.0;
};

/// Fine-tunes `model` in place on the injection pairs at constant lr.
InjectionRun run_injection(Seq2SeqModel& model, const datagen::InjectionSet& set,
                           const std::vector<SentencePair>& valid, const InjectionConfig& config);

/// Columns are the labelled runs; rows are Updates, Acquisition, Post-Inj BLEU, Stability Delta.
std::string injection_table(const std::vector<std::pair<std::string, InjectionRun>>& runs);
/// concept,novel_id,mapped_id,pre_successes,post_successes,total
std::string concept_breakdown(const InjectionRun& run, const datagen::InjectionSet& set);

}  // namespace prism::protocols
