#pragma once

// AdamW, warmup + cosine schedule, global-norm clipping and the bucketed
// training loop with periodic validation (loss and greedy-decode BLEU).

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/datagen.hpp"
#include "prism/models.hpp"

namespace prism::training {

using autodiff::ParameterSet;
using datagen::SentencePair;
using models::Seq2SeqModel;

struct Schedule {
  double peak_lr = 1e-4;
  std::size_t warmup_steps = 120;
  std::size_t total_steps = 1200;
  double floor_lr = 1e-6;
};

/// Linear ramp from 0 at step 0 to peak at warmup, then cosine to floor at total.
double lr_at(const Schedule& s, std::size_t step);

struct ClipResult {
  double norm = 0.0;   // global L2 norm before clipping
  double scale = 1.0;  // factor applied to every gradient
};

/// Throws std::domain_error naming the first parameter with a non-finite gradient.
ClipResult clip_global_norm(ParameterSet& params, double max_norm = 1.0);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdamWConfig hp;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  OptimizerState(const ParameterSet& params, AdamWConfig config);
};

/// One AdamW update over trainable parameters. Decay (p -= lr * lambda * p)
/// applies only to parameters flagged for it, separately from the Adam step.
void adamw_step(ParameterSet& params, OptimizerState& state, double lr);

struct TrainConfig {
  models::ModelConfig model;
  std::vector<std::uint64_t> seeds{115, 116, 117, 118};
  std::size_t steps = 1200;
  std::vector<std::size_t> eval_steps{200, 400, 800};
  std::size_t token_budget = 2000;
  std::size_t bucket_width = 4;
  double clip_norm = 1.0;
  double peak_lr = 1e-4;
  std::size_t warmup_steps = 120;
  double floor_ratio = 0.01;
  AdamWConfig adamw;
  std::size_t eval_sentences = 0;  // validation pairs decoded for BLEU; 0 = all

  Schedule schedule() const;
  void validate() const;
};

/// Named hyperparameter presets: "ismr" (peak 1e-4) and "marathon" (peak 8e-4); both warm up for 120 steps.
void apply_preset(TrainConfig& config, const std::string& preset);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct MetricsRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  std::string split;
  double loss = 0.0;
  std::optional<double> bleu;
  double lr = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  std::optional<double> acquisition;
  std::optional<double> stability_delta;
};

void to_json(nlohmann::json& j, const MetricsRecord& r);
void from_json(const nlohmann::json& j, MetricsRecord& r);

using MetricsSink = std::function<void(const MetricsRecord&)>;

struct Evaluation {
  double loss = 0.0;
  double bleu = 0.0;
};

/// Validation loss over all pairs and BLEU over the first `sentences` (0 = all).
Evaluation evaluate(Seq2SeqModel& model, const std::vector<SentencePair>& pairs, std::size_t token_budget,
                    std::size_t sentences = 0);
/// Greedy decodes with EOS stripped; references are targets without BOS/EOS.
std::vector<std::vector<int>> decode_all(Seq2SeqModel& model, const std::vector<SentencePair>& pairs);
std::vector<int> reference_of(const SentencePair& pair);

struct TrainResult {
  std::vector<MetricsRecord> records;
  double last_train_loss = 0.0;
  double max_clipped_norm = 0.0;  // largest post-clip global norm seen
};

/// Runs config.steps optimizer steps. Batch order is drawn from `seed`;
/// model initialization is the caller's business. Emits one "valid" record
/// per eval step and a closing "final" record.
TrainResult train(Seq2SeqModel& model, const std::vector<SentencePair>& train_pairs,
                  const std::vector<SentencePair>& valid_pairs, const TrainConfig& config, std::uint64_t seed,
                  const std::string& run_id, const MetricsSink& sink = {});

}  // namespace prism::training
