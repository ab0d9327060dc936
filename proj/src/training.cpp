#include "prism/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "prism/bleu.hpp"
#include "prism/util.hpp"

namespace prism::training {

double lr_at(const Schedule& s, std::size_t step) {
  if (step < s.warmup_steps) return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (s.total_steps <= s.warmup_steps) return s.peak_lr;
  const double progress = std::min(
      1.0, static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps));
  return s.floor_lr + (s.peak_lr - s.floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

ClipResult clip_global_norm(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p->trainable) continue;
    for (double g : p->grad) {
      if (!std::isfinite(g)) throw std::domain_error("non-finite gradient in parameter " + p->name);
      sq += g * g;
    }
  }
  ClipResult r;
  r.norm = std::sqrt(sq);
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (auto& p : params) {
      if (!p->trainable) continue;
      for (double& g : p->grad) g *= r.scale;
    }
  }
  return r;
}

OptimizerState::OptimizerState(const ParameterSet& params, AdamWConfig config) : hp(config) {
  for (const auto& p : params) {
    m.emplace_back(p->value.size(), 0.0);
    v.emplace_back(p->value.size(), 0.0);
  }
}

void adamw_step(ParameterSet& params, OptimizerState& state, double lr) {
  if (state.m.size() != params.size()) throw std::logic_error("optimizer state does not match the parameter set");
  ++state.step;
  const auto& hp = state.hp;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.get(i);
    if (!p.trainable) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& w = p.value.data;
    const double decay = p.decay ? lr * hp.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = p.grad[k];
      m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g;
      v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g * g;
      const double update = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + hp.eps);
      w[k] -= decay * w[k];
      w[k] -= update;
      if (!std::isfinite(w[k])) throw std::domain_error("non-finite update in parameter " + p.name);
    }
  }
}

// ---------------------------------------------------------------------------

Schedule TrainConfig::schedule() const { return {peak_lr, warmup_steps, steps, peak_lr * floor_ratio}; }

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (seeds.empty()) fail("at least one seed is required");
  if (!std::is_sorted(eval_steps.begin(), eval_steps.end())) fail("eval_steps must be ascending");
  if (!eval_steps.empty() && eval_steps.back() > steps) fail("eval step beyond the step budget");
  if (token_budget == 0 || bucket_width == 0) fail("token_budget and bucket_width must be positive");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (!(peak_lr >= 0.0) || !(floor_ratio >= 0.0 && floor_ratio <= 1.0)) fail("bad learning-rate settings");
  model.validate();
}

void apply_preset(TrainConfig& config, const std::string& preset) {
  if (preset == "ismr") {
    config.peak_lr = 1e-4;
    config.warmup_steps = 120;
  } else if (preset == "marathon") {
    config.peak_lr = 8e-4;
    config.warmup_steps = 120;
  } else {
    throw std::invalid_argument("unknown preset: " + preset);
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"seeds", c.seeds},
                     {"steps", c.steps},
                     {"eval_steps", c.eval_steps},
                     {"token_budget", c.token_budget},
                     {"bucket_width", c.bucket_width},
                     {"clip_norm", c.clip_norm},
                     {"peak_lr", c.peak_lr},
                     {"warmup_steps", c.warmup_steps},
                     {"floor_ratio", c.floor_ratio},
                     {"beta1", c.adamw.beta1},
                     {"beta2", c.adamw.beta2},
                     {"adam_eps", c.adamw.eps},
                     {"weight_decay", c.adamw.weight_decay},
                     {"eval_sentences", c.eval_sentences}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("model").get_to(c.model);
  j.at("seeds").get_to(c.seeds);
  j.at("steps").get_to(c.steps);
  j.at("eval_steps").get_to(c.eval_steps);
  j.at("token_budget").get_to(c.token_budget);
  j.at("bucket_width").get_to(c.bucket_width);
  j.at("clip_norm").get_to(c.clip_norm);
  j.at("peak_lr").get_to(c.peak_lr);
  j.at("warmup_steps").get_to(c.warmup_steps);
  j.at("floor_ratio").get_to(c.floor_ratio);
  j.at("beta1").get_to(c.adamw.beta1);
  j.at("beta2").get_to(c.adamw.beta2);
  j.at("adam_eps").get_to(c.adamw.eps);
  j.at("weight_decay").get_to(c.adamw.weight_decay);
  j.at("eval_sentences").get_to(c.eval_sentences);
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const MetricsRecord& r) {
  j = nlohmann::json{{"run_id", r.run_id},
                     {"seed", r.seed},
                     {"step", r.step},
                     {"split", r.split},
                     {"loss", r.loss},
                     {"bleu", optional_json(r.bleu)},
                     {"lr", r.lr},
                     {"grad_norm", r.grad_norm},
                     {"wall_ms", r.wall_ms},
                     {"acquisition", optional_json(r.acquisition)},
                     {"stability_delta", optional_json(r.stability_delta)}};
}

void from_json(const nlohmann::json& j, MetricsRecord& r) {
  j.at("run_id").get_to(r.run_id);
  j.at("seed").get_to(r.seed);
  j.at("step").get_to(r.step);
  j.at("split").get_to(r.split);
  j.at("loss").get_to(r.loss);
  r.bleu = optional_from(j, "bleu");
  j.at("lr").get_to(r.lr);
  j.at("grad_norm").get_to(r.grad_norm);
  j.at("wall_ms").get_to(r.wall_ms);
  r.acquisition = optional_from(j, "acquisition");
  r.stability_delta = optional_from(j, "stability_delta");
}

// ---------------------------------------------------------------------------

std::vector<int> reference_of(const SentencePair& pair) {
  std::vector<int> ref;
  for (int id : pair.target)
    if (id != datagen::kBos && id != datagen::kEos) ref.push_back(id);
  return ref;
}

std::vector<std::vector<int>> decode_all(Seq2SeqModel& model, const std::vector<SentencePair>& pairs) {
  constexpr std::size_t kChunk = 64;
  std::vector<std::vector<int>> out;
  out.reserve(pairs.size());
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const auto end = std::min(pairs.size(), start + kChunk);
    std::vector<std::vector<int>> sources;
    std::size_t longest = 0;
    for (std::size_t i = start; i < end; ++i) {
      sources.push_back(pairs[i].source);
      longest = std::max(longest, pairs[i].source.size());
    }
    for (auto& hyp : models::greedy_decode(model, sources, longest + 2)) out.push_back(models::strip_eos(std::move(hyp)));
  }
  return out;
}

Evaluation evaluate(Seq2SeqModel& model, const std::vector<SentencePair>& pairs, std::size_t token_budget,
                    std::size_t sentences) {
  Evaluation e;
  e.loss = models::evaluate_loss(model, pairs, token_budget);
  const std::size_t n = sentences == 0 ? pairs.size() : std::min(sentences, pairs.size());
  const std::vector<SentencePair> subset(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<std::vector<int>> refs;
  for (const auto& p : subset) refs.push_back(reference_of(p));
  e.bleu = protocols::bleu_corpus(decode_all(model, subset), refs);
  return e;
}

TrainResult train(Seq2SeqModel& model, const std::vector<SentencePair>& train_pairs,
                  const std::vector<SentencePair>& valid_pairs, const TrainConfig& config, std::uint64_t seed,
                  const std::string& run_id, const MetricsSink& sink) {
  if (train_pairs.empty()) throw std::invalid_argument("train: empty training split");
  const auto schedule = config.schedule();
  auto& params = model.params();
  OptimizerState opt(params, config.adamw);

  std::vector<models::Batch> batches;
  for (const auto& bucket : datagen::make_buckets(train_pairs, config.token_budget, config.bucket_width))
    for (const auto& idx : bucket.batches) batches.push_back(models::make_batch(train_pairs, idx));
  std::vector<std::size_t> order(batches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 20));
  std::size_t cursor = order.size();

  const auto started = std::chrono::steady_clock::now();
  TrainResult result;
  double lr = 0.0, grad_norm = 0.0;
  std::optional<Evaluation> last_eval;

  auto emit = [&](std::size_t step, const std::string& split, const Evaluation& e) {
    MetricsRecord r;
    r.run_id = run_id;
    r.seed = seed;
    r.step = step;
    r.split = split;
    r.loss = e.loss;
    r.bleu = e.bleu;
    r.lr = lr;
    r.grad_norm = grad_norm;
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    result.records.push_back(r);
    if (sink) sink(r);
  };

  auto next_eval = config.eval_steps.begin();
  for (std::size_t step = 1; step <= config.steps; ++step) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto& batch = batches[order[cursor++]];
    autodiff::Tape tape;
    const auto loss = models::forward_loss(tape, model, batch);
    const double loss_value = tape.value(loss).data[0];
    if (!std::isfinite(loss_value))
      throw std::runtime_error("non-finite training loss at step " + std::to_string(step) + " (seed " +
                               std::to_string(seed) + ")");
    params.zero_grad();
    tape.backward(loss);
    const auto clip = clip_global_norm(params, config.clip_norm);
    grad_norm = clip.norm;
    result.max_clipped_norm = std::max(result.max_clipped_norm, clip.norm * clip.scale);
    lr = lr_at(schedule, step);
    adamw_step(params, opt, lr);
    ++model.steps_trained;
    result.last_train_loss = loss_value;

    last_eval.reset();
    while (next_eval != config.eval_steps.end() && *next_eval == step) {
      if (!last_eval) last_eval = evaluate(model, valid_pairs, config.token_budget, config.eval_sentences);
      emit(step, "valid", *last_eval);
      ++next_eval;
    }
  }
  if (!last_eval) last_eval = evaluate(model, valid_pairs, config.token_budget, config.eval_sentences);
  emit(config.steps, "final", *last_eval);
  return result;
}

}  // namespace prism::training
