#include "prism/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace prism::models {

namespace ad = prism::autodiff;
namespace ly = prism::layers;
using numerics::Shape;

Arch parse_arch(const std::string& name) {
  if (name == "baseline") return Arch::baseline;
  if (name == "prism") return Arch::prism;
  throw std::invalid_argument("unknown architecture: " + name);
}

std::string arch_name(Arch arch) { return arch == Arch::baseline ? "baseline" : "prism"; }

MapTable parse_map_table(const std::string& name) {
  if (name == "shared") return MapTable::shared;
  if (name == "amplitude") return MapTable::amplitude;
  if (name == "decoder") return MapTable::decoder;
  throw std::invalid_argument("unknown map table: " + name);
}

std::string map_table_name(MapTable t) {
  switch (t) {
    case MapTable::shared: return "shared";
    case MapTable::amplitude: return "amplitude";
    case MapTable::decoder: return "decoder";
  }
  return "shared";
}

std::size_t ModelConfig::kernel_length() const { return numerics::next_power_of_two(max_src_len); }

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (vocab_size <= static_cast<std::size_t>(datagen::kReservedCount)) fail("vocab_size must exceed the reserved ids");
  if (d_model == 0) fail("d_model must be positive");
  if (heads == 0 || d_model % heads != 0) fail("d_model must be divisible by heads");
  if (ffn_mult == 0 || complex_ffn_mult == 0) fail("feed-forward multipliers must be positive");
  if (max_src_len == 0) fail("max_src_len must be positive");
  if (!(embed_std > 0.0) || !(kernel_noise >= 0.0)) fail("bad init scales");
  if (!(omega_max > 0.0) || !(omega_ratio > 0.0)) fail("bad frequency schedule");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"arch", arch_name(c.arch)},
                     {"vocab_size", c.vocab_size},
                     {"d_model", c.d_model},
                     {"heads", c.heads},
                     {"enc_layers", c.enc_layers},
                     {"dec_layers", c.dec_layers},
                     {"ffn_mult", c.ffn_mult},
                     {"complex_ffn_mult", c.complex_ffn_mult},
                     {"max_src_len", c.max_src_len},
                     {"embed_std", c.embed_std},
                     {"gate_bias_init", c.gate_bias_init},
                     {"kernel_noise", c.kernel_noise},
                     {"omega_max", c.omega_max},
                     {"omega_ratio", c.omega_ratio},
                     {"vocab_hash", c.vocab_hash},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.arch = parse_arch(j.at("arch").get<std::string>());
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("d_model").get_to(c.d_model);
  j.at("heads").get_to(c.heads);
  j.at("enc_layers").get_to(c.enc_layers);
  j.at("dec_layers").get_to(c.dec_layers);
  j.at("ffn_mult").get_to(c.ffn_mult);
  j.at("complex_ffn_mult").get_to(c.complex_ffn_mult);
  j.at("max_src_len").get_to(c.max_src_len);
  j.at("embed_std").get_to(c.embed_std);
  j.at("gate_bias_init").get_to(c.gate_bias_init);
  j.at("kernel_noise").get_to(c.kernel_noise);
  j.at("omega_max").get_to(c.omega_max);
  j.at("omega_ratio").get_to(c.omega_ratio);
  j.at("vocab_hash").get_to(c.vocab_hash);
  j.at("seed").get_to(c.seed);
}

// ---------------------------------------------------------------------------
// Batching

Batch make_batch(const std::vector<datagen::SentencePair>& pairs, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  Batch b;
  std::size_t src_len = 0, tgt_len = 0;
  for (auto i : indices) {
    const auto& p = pairs.at(i);
    if (p.source.empty()) throw std::invalid_argument("make_batch: empty source");
    if (p.target.size() < 2) throw std::invalid_argument("make_batch: target needs BOS and at least one token");
    src_len = std::max(src_len, p.source.size());
    tgt_len = std::max(tgt_len, p.target.size() - 1);
  }
  b.src = {indices.size(), src_len, {}};
  b.tgt = {indices.size(), tgt_len, {}};
  b.src_ids.assign(b.src.rows(), datagen::kPad);
  b.tgt_in.assign(b.tgt.rows(), datagen::kPad);
  b.tgt_out.assign(b.tgt.rows(), -1);
  for (std::size_t s = 0; s < indices.size(); ++s) {
    const auto& p = pairs[indices[s]];
    b.src.valid.push_back(p.source.size());
    b.tgt.valid.push_back(p.target.size() - 1);
    std::copy(p.source.begin(), p.source.end(), b.src_ids.begin() + s * src_len);
    for (std::size_t t = 0; t + 1 < p.target.size(); ++t) {
      b.tgt_in[s * tgt_len + t] = p.target[t];
      b.tgt_out[s * tgt_len + t] = p.target[t + 1];
    }
  }
  return b;
}

Batch make_batch(const std::vector<datagen::SentencePair>& pairs) {
  std::vector<std::size_t> all(pairs.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(pairs, all);
}

// ---------------------------------------------------------------------------
// Model skeleton

Seq2SeqModel::Seq2SeqModel(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

std::size_t Seq2SeqModel::add(const std::string& name, Shape shape, InitSpec init, bool decay) {
  params_.add(name, RealTensor(std::move(shape), 0.0), decay);
  init_.push_back(init);
  return params_.size() - 1;
}

void Seq2SeqModel::reset_parameters(std::uint64_t seed) {
  config_.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& value = params_.get(i).value;
    auto& data = value.data;
    const auto& spec = init_[i];
    switch (spec.kind) {
      case Init::normal: {
        std::normal_distribution<double> n(0.0, spec.value);
        for (auto& x : data) x = n(rng);
        break;
      }
      case Init::kaiming:
      case Init::complex_kaiming: {
        // gain sqrt(5): bound = sqrt(6 / ((1 + 5) fan_in)) = 1 / sqrt(fan_in).
        double bound = 1.0 / std::sqrt(spec.value);
        if (spec.kind == Init::complex_kaiming) bound /= std::sqrt(2.0);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& x : data) x = u(rng);
        break;
      }
      case Init::zeros: std::fill(data.begin(), data.end(), 0.0); break;
      case Init::ones: std::fill(data.begin(), data.end(), 1.0); break;
      case Init::constant: std::fill(data.begin(), data.end(), spec.value); break;
      case Init::delta_kernel: {
        // time-domain kernel: 1 at lag 0, complex noise elsewhere; stored as its spectrum.
        const std::size_t d = value.shape.at(1), L = value.shape.at(2);
        std::normal_distribution<double> n(0.0, spec.value);
        numerics::FftPlan plan(L);
        std::vector<double> re(L), im(L);
        for (std::size_t j = 0; j < d; ++j) {
          re[0] = 1.0;
          im[0] = 0.0;
          for (std::size_t k = 1; k < L; ++k) {
            re[k] = n(rng);
            im[k] = n(rng);
          }
          plan.forward(re, im);
          std::copy(re.begin(), re.end(), data.begin() + j * L);
          std::copy(im.begin(), im.end(), data.begin() + (d + j) * L);
        }
        break;
      }
    }
  }
}

Seq2SeqModel::Attn Seq2SeqModel::add_attention(const std::string& prefix) {
  const auto d = config_.d_model;
  Attn a{};
  a.ln_g = add(prefix + ".ln.gamma", {d}, {Init::ones}, false);
  a.ln_b = add(prefix + ".ln.beta", {d}, {Init::zeros}, false);
  a.wq = add(prefix + ".wq", {d, d}, {Init::kaiming, double(d)}, true);
  a.bq = add(prefix + ".bq", {d}, {Init::zeros}, false);
  a.wk = add(prefix + ".wk", {d, d}, {Init::kaiming, double(d)}, true);
  a.bk = add(prefix + ".bk", {d}, {Init::zeros}, false);
  a.wv = add(prefix + ".wv", {d, d}, {Init::kaiming, double(d)}, true);
  a.bv = add(prefix + ".bv", {d}, {Init::zeros}, false);
  a.wo = add(prefix + ".wo", {d, d}, {Init::kaiming, double(d)}, true);
  a.bo = add(prefix + ".bo", {d}, {Init::zeros}, false);
  return a;
}

Seq2SeqModel::Ffn Seq2SeqModel::add_ffn(const std::string& prefix) {
  const auto d = config_.d_model;
  const auto h = d * config_.ffn_mult;
  Ffn f{};
  f.ln_g = add(prefix + ".ln.gamma", {d}, {Init::ones}, false);
  f.ln_b = add(prefix + ".ln.beta", {d}, {Init::zeros}, false);
  f.w1 = add(prefix + ".w1", {d, h}, {Init::kaiming, double(d)}, true);
  f.b1 = add(prefix + ".b1", {h}, {Init::zeros}, false);
  f.w2 = add(prefix + ".w2", {h, d}, {Init::kaiming, double(h)}, true);
  f.b2 = add(prefix + ".b2", {d}, {Init::zeros}, false);
  return f;
}

void Seq2SeqModel::add_decoder() {
  for (std::size_t l = 0; l < config_.dec_layers; ++l) {
    const auto pre = "dec." + std::to_string(l);
    DecoderBlock b{};
    b.self_attn = add_attention(pre + ".self");
    b.cross_attn = add_attention(pre + ".cross");
    b.ffn = add_ffn(pre + ".ffn");
    dec_blocks_.push_back(b);
  }
  dec_ln_g_ = add("dec.ln.gamma", {config_.d_model}, {Init::ones}, false);
  dec_ln_b_ = add("dec.ln.beta", {config_.d_model}, {Init::zeros}, false);
}

Var Seq2SeqModel::attention_block(Tape& t, const Attn& a, Var x, const SeqLayout& xl, Var memory,
                                  const SeqLayout& ml, bool causal) {
  const Var h = ly::layer_norm(t, x, t.param(p(a.ln_g)), t.param(p(a.ln_b)));
  const Var kv = memory.valid() ? memory : h;
  const Var q = ly::linear(t, h, t.param(p(a.wq)), t.param(p(a.bq)));
  const Var k = ly::linear(t, kv, t.param(p(a.wk)), t.param(p(a.bk)));
  const Var v = ly::linear(t, kv, t.param(p(a.wv)), t.param(p(a.bv)));
  const Var o = ly::attention(t, q, k, v, {config_.heads, xl, memory.valid() ? ml : xl, causal});
  return ad::add(t, x, ly::linear(t, o, t.param(p(a.wo)), t.param(p(a.bo))));
}

Var Seq2SeqModel::ffn_block(Tape& t, const Ffn& f, Var x) {
  const Var h = ly::layer_norm(t, x, t.param(p(f.ln_g)), t.param(p(f.ln_b)));
  const Var u = ly::relu(t, ly::linear(t, h, t.param(p(f.w1)), t.param(p(f.b1))));
  return ad::add(t, x, ly::linear(t, u, t.param(p(f.w2)), t.param(p(f.b2))));
}

// Sinusoidal positions, one row per (sequence, position).
Var Seq2SeqModel::positions(Tape& t, const SeqLayout& layout) const {
  const auto d = config_.d_model;
  RealTensor pe(Shape{layout.rows(), d}, 0.0);
  for (std::size_t r = 0; r < layout.rows(); ++r) {
    const double pos = static_cast<double>(r % layout.length);
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe.data[r * d + i] = std::sin(angle);
      if (i + 1 < d) pe.data[r * d + i + 1] = std::cos(angle);
    }
  }
  return t.constant(std::move(pe));
}

Var Seq2SeqModel::decode(Tape& t, Var memory, const SeqLayout& src, const std::vector<int>& tgt_in,
                         const SeqLayout& tgt) {
  const double s = std::sqrt(static_cast<double>(config_.d_model));
  Var y = ad::add(t, ly::embedding(t, t.param(p(dec_embed_)), tgt_in, s), positions(t, tgt));
  for (const auto& b : dec_blocks_) {
    y = attention_block(t, b.self_attn, y, tgt, Var{}, tgt, true);
    y = attention_block(t, b.cross_attn, y, tgt, memory, src, false);
    y = ffn_block(t, b.ffn, y);
  }
  y = ly::layer_norm(t, y, t.param(p(dec_ln_g_)), t.param(p(dec_ln_b_)));
  return ly::linear_transposed(t, y, t.param(p(dec_embed_)));
}

// ---------------------------------------------------------------------------
// Baseline

BaselineModel::BaselineModel(ModelConfig config) : Seq2SeqModel(std::move(config)) {
  const auto d = config_.d_model;
  dec_embed_ = add("embed.shared", {config_.vocab_size, d}, {Init::normal, config_.embed_std}, false);
  for (std::size_t l = 0; l < config_.enc_layers; ++l) {
    const auto pre = "enc." + std::to_string(l);
    enc_blocks_.push_back({add_attention(pre + ".attn"), add_ffn(pre + ".ffn")});
  }
  enc_ln_g_ = add("enc.ln.gamma", {d}, {Init::ones}, false);
  enc_ln_b_ = add("enc.ln.beta", {d}, {Init::zeros}, false);
  add_decoder();
  reset_parameters(config_.seed);
}

Var BaselineModel::encode(Tape& t, const std::vector<int>& src_ids, const SeqLayout& src) {
  const double s = std::sqrt(static_cast<double>(config_.d_model));
  Var x = ad::add(t, ly::embedding(t, t.param(p(dec_embed_)), src_ids, s), positions(t, src));
  for (const auto& b : enc_blocks_) {
    x = attention_block(t, b.attn, x, src, Var{}, src, false);
    x = ffn_block(t, b.ffn, x);
  }
  return ly::layer_norm(t, x, t.param(p(enc_ln_g_)), t.param(p(enc_ln_b_)));
}

Parameter& BaselineModel::table(MapTable which) {
  if (which == MapTable::amplitude) throw std::invalid_argument("baseline model has no amplitude table");
  return p(dec_embed_);
}

// ---------------------------------------------------------------------------
// Harmonic model

PrismModel::PrismModel(ModelConfig config) : Seq2SeqModel(std::move(config)) {
  const auto d = config_.d_model;
  const auto L = config_.kernel_length();
  const auto h = d * config_.complex_ffn_mult;
  omega_ = ly::harmonic_frequencies(d, config_.omega_max, config_.omega_ratio);
  amplitude_ = add("embed.amplitude", {config_.vocab_size, d}, {Init::normal, config_.embed_std}, false);
  dec_embed_ = add("embed.decoder", {config_.vocab_size, d}, {Init::normal, config_.embed_std}, false);
  for (std::size_t l = 0; l < config_.enc_layers; ++l) {
    const auto pre = "enc." + std::to_string(l);
    GhcBlock b{};
    b.gate_w = add(pre + ".gate.weight", {2 * d, d}, {Init::kaiming, double(2 * d)}, true);
    b.gate_b = add(pre + ".gate.bias", {d}, {Init::constant, config_.gate_bias_init}, false);
    b.kernel = add(pre + ".kernel", {2, d, L}, {Init::delta_kernel, config_.kernel_noise}, false);
    b.act_b = add(pre + ".act.bias", {d}, {Init::zeros}, false);
    b.ffn_w1 = add(pre + ".ffn.w1", {2, d, h}, {Init::complex_kaiming, double(d)}, true);
    b.ffn_b = add(pre + ".ffn.act.bias", {h}, {Init::zeros}, false);
    b.ffn_w2 = add(pre + ".ffn.w2", {2, h, d}, {Init::complex_kaiming, double(h)}, true);
    blocks_.push_back(b);
  }
  bridge_w_ = add("bridge.weight", {2 * d, d}, {Init::kaiming, double(2 * d)}, true);
  bridge_b_ = add("bridge.bias", {d}, {Init::zeros}, false);
  add_decoder();
  reset_parameters(config_.seed);
}

Var PrismModel::encode(Tape& t, const std::vector<int>& src_ids, const SeqLayout& src) {
  if (src.length > config_.kernel_length()) throw std::invalid_argument("source longer than the kernel length");
  const double s = std::sqrt(static_cast<double>(config_.d_model));
  Var z = ly::harmonic_embed(t, t.param(p(amplitude_)), src_ids, src, omega_, s);
  for (const auto& b : blocks_) {
    Var u = ly::complex_rms_norm(t, z);
    u = ly::spectral_gate(t, u, t.param(p(b.gate_w)), t.param(p(b.gate_b)));
    u = ly::ghc(t, u, t.param(p(b.kernel)), src);
    u = ly::modrelu(t, u, t.param(p(b.act_b)));
    z = ad::add(t, z, u);
    Var v = ly::complex_rms_norm(t, z);
    v = ly::complex_linear(t, v, t.param(p(b.ffn_w1)));
    v = ly::modrelu(t, v, t.param(p(b.ffn_b)));
    v = ly::complex_linear(t, v, t.param(p(b.ffn_w2)));
    z = ad::add(t, z, v);
  }
  const Var f = ly::complex_features(t, ly::complex_rms_norm(t, z));
  return ly::linear(t, f, t.param(p(bridge_w_)), t.param(p(bridge_b_)));
}

Parameter& PrismModel::table(MapTable which) {
  switch (which) {
    case MapTable::amplitude: return p(amplitude_);
    case MapTable::decoder: return p(dec_embed_);
    case MapTable::shared: break;
  }
  throw std::invalid_argument("harmonic model has no shared table; choose amplitude or decoder");
}

std::unique_ptr<BaselineModel> init_baseline(const ModelConfig& config) {
  auto c = config;
  c.arch = Arch::baseline;
  return std::make_unique<BaselineModel>(c);
}

std::unique_ptr<PrismModel> init_prism(const ModelConfig& config) {
  auto c = config;
  c.arch = Arch::prism;
  return std::make_unique<PrismModel>(c);
}

std::unique_ptr<Seq2SeqModel> init_model(const ModelConfig& config) {
  if (config.arch == Arch::baseline) return init_baseline(config);
  return init_prism(config);
}

// ---------------------------------------------------------------------------
// Loss and decoding

Var forward_loss(Tape& t, Seq2SeqModel& model, const Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("forward_loss: empty batch");
  const Var memory = model.encode(t, batch.src_ids, batch.src);
  const Var logits = model.decode(t, memory, batch.src, batch.tgt_in, batch.tgt);
  return ly::cross_entropy(t, logits, batch.tgt_out);
}

double evaluate_loss(Seq2SeqModel& model, const std::vector<datagen::SentencePair>& pairs, std::size_t token_budget) {
  if (pairs.empty()) throw std::invalid_argument("evaluate_loss: no pairs");
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& bucket : datagen::make_buckets(pairs, token_budget, 4)) {
    for (const auto& idx : bucket.batches) {
      const auto batch = make_batch(pairs, idx);
      Tape t(false);
      const double loss = t.value(forward_loss(t, model, batch)).data[0];
      const auto n = static_cast<std::size_t>(std::count_if(batch.tgt_out.begin(), batch.tgt_out.end(),
                                                            [](int x) { return x >= 0; }));
      total += loss * static_cast<double>(n);
      tokens += n;
    }
  }
  return total / static_cast<double>(tokens);
}

std::vector<std::vector<int>> greedy_decode(Seq2SeqModel& model, const std::vector<std::vector<int>>& sources,
                                            std::size_t max_len) {
  std::vector<std::vector<int>> out(sources.size());
  if (sources.empty() || max_len == 0) return out;
  const std::size_t B = sources.size();
  SeqLayout src{B, 0, {}};
  for (const auto& s : sources) {
    if (s.empty()) throw std::invalid_argument("greedy_decode: empty source");
    src.length = std::max(src.length, s.size());
    src.valid.push_back(s.size());
  }
  std::vector<int> src_ids(src.rows(), datagen::kPad);
  for (std::size_t b = 0; b < B; ++b) std::copy(sources[b].begin(), sources[b].end(), src_ids.begin() + b * src.length);

  Tape t(false);
  const Var memory = model.encode(t, src_ids, src);
  const std::size_t mark = t.size();
  std::vector<std::vector<int>> prefix(B, std::vector<int>{datagen::kBos});
  std::vector<bool> done(B, false);
  const std::size_t V = model.config().vocab_size;

  for (std::size_t step = 0; step < max_len; ++step) {
    const std::size_t n = step + 1;
    SeqLayout tgt{B, n, std::vector<std::size_t>(B, n)};
    std::vector<int> ids(tgt.rows());
    for (std::size_t b = 0; b < B; ++b) std::copy(prefix[b].begin(), prefix[b].end(), ids.begin() + b * n);
    const auto& logits = t.value(model.decode(t, memory, src, ids, tgt)).data;
    bool all_done = true;
    for (std::size_t b = 0; b < B; ++b) {
      if (done[b]) continue;
      const double* row = logits.data() + ((b * n) + step) * V;
      const int next = static_cast<int>(std::max_element(row, row + V) - row);
      prefix[b].push_back(next);
      out[b].push_back(next);
      if (next == datagen::kEos) done[b] = true;
      all_done = all_done && done[b];
    }
    t.truncate(mark);
    if (all_done) break;
    // finished rows keep decoding harmlessly; pad them so prefixes stay rectangular
    for (std::size_t b = 0; b < B; ++b)
      if (prefix[b].size() < n + 1) prefix[b].push_back(datagen::kEos);
  }
  return out;
}

std::vector<int> greedy_decode(Seq2SeqModel& model, const std::vector<int>& source, std::size_t max_len) {
  return greedy_decode(model, std::vector<std::vector<int>>{source}, max_len).front();
}

std::vector<int> strip_eos(std::vector<int> tokens) {
  const auto it = std::find(tokens.begin(), tokens.end(), datagen::kEos);
  tokens.erase(it, tokens.end());
  return tokens;
}

ParamReport count_params(const Seq2SeqModel& model) {
  ParamReport r;
  for (const auto& p : model.params()) {
    const auto n = p->value.size();
    const auto& name = p->name;
    if (name.starts_with("embed.")) r.embeddings += n;
    else if (name.starts_with("enc.")) r.encoder += n;
    else if (name.starts_with("dec.")) r.decoder += n;
    else if (name.starts_with("bridge.")) r.bridge += n;
    else throw std::logic_error("parameter outside every component: " + name);
  }
  r.total = r.embeddings + r.encoder + r.decoder + r.bridge;
  return r;
}

// ---------------------------------------------------------------------------
// Semantic maps

SemanticMap extract_map(Seq2SeqModel& model, MapTable which) {
  SemanticMap m;
  m.matrix = model.table(which).value;
  m.vocab_hash = model.config().vocab_hash;
  m.source_step = model.steps_trained;
  m.source_seed = model.config().seed;
  m.table = which;
  return m;
}

SemanticMap extract_map(Seq2SeqModel& model) { return extract_map(model, model.default_table()); }

void load_map(Seq2SeqModel& model, const SemanticMap& map, bool reinit_reasoner, std::uint64_t seed) {
  if (map.vocab_hash != model.config().vocab_hash) throw std::invalid_argument("semantic map: vocabulary hash mismatch");
  const MapTable which = map.table == MapTable::shared ? model.default_table() : map.table;
  auto& target = model.table(which);
  if (target.value.shape != map.matrix.shape) throw std::invalid_argument("semantic map: shape mismatch");
  if (reinit_reasoner) {
    model.reset_parameters(seed);
    model.steps_trained = 0;
  }
  target.value = map.matrix;
}

SemanticMap shuffle_map(const SemanticMap& map, std::uint64_t seed) {
  const auto V = map.matrix.shape.at(0), d = map.matrix.shape.at(1);
  std::vector<std::size_t> perm(V);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  SemanticMap out = map;
  for (std::size_t r = 0; r < V; ++r)
    std::copy_n(map.matrix.data.begin() + perm[r] * d, d, out.matrix.data.begin() + r * d);
  return out;
}

ColumnStats column_stats(const RealTensor& matrix) {
  if (matrix.shape.size() != 2 || matrix.shape[0] == 0) throw std::invalid_argument("column_stats: need a non-empty matrix");
  const auto rows = matrix.shape[0], cols = matrix.shape[1];
  ColumnStats s;
  std::vector<double> col(rows);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t r = 0; r < rows; ++r) col[r] = matrix.data[r * cols + j];
    std::sort(col.begin(), col.end());
    double mean = 0.0;
    for (double x : col) mean += x;
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (double x : col) var += (x - mean) * (x - mean);
    s.mean.push_back(mean);
    s.variance.push_back(var / static_cast<double>(rows));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Container IO

namespace {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

constexpr const char* kMagic = "PRISMCKPT 1";

struct Entry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

void write_container(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const RealTensor*>>& tensors) {
  std::ostringstream header;
  header << kMagic << '\n' << "kind " << kind << '\n' << "meta " << meta.dump() << '\n';
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header << "tensor " << name << ' ' << t->shape.size();
    for (auto s : t->shape) header << ' ' << s;
    header << ' ' << offset << '\n';
    offset += t->size() * sizeof(double);
  }
  header << "end_header\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  const auto h = header.str();
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t->data.data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
  if (!f) throw std::runtime_error("short write to " + path.string());
}

struct Container {
  std::string kind;
  nlohmann::json meta;
  std::vector<Entry> entries;
  std::vector<char> data;

  RealTensor tensor(const Entry& e) const {
    RealTensor t(e.shape, 0.0);
    const auto bytes = t.size() * sizeof(double);
    if (e.offset + bytes > data.size()) throw std::runtime_error("container: tensor " + e.name + " out of range");
    std::memcpy(t.data.data(), data.data() + e.offset, bytes);
    return t;
  }
};

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != kMagic) throw std::runtime_error(path.string() + ": not a model container");
  Container c;
  while (std::getline(f, line) && line != "end_header") {
    std::istringstream in(line);
    std::string key;
    in >> key;
    if (key == "kind") {
      in >> c.kind;
    } else if (key == "meta") {
      c.meta = nlohmann::json::parse(line.substr(5));
    } else if (key == "tensor") {
      Entry e;
      std::size_t rank = 0;
      in >> e.name >> rank;
      e.shape.resize(rank);
      for (auto& s : e.shape) in >> s;
      in >> e.offset;
      if (!in) throw std::runtime_error(path.string() + ": malformed tensor line");
      c.entries.push_back(std::move(e));
    } else {
      throw std::runtime_error(path.string() + ": unknown header key " + key);
    }
  }
  if (line != "end_header") throw std::runtime_error(path.string() + ": truncated header");
  c.data.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel& model, const nlohmann::json& meta) {
  nlohmann::json m = {{"config", model.config()}, {"steps_trained", model.steps_trained}, {"extra", meta}};
  std::vector<std::pair<std::string, const RealTensor*>> tensors;
  for (const auto& p : model.params()) tensors.emplace_back(p->name, &p->value);
  write_container(path, "checkpoint", m, tensors);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.kind != "checkpoint") throw std::runtime_error(path.string() + ": expected a checkpoint, found " + c.kind);
  LoadedCheckpoint out;
  out.model = init_model(c.meta.at("config").get<ModelConfig>());
  out.model->steps_trained = c.meta.at("steps_trained").get<std::uint64_t>();
  out.meta = c.meta.at("extra");
  auto& params = out.model->params();
  if (c.entries.size() != params.size()) throw std::runtime_error(path.string() + ": parameter count mismatch");
  for (const auto& e : c.entries) {
    auto* p = params.find(e.name);
    if (p == nullptr || p->value.shape != e.shape) throw std::runtime_error(path.string() + ": unexpected tensor " + e.name);
    p->value = c.tensor(e);
  }
  return out;
}

void save_map(const std::filesystem::path& path, const SemanticMap& map) {
  const nlohmann::json meta = {{"vocab_hash", map.vocab_hash},
                               {"source_step", map.source_step},
                               {"source_seed", map.source_seed},
                               {"table", map_table_name(map.table)}};
  write_container(path, "semantic_map", meta, {{"matrix", &map.matrix}});
}

SemanticMap load_map_file(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.kind != "semantic_map") throw std::runtime_error(path.string() + ": expected a semantic map, found " + c.kind);
  if (c.entries.size() != 1 || c.entries[0].name != "matrix" || c.entries[0].shape.size() != 2)
    throw std::runtime_error(path.string() + ": malformed semantic map");
  SemanticMap m;
  m.matrix = c.tensor(c.entries[0]);
  m.vocab_hash = c.meta.at("vocab_hash").get<std::uint64_t>();
  m.source_step = c.meta.at("source_step").get<std::uint64_t>();
  m.source_seed = c.meta.at("source_seed").get<std::uint64_t>();
  m.table = parse_map_table(c.meta.at("table").get<std::string>());
  return m;
}

}  // namespace prism::models
