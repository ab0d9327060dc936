#pragma once

// Encoder-decoder models: the attention baseline (tied embeddings) and the
// harmonic model (complex amplitude table + gated global convolutions,
// bridged into the same real decoder). Also batching, greedy decoding,
// parameter accounting, checkpoints and semantic-map transplant.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/autodiff.hpp"
#include "prism/datagen.hpp"
#include "prism/layers.hpp"

namespace prism::models {

using autodiff::Parameter;
using autodiff::ParameterSet;
using autodiff::Tape;
using autodiff::Var;
using layers::SeqLayout;
using numerics::RealTensor;

enum class Arch { baseline, prism };

Arch parse_arch(const std::string& name);
std::string arch_name(Arch arch);

struct ModelConfig {
  Arch arch = Arch::baseline;
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t ffn_mult = 4;          // real feed-forward width multiplier
  std::size_t complex_ffn_mult = 1;  // complex feed-forward width multiplier
  std::size_t max_src_len = 32;      // kernel length is the next power of two
  double embed_std = 0.02;
  double gate_bias_init = 2.0;
  double kernel_noise = 0.02;
  double omega_max = 1.0;
  double omega_ratio = 1e-4;
  std::uint64_t vocab_hash = 0;
  std::uint64_t seed = 0;

  std::size_t kernel_length() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Teacher-forcing batch. Rows are padded per SeqLayout; target positions
/// past the end carry -1 in tgt_out and are ignored by the loss.
struct Batch {
  SeqLayout src;
  std::vector<int> src_ids;
  SeqLayout tgt;
  std::vector<int> tgt_in;
  std::vector<int> tgt_out;

  std::size_t size() const { return src.batch; }
};

Batch make_batch(const std::vector<datagen::SentencePair>& pairs, const std::vector<std::size_t>& indices);
Batch make_batch(const std::vector<datagen::SentencePair>& pairs);

/// Which table a semantic map reads or replaces.
enum class MapTable { shared, amplitude, decoder };

MapTable parse_map_table(const std::string& name);
std::string map_table_name(MapTable t);

struct ParamReport {
  std::size_t embeddings = 0;
  std::size_t encoder = 0;
  std::size_t decoder = 0;
  std::size_t bridge = 0;
  std::size_t total = 0;
};

class Seq2SeqModel {
 public:
  virtual ~Seq2SeqModel() = default;
  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Re-draws every parameter from `seed`.
  void reset_parameters(std::uint64_t seed);

  /// Real-valued encoder memory [src rows, d].
  virtual Var encode(Tape& t, const std::vector<int>& src_ids, const SeqLayout& src) = 0;
  /// Logits [tgt rows, V].
  Var decode(Tape& t, Var memory, const SeqLayout& src, const std::vector<int>& tgt_in, const SeqLayout& tgt);

  virtual Parameter& table(MapTable which) = 0;
  virtual MapTable default_table() const = 0;

  std::uint64_t steps_trained = 0;

 protected:
  explicit Seq2SeqModel(ModelConfig config);

  enum class Init { normal, kaiming, complex_kaiming, zeros, ones, constant, delta_kernel };
  struct InitSpec {
    Init kind = Init::zeros;
    double value = 0.0;  // std for normal, fan-in for kaiming, constant value
  };

  std::size_t add(const std::string& name, numerics::Shape shape, InitSpec init, bool decay);
  Parameter& p(std::size_t index) { return params_.get(index); }
  void add_decoder();

  ModelConfig config_;
  ParameterSet params_;
  std::vector<InitSpec> init_;

  struct Attn {
    std::size_t ln_g, ln_b, wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct Ffn {
    std::size_t ln_g, ln_b, w1, b1, w2, b2;
  };
  struct DecoderBlock {
    Attn self_attn;
    Attn cross_attn;
    Ffn ffn;
  };

  Attn add_attention(const std::string& prefix);
  Ffn add_ffn(const std::string& prefix);
  Var attention_block(Tape& t, const Attn& a, Var x, const SeqLayout& xl, Var memory, const SeqLayout& ml,
                      bool causal);
  Var ffn_block(Tape& t, const Ffn& f, Var x);
  Var positions(Tape& t, const SeqLayout& layout) const;

  std::size_t dec_embed_ = 0;
  std::vector<DecoderBlock> dec_blocks_;
  std::size_t dec_ln_g_ = 0, dec_ln_b_ = 0;
};

class BaselineModel final : public Seq2SeqModel {
 public:
  explicit BaselineModel(ModelConfig config);
  Var encode(Tape& t, const std::vector<int>& src_ids, const SeqLayout& src) override;
  Parameter& table(MapTable which) override;
  MapTable default_table() const override { return MapTable::shared; }

 private:
  struct EncoderBlock {
    Attn attn;
    Ffn ffn;
  };
  std::vector<EncoderBlock> enc_blocks_;
  std::size_t enc_ln_g_ = 0, enc_ln_b_ = 0;
};

class PrismModel final : public Seq2SeqModel {
 public:
  explicit PrismModel(ModelConfig config);
  Var encode(Tape& t, const std::vector<int>& src_ids, const SeqLayout& src) override;
  Parameter& table(MapTable which) override;
  MapTable default_table() const override { return MapTable::amplitude; }
  const std::vector<double>& frequencies() const { return omega_; }

 private:
  struct GhcBlock {
    std::size_t gate_w, gate_b, kernel, act_b, ffn_w1, ffn_b, ffn_w2;
  };
  std::vector<double> omega_;
  std::size_t amplitude_ = 0;
  std::vector<GhcBlock> blocks_;
  std::size_t bridge_w_ = 0, bridge_b_ = 0;
};

std::unique_ptr<Seq2SeqModel> init_model(const ModelConfig& config);
std::unique_ptr<BaselineModel> init_baseline(const ModelConfig& config);
std::unique_ptr<PrismModel> init_prism(const ModelConfig& config);

/// Mean cross-entropy (nats/token) over non-pad target positions.
Var forward_loss(Tape& t, Seq2SeqModel& model, const Batch& batch);
double evaluate_loss(Seq2SeqModel& model, const std::vector<datagen::SentencePair>& pairs, std::size_t token_budget);

/// Greedy argmax decoding from BOS. Each result holds the generated tokens,
/// ending with EOS when one was produced within max_len.
std::vector<std::vector<int>> greedy_decode(Seq2SeqModel& model, const std::vector<std::vector<int>>& sources,
                                            std::size_t max_len);
std::vector<int> greedy_decode(Seq2SeqModel& model, const std::vector<int>& source, std::size_t max_len);
std::vector<int> strip_eos(std::vector<int> tokens);

ParamReport count_params(const Seq2SeqModel& model);

struct SemanticMap {
  RealTensor matrix;
  std::uint64_t vocab_hash = 0;
  std::uint64_t source_step = 0;
  std::uint64_t source_seed = 0;
  MapTable table = MapTable::shared;
};

SemanticMap extract_map(Seq2SeqModel& model, MapTable which);
SemanticMap extract_map(Seq2SeqModel& model);
void load_map(Seq2SeqModel& model, const SemanticMap& map, bool reinit_reasoner, std::uint64_t seed);
SemanticMap shuffle_map(const SemanticMap& map, std::uint64_t seed);

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> variance;  // population
  bool operator==(const ColumnStats&) const = default;
};

/// Per-column mean and variance of a [rows, cols] matrix. Each column is
/// summed in sorted order, so any row permutation gives identical bits.
ColumnStats column_stats(const RealTensor& matrix);

// Container: text header with one "name rank dims... offset" line per tensor,
// then little-endian float64 data.
void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel& model, const nlohmann::json& meta = {});
struct LoadedCheckpoint {
  std::unique_ptr<Seq2SeqModel> model;
  nlohmann::json meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

void save_map(const std::filesystem::path& path, const SemanticMap& map);
SemanticMap load_map_file(const std::filesystem::path& path);

}  // namespace prism::models
