#pragma once

// Synthetic bilingual corpus: a random source->target lexicon plus a
// deterministic word-order rule, length-banded batching, and the novel
// concept injection sets.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace prism::datagen {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kReservedCount = 4;

enum class ReorderRule { identity, adjacent_swap, block_reverse };

ReorderRule parse_rule(const std::string& name);
std::string rule_name(ReorderRule rule);

/// order[j] is the source position emitted at target position j.
std::vector<std::size_t> target_order(ReorderRule rule, std::size_t length);
/// Inverse of target_order: where source position i lands in the target.
std::vector<std::size_t> aligned_positions(ReorderRule rule, std::size_t length);

struct GrammarSpec {
  ReorderRule rule = ReorderRule::adjacent_swap;
  std::size_t min_len = 4;
  std::size_t max_len = 32;
};

/// Token layout: reserved ids, then source content ids, then target content
/// ids, then the novel source ids held back for injection.
class SyntheticLexicon {
 public:
  static SyntheticLexicon build(std::size_t content_size, std::size_t novel_count, std::uint64_t seed);

  std::size_t content_size() const { return content_; }
  std::size_t vocab_size() const { return kReservedCount + 2 * content_ + novel_.size(); }

  int source_id(std::size_t i) const { return kReservedCount + static_cast<int>(i); }
  int target_id(std::size_t i) const { return kReservedCount + static_cast<int>(content_ + i); }
  const std::vector<int>& novel_ids() const { return novel_; }

  bool is_content_source(int id) const;
  bool is_novel(int id) const;

  /// Source (content or novel) -> target token.
  int map(int source) const;
  /// Target content token -> its content source token.
  int unmap(int target) const;

  std::string surface(int id) const;
  std::uint64_t hash() const;

 private:
  std::size_t content_ = 0;
  std::vector<std::size_t> forward_;  // content index -> target content index
  std::vector<std::size_t> inverse_;
  std::vector<int> novel_;
  std::vector<int> novel_targets_;
};

struct SentencePair {
  std::vector<int> source;  // content tokens only
  std::vector<int> target;  // BOS, mapped tokens in target order, EOS

  bool operator==(const SentencePair&) const = default;
};

SentencePair make_pair(const SyntheticLexicon& lex, ReorderRule rule, std::vector<int> source);

struct CorpusSizes {
  std::size_t train = 8000;
  std::size_t valid = 500;
  std::size_t test = 500;
};

struct Corpus {
  std::vector<SentencePair> train;
  std::vector<SentencePair> valid;
  std::vector<SentencePair> test;
};

Corpus gen_corpus(const SyntheticLexicon& lex, const GrammarSpec& grammar, const CorpusSizes& sizes,
                  std::uint64_t seed);

/// Hash of a split's contents; ties BLEU measurements to the split they used.
std::uint64_t split_hash(const std::vector<SentencePair>& split);

struct Bucket {
  std::size_t band_lo = 0;  // source lengths in [band_lo, band_hi)
  std::size_t band_hi = 0;
  std::vector<std::size_t> members;               // indices into the split
  std::vector<std::vector<std::size_t>> batches;  // partition of members
};

/// Padded size of a batch: pair count times the longest source length.
std::size_t batch_tokens(const std::vector<SentencePair>& pairs, const std::vector<std::size_t>& batch);

/// Bands are anchored at length 1: [1, 1 + w), [1 + w, 1 + 2w), ...
std::vector<Bucket> make_buckets(const std::vector<SentencePair>& pairs, std::size_t token_budget, std::size_t width);

struct InjectionProbe {
  SentencePair pair;
  std::size_t concept_index = 0;
  std::size_t source_position = 0;
  std::size_t target_position = 0;  // index into the target without BOS
};

struct InjectionSet {
  std::vector<int> novel_sources;
  std::vector<int> mapped_targets;
  std::vector<SentencePair> train;   // 5 per concept
  std::vector<std::size_t> train_concept;
  std::vector<InjectionProbe> eval;  // held-out contexts
};

InjectionSet make_injection_set(const SyntheticLexicon& lex, const GrammarSpec& grammar, std::uint64_t seed,
                                std::size_t train_per_concept = 5, std::size_t eval_per_concept = 10);

// Text formats: pairs as "src ids<TAB>tgt ids", ids space separated.
std::string format_pairs(const std::vector<SentencePair>& pairs);
std::vector<SentencePair> parse_pairs(const std::string& text);
std::string format_vocab(const SyntheticLexicon& lex);

void write_corpus_files(const std::filesystem::path& dir, const SyntheticLexicon& lex, const Corpus& corpus,
                        const InjectionSet& injection);

}  // namespace prism::datagen
