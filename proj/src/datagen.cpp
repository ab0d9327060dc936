#include "prism/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "prism/util.hpp"

namespace prism::datagen {

ReorderRule parse_rule(const std::string& name) {
  if (name == "identity") return ReorderRule::identity;
  if (name == "adjacent-swap") return ReorderRule::adjacent_swap;
  if (name == "block-reverse") return ReorderRule::block_reverse;
  throw std::invalid_argument("unknown reordering rule: " + name);
}

std::string rule_name(ReorderRule rule) {
  switch (rule) {
    case ReorderRule::identity: return "identity";
    case ReorderRule::adjacent_swap: return "adjacent-swap";
    case ReorderRule::block_reverse: return "block-reverse";
  }
  return "identity";
}

std::vector<std::size_t> target_order(ReorderRule rule, std::size_t length) {
  std::vector<std::size_t> order(length);
  std::iota(order.begin(), order.end(), std::size_t{0});
  switch (rule) {
    case ReorderRule::identity: break;
    case ReorderRule::adjacent_swap:
      for (std::size_t i = 0; i + 1 < length; i += 2) std::swap(order[i], order[i + 1]);
      break;
    case ReorderRule::block_reverse: {
      constexpr std::size_t kBlock = 3;
      for (std::size_t start = 0; start < length; start += kBlock) {
        const auto end = std::min(length, start + kBlock);
        std::reverse(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      }
      break;
    }
  }
  return order;
}

std::vector<std::size_t> aligned_positions(ReorderRule rule, std::size_t length) {
  const auto order = target_order(rule, length);
  std::vector<std::size_t> inv(length);
  for (std::size_t j = 0; j < length; ++j) inv[order[j]] = j;
  return inv;
}

// ---------------------------------------------------------------------------

SyntheticLexicon SyntheticLexicon::build(std::size_t content_size, std::size_t novel_count, std::uint64_t seed) {
  if (content_size < 2) throw std::invalid_argument("lexicon needs at least two content tokens");
  if (novel_count > content_size) throw std::invalid_argument("more novel tokens than target tokens");
  SyntheticLexicon lex;
  lex.content_ = content_size;
  lex.forward_.resize(content_size);
  std::iota(lex.forward_.begin(), lex.forward_.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 100));
  std::shuffle(lex.forward_.begin(), lex.forward_.end(), rng);
  lex.inverse_.resize(content_size);
  for (std::size_t i = 0; i < content_size; ++i) lex.inverse_[lex.forward_[i]] = i;

  std::vector<std::size_t> targets(content_size);
  std::iota(targets.begin(), targets.end(), std::size_t{0});
  std::shuffle(targets.begin(), targets.end(), rng);
  for (std::size_t k = 0; k < novel_count; ++k) {
    lex.novel_.push_back(kReservedCount + static_cast<int>(2 * content_size + k));
    lex.novel_targets_.push_back(lex.target_id(targets[k]));
  }
  return lex;
}

bool SyntheticLexicon::is_content_source(int id) const {
  return id >= kReservedCount && id < kReservedCount + static_cast<int>(content_);
}

bool SyntheticLexicon::is_novel(int id) const { return std::find(novel_.begin(), novel_.end(), id) != novel_.end(); }

int SyntheticLexicon::map(int source) const {
  if (is_content_source(source)) return target_id(forward_[static_cast<std::size_t>(source - kReservedCount)]);
  for (std::size_t k = 0; k < novel_.size(); ++k) {
    if (novel_[k] == source) return novel_targets_[k];
  }
  throw std::out_of_range("lexicon: " + std::to_string(source) + " is not a source token");
}

int SyntheticLexicon::unmap(int target) const {
  const int lo = kReservedCount + static_cast<int>(content_);
  if (target < lo || target >= lo + static_cast<int>(content_)) {
    throw std::out_of_range("lexicon: " + std::to_string(target) + " is not a target token");
  }
  return source_id(inverse_[static_cast<std::size_t>(target - lo)]);
}

std::string SyntheticLexicon::surface(int id) const {
  switch (id) {
    case kPad: return "<pad>";
    case kBos: return "<s>";
    case kEos: return "</s>";
    case kUnk: return "<unk>";
    default: break;
  }
  if (is_content_source(id)) return "s" + std::to_string(id - kReservedCount);
  const int lo = kReservedCount + static_cast<int>(content_);
  if (id >= lo && id < lo + static_cast<int>(content_)) return "t" + std::to_string(id - lo);
  for (std::size_t k = 0; k < novel_.size(); ++k) {
    if (novel_[k] == id) return "n" + std::to_string(k);
  }
  throw std::out_of_range("lexicon: unknown id " + std::to_string(id));
}

std::uint64_t SyntheticLexicon::hash() const { return fnv1a(format_vocab(*this)); }

SentencePair make_pair(const SyntheticLexicon& lex, ReorderRule rule, std::vector<int> source) {
  SentencePair p;
  const auto order = target_order(rule, source.size());
  p.target.reserve(source.size() + 2);
  p.target.push_back(kBos);
  for (auto j : order) p.target.push_back(lex.map(source[j]));
  p.target.push_back(kEos);
  p.source = std::move(source);
  return p;
}

// ---------------------------------------------------------------------------

namespace {

std::string key_of(const std::vector<int>& s) {
  std::string k;
  k.reserve(s.size() * 4);
  for (int v : s) {
    k += std::to_string(v);
    k += ' ';
  }
  return k;
}

std::vector<int> sample_source(const SyntheticLexicon& lex, const GrammarSpec& g, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(g.min_len, g.max_len);
  std::uniform_int_distribution<std::size_t> tok(0, lex.content_size() - 1);
  std::vector<int> s(len(rng));
  for (auto& v : s) v = lex.source_id(tok(rng));
  return s;
}

double distinct_sentences(std::size_t vocab, const GrammarSpec& g) {
  double total = 0.0;
  for (std::size_t l = g.min_len; l <= g.max_len; ++l) {
    total += std::pow(static_cast<double>(vocab), static_cast<double>(l));
    if (total > 1e18) break;
  }
  return total;
}

}  // namespace

Corpus gen_corpus(const SyntheticLexicon& lex, const GrammarSpec& grammar, const CorpusSizes& sizes,
                  std::uint64_t seed) {
  if (grammar.min_len < 1 || grammar.min_len > grammar.max_len) throw std::invalid_argument("invalid length range");
  if (sizes.train < 1 || sizes.valid < 1 || sizes.test < 1) throw std::invalid_argument("split sizes must be >= 1");
  const double wanted = static_cast<double>(sizes.train + sizes.valid + sizes.test);
  // keep rejection sampling cheap: demand well over the requested count
  if (distinct_sentences(lex.content_size(), grammar) < 4.0 * wanted) {
    throw std::invalid_argument("vocabulary too small for the requested number of distinct sentences");
  }
  Corpus corpus;
  std::set<std::string> seen;
  auto fill = [&](std::vector<SentencePair>& split, std::size_t n, std::uint64_t stream) {
    std::mt19937_64 rng(derive_seed(seed, stream));
    split.reserve(n);
    while (split.size() < n) {
      auto src = sample_source(lex, grammar, rng);
      if (!seen.insert(key_of(src)).second) continue;
      split.push_back(make_pair(lex, grammar.rule, std::move(src)));
    }
  };
  fill(corpus.train, sizes.train, 1);
  fill(corpus.valid, sizes.valid, 2);
  fill(corpus.test, sizes.test, 3);
  return corpus;
}

std::uint64_t split_hash(const std::vector<SentencePair>& split) { return fnv1a(format_pairs(split)); }

std::size_t batch_tokens(const std::vector<SentencePair>& pairs, const std::vector<std::size_t>& batch) {
  std::size_t longest = 0;
  for (auto i : batch) longest = std::max(longest, pairs[i].source.size());
  return longest * batch.size();
}

std::vector<Bucket> make_buckets(const std::vector<SentencePair>& pairs, std::size_t token_budget, std::size_t width) {
  if (width < 1) throw std::invalid_argument("bucket width must be >= 1");
  std::map<std::size_t, Bucket> bands;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::size_t len = std::max<std::size_t>(pairs[i].source.size(), 1);
    const std::size_t band = (len - 1) / width;
    auto& b = bands[band];
    b.band_lo = 1 + band * width;
    b.band_hi = b.band_lo + width;
    b.members.push_back(i);
  }
  std::vector<Bucket> out;
  for (auto& [band, bucket] : bands) {
    std::vector<std::size_t> current;
    std::size_t longest = 0;
    for (auto i : bucket.members) {
      const std::size_t len = pairs[i].source.size();
      const std::size_t next_longest = std::max(longest, len);
      if (!current.empty() && next_longest * (current.size() + 1) > token_budget) {
        bucket.batches.push_back(std::move(current));
        current.clear();
        longest = 0;
      }
      current.push_back(i);
      longest = std::max(longest, len);
    }
    if (!current.empty()) bucket.batches.push_back(std::move(current));
    out.push_back(std::move(bucket));
  }
  return out;
}

InjectionSet make_injection_set(const SyntheticLexicon& lex, const GrammarSpec& grammar, std::uint64_t seed,
                                std::size_t train_per_concept, std::size_t eval_per_concept) {
  constexpr std::size_t kConcepts = 5;
  if (lex.novel_ids().size() < kConcepts) throw std::invalid_argument("lexicon has fewer than 5 unused source ids");
  InjectionSet set;
  std::mt19937_64 rng(derive_seed(seed, 200));
  std::set<std::string> used;
  auto sample_with = [&](int novel) {
    while (true) {
      auto src = sample_source(lex, grammar, rng);
      std::uniform_int_distribution<std::size_t> pos(0, src.size() - 1);
      const std::size_t p = pos(rng);
      src[p] = novel;
      if (used.insert(key_of(src)).second) return std::make_pair(std::move(src), p);
    }
  };
  for (std::size_t c = 0; c < kConcepts; ++c) {
    const int novel = lex.novel_ids()[c];
    set.novel_sources.push_back(novel);
    set.mapped_targets.push_back(lex.map(novel));
    for (std::size_t k = 0; k < train_per_concept; ++k) {
      auto [src, p] = sample_with(novel);
      set.train.push_back(make_pair(lex, grammar.rule, std::move(src)));
      set.train_concept.push_back(c);
    }
  }
  for (std::size_t c = 0; c < kConcepts; ++c) {
    for (std::size_t k = 0; k < eval_per_concept; ++k) {
      auto [src, p] = sample_with(set.novel_sources[c]);
      const auto aligned = aligned_positions(grammar.rule, src.size());
      InjectionProbe probe;
      probe.concept_index = c;
      probe.source_position = p;
      probe.target_position = aligned[p];
      probe.pair = make_pair(lex, grammar.rule, std::move(src));
      set.eval.push_back(std::move(probe));
    }
  }
  return set;
}

// ---------------------------------------------------------------------------

namespace {

void append_ids(std::string& out, const std::vector<int>& ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += std::to_string(ids[i]);
  }
}

std::vector<int> parse_ids(const std::string& field) {
  std::vector<int> ids;
  std::istringstream in(field);
  int v = 0;
  while (in >> v) ids.push_back(v);
  return ids;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string format_pairs(const std::vector<SentencePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    append_ids(out, p.source);
    out += '\t';
    append_ids(out, p.target);
    out += '\n';
  }
  return out;
}

std::vector<SentencePair> parse_pairs(const std::string& text) {
  std::vector<SentencePair> pairs;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::invalid_argument("corpus line without a tab separator");
    pairs.push_back({parse_ids(line.substr(0, tab)), parse_ids(line.substr(tab + 1))});
  }
  return pairs;
}

std::string format_vocab(const SyntheticLexicon& lex) {
  std::string out;
  for (std::size_t id = 0; id < lex.vocab_size(); ++id) {
    const int i = static_cast<int>(id);
    out += std::to_string(id) + '\t' + lex.surface(i);
    if (lex.is_content_source(i) || lex.is_novel(i)) out += '\t' + lex.surface(lex.map(i));
    out += '\n';
  }
  return out;
}

void write_corpus_files(const std::filesystem::path& dir, const SyntheticLexicon& lex, const Corpus& corpus,
                        const InjectionSet& injection) {
  std::filesystem::create_directories(dir);
  write_text(dir / "train.tsv", format_pairs(corpus.train));
  write_text(dir / "valid.tsv", format_pairs(corpus.valid));
  write_text(dir / "test.tsv", format_pairs(corpus.test));
  write_text(dir / "vocab.tsv", format_vocab(lex));
  write_text(dir / "injection_train.tsv", format_pairs(injection.train));
  std::string probes;
  for (const auto& p : injection.eval) {
    append_ids(probes, p.pair.source);
    probes += '\t';
    append_ids(probes, p.pair.target);
    probes += '\t' + std::to_string(p.concept_index) + '\t' + std::to_string(p.target_position) + '\n';
  }
  write_text(dir / "injection_eval.tsv", probes);
}

}  // namespace prism::datagen
