#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "prism/datagen.hpp"

using namespace prism::datagen;

namespace {

SyntheticLexicon small_lexicon() { return SyntheticLexicon::build(50, 5, 42); }

std::set<std::vector<int>> sources_of(const std::vector<SentencePair>& split) {
  std::set<std::vector<int>> s;
  for (const auto& p : split) s.insert(p.source);
  return s;
}

}  // namespace

TEST_CASE("reordering rules on small sentences") {
  const auto lex = small_lexicon();
  const int a = lex.source_id(0), b = lex.source_id(1), c = lex.source_id(2), d = lex.source_id(3);

  const auto id = make_pair(lex, ReorderRule::identity, {a, b, c});
  CHECK(id.target == std::vector<int>{kBos, lex.map(a), lex.map(b), lex.map(c), kEos});

  const auto sw = make_pair(lex, ReorderRule::adjacent_swap, {a, b, c, d});
  CHECK(sw.target == std::vector<int>{kBos, lex.map(b), lex.map(a), lex.map(d), lex.map(c), kEos});

  CHECK(target_order(ReorderRule::adjacent_swap, 5) == std::vector<std::size_t>{1, 0, 3, 2, 4});
  CHECK(target_order(ReorderRule::block_reverse, 7) == std::vector<std::size_t>{2, 1, 0, 5, 4, 3, 6});
}

TEST_CASE("rule names round-trip") {
  for (auto r : {ReorderRule::identity, ReorderRule::adjacent_swap, ReorderRule::block_reverse})
    CHECK(parse_rule(rule_name(r)) == r);
  CHECK_THROWS_AS(parse_rule("zigzag"), std::invalid_argument);
}

TEST_CASE("grammar permutations are bijections") {
  for (auto r : {ReorderRule::identity, ReorderRule::adjacent_swap, ReorderRule::block_reverse}) {
    for (std::size_t n = 1; n <= 40; ++n) {
      const auto order = target_order(r, n);
      const auto inv = aligned_positions(r, n);
      std::vector<std::size_t> sorted = order;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(sorted[i] == i);
        CHECK(order[inv[i]] == i);
      }
    }
  }
}

TEST_CASE("lexicon is an invertible bijection disjoint from reserved ids") {
  const auto lex = SyntheticLexicon::build(200, 5, 7);
  CHECK(lex.vocab_size() == 4 + 400 + 5);
  std::set<int> images;
  for (std::size_t i = 0; i < 200; ++i) {
    const int s = lex.source_id(i);
    CHECK(s >= kReservedCount);
    const int t = lex.map(s);
    CHECK(t >= kReservedCount + 200);
    CHECK(lex.unmap(t) == s);
    images.insert(t);
  }
  CHECK(images.size() == 200);
  for (int n : lex.novel_ids()) {
    CHECK(lex.is_novel(n));
    CHECK_FALSE(lex.is_content_source(n));
    CHECK(lex.unmap(lex.map(n)) != n);  // novel ids reuse existing targets
  }
  CHECK_THROWS_AS(lex.map(kBos), std::out_of_range);
  CHECK(lex.surface(kPad) == "<pad>");
  CHECK(lex.hash() == SyntheticLexicon::build(200, 5, 7).hash());
  CHECK(lex.hash() != SyntheticLexicon::build(200, 5, 8).hash());
}

TEST_CASE("corpus generation is deterministic with disjoint splits") {
  const auto lex = SyntheticLexicon::build(30, 5, 1);
  GrammarSpec g{ReorderRule::adjacent_swap, 4, 12};
  const CorpusSizes sizes{400, 50, 50};
  const auto c1 = gen_corpus(lex, g, sizes, 9);
  const auto c2 = gen_corpus(lex, g, sizes, 9);
  CHECK(format_pairs(c1.train) == format_pairs(c2.train));
  CHECK(format_pairs(c1.valid) == format_pairs(c2.valid));
  CHECK(format_pairs(c1.test) == format_pairs(c2.test));
  CHECK(split_hash(c1.train) != split_hash(gen_corpus(lex, g, sizes, 10).train));

  CHECK(c1.train.size() == 400);
  const auto tr = sources_of(c1.train), va = sources_of(c1.valid), te = sources_of(c1.test);
  CHECK(tr.size() == 400);
  for (const auto& s : va) CHECK(tr.count(s) == 0);
  for (const auto& s : te) {
    CHECK(tr.count(s) == 0);
    CHECK(va.count(s) == 0);
  }
  for (const auto& p : c1.train) {
    CHECK(p.source.size() >= 4);
    CHECK(p.source.size() <= 12);
    CHECK(p.target == make_pair(lex, g.rule, p.source).target);
    for (int v : p.source) CHECK(lex.is_content_source(v));
  }

  CHECK_THROWS_AS(gen_corpus(SyntheticLexicon::build(2, 0, 1), {ReorderRule::identity, 2, 2}, {10, 1, 1}, 1),
                  std::invalid_argument);
}

TEST_CASE("bucket bands and token budget") {
  const auto lex = small_lexicon();
  auto pair_of_len = [&](std::size_t n) { return make_pair(lex, ReorderRule::identity, std::vector<int>(n, lex.source_id(0))); };

  const std::vector<SentencePair> pairs{pair_of_len(5), pair_of_len(8), pair_of_len(9)};
  const auto buckets = make_buckets(pairs, 1000, 4);
  auto bucket_of = [&](std::size_t i) {
    for (std::size_t b = 0; b < buckets.size(); ++b)
      if (std::count(buckets[b].members.begin(), buckets[b].members.end(), i)) return b;
    return buckets.size();
  };
  CHECK(bucket_of(0) == bucket_of(1));
  CHECK(bucket_of(0) != bucket_of(2));
  CHECK(buckets[bucket_of(0)].band_lo == 5);
  CHECK(buckets[bucket_of(0)].band_hi == 9);

  std::vector<SentencePair> tens(100, pair_of_len(10));
  const auto b10 = make_buckets(tens, 200, 4);
  REQUIRE(b10.size() == 1);
  REQUIRE(b10[0].batches.size() == 5);
  for (const auto& batch : b10[0].batches) CHECK(batch.size() == 20);

  CHECK_THROWS_AS(make_buckets(tens, 200, 0), std::invalid_argument);
}

TEST_CASE("buckets partition a corpus and respect bands") {
  const auto lex = SyntheticLexicon::build(40, 5, 3);
  const auto corpus = gen_corpus(lex, {ReorderRule::block_reverse, 4, 32}, {600, 10, 10}, 5);
  const std::size_t budget = 300;
  std::vector<int> seen(corpus.train.size(), 0);
  for (const auto& b : make_buckets(corpus.train, budget, 4)) {
    std::size_t in_batches = 0;
    for (const auto& batch : b.batches) {
      CHECK(batch_tokens(corpus.train, batch) <= std::max<std::size_t>(budget, b.band_hi));
      in_batches += batch.size();
      for (auto i : batch) ++seen[i];
    }
    CHECK(in_batches == b.members.size());
    for (auto i : b.members) {
      CHECK(corpus.train[i].source.size() >= b.band_lo);
      CHECK(corpus.train[i].source.size() < b.band_hi);
    }
  }
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("injection set construction") {
  const auto lex = SyntheticLexicon::build(60, 5, 11);
  const GrammarSpec g{ReorderRule::adjacent_swap, 4, 16};
  const auto corpus = gen_corpus(lex, g, {500, 20, 20}, 11);
  const auto inj = make_injection_set(lex, g, 11);

  CHECK(inj.novel_sources.size() == 5);
  CHECK(inj.train.size() == 25);
  for (std::size_t c = 0; c < 5; ++c) CHECK(std::count(inj.train_concept.begin(), inj.train_concept.end(), c) == 5);
  CHECK(inj.eval.size() >= 25);

  for (const auto& p : corpus.train)
    for (int v : p.source) CHECK_FALSE(lex.is_novel(v));

  const auto train_src = sources_of(inj.train);
  CHECK(train_src.size() == 25);
  for (const auto& probe : inj.eval) {
    CHECK(train_src.count(probe.pair.source) == 0);
    const int novel = inj.novel_sources[probe.concept_index];
    CHECK(probe.pair.source[probe.source_position] == novel);
    CHECK(probe.pair.target[probe.target_position + 1] == inj.mapped_targets[probe.concept_index]);
  }
  for (std::size_t i = 0; i < inj.train.size(); ++i) {
    const int novel = inj.novel_sources[inj.train_concept[i]];
    CHECK(std::count(inj.train[i].source.begin(), inj.train[i].source.end(), novel) == 1);
  }

  CHECK_THROWS_AS(make_injection_set(SyntheticLexicon::build(60, 3, 1), g, 1), std::invalid_argument);
}

TEST_CASE("corpus text formats round-trip") {
  const auto lex = SyntheticLexicon::build(20, 5, 2);
  const GrammarSpec g{ReorderRule::identity, 4, 8};
  const auto corpus = gen_corpus(lex, g, {50, 5, 5}, 2);
  CHECK(parse_pairs(format_pairs(corpus.train)) == corpus.train);
  CHECK_THROWS_AS(parse_pairs("1 2 3\n"), std::invalid_argument);

  const auto dir = std::filesystem::temp_directory_path() / "prism_datagen_test";
  std::filesystem::remove_all(dir);
  write_corpus_files(dir, lex, corpus, make_injection_set(lex, g, 2));
  for (const char* f : {"train.tsv", "valid.tsv", "test.tsv", "vocab.tsv", "injection_train.tsv", "injection_eval.tsv"})
    CHECK(std::filesystem::exists(dir / f));
  std::ifstream in(dir / "train.tsv");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == format_pairs(corpus.train));
  std::filesystem::remove_all(dir);
}
