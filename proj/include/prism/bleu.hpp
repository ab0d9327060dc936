#pragma once

#include <vector>

namespace prism::protocols {

/// Corpus BLEU over token ids: clipped n-gram precisions for n = 1..4,
/// zero precisions floored at epsilon / count, geometric mean, brevity
/// penalty. Returns a score in [0, 100].
double bleu_corpus(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references,
                   double epsilon = 0.1);

}  // namespace prism::protocols
