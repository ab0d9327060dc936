#include "prism/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace prism::protocols {

namespace {

constexpr std::size_t kMaxOrder = 4;

using Ngram = std::vector<int>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<int>& s, std::size_t n) {
  std::map<Ngram, std::size_t> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[Ngram(s.begin() + i, s.begin() + i + n)];
  return out;
}

}  // namespace

double bleu_corpus(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references,
                   double epsilon) {
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");
  if (hypotheses.size() != references.size()) throw std::invalid_argument("bleu: hypothesis/reference count mismatch");

  std::size_t hyp_len = 0, ref_len = 0;
  std::size_t matches[kMaxOrder] = {};
  std::size_t totals[kMaxOrder] = {};
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      const auto hc = ngram_counts(h, n);
      const auto rc = ngram_counts(r, n);
      for (const auto& [g, c] : hc) {
        const auto it = rc.find(g);
        if (it != rc.end()) matches[n - 1] += std::min(c, it->second);
      }
      if (h.size() >= n) totals[n - 1] += h.size() - n + 1;
    }
  }
  if (hyp_len == 0) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    const double denom = static_cast<double>(std::max<std::size_t>(totals[n], 1));
    const double num = matches[n] > 0 ? static_cast<double>(matches[n]) : epsilon;
    log_sum += std::log(num / denom);
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return std::clamp(100.0 * bp * std::exp(log_sum / kMaxOrder), 0.0, 100.0);
}

}  // namespace prism::protocols
