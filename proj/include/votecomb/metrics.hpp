// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Corpus BLEU-4 (clipped n-gram precision, brevity penalty, closest
// effective reference length), the averaged n-gram matching rate between
// outputs and individual hypotheses, and paired bootstrap resampling.
// Per-sentence sufficient statistics are kept so a bootstrap resample
// re-aggregates counts instead of re-matching n-grams.

#include "votecomb/rng.hpp"
#include "votecomb/types.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace votecomb {

inline constexpr int kBleuOrder = 4;

struct BleuStats {
  std::array<std::int64_t, kBleuOrder> matches{};
  std::array<std::int64_t, kBleuOrder> totals{};
  std::int64_t cand_len = 0;
  std::int64_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (int n = 0; n < kBleuOrder; ++n) {
      matches[static_cast<std::size_t>(n)] += o.matches[static_cast<std::size_t>(n)];
      totals[static_cast<std::size_t>(n)] += o.totals[static_cast<std::size_t>(n)];
    }
    cand_len += o.cand_len;
    ref_len += o.ref_len;
    return *this;
  }
};

namespace detail {

struct NgramHash {
  std::size_t operator()(const TokenSeq& g) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (Token t : g) {
      h ^= static_cast<std::uint64_t>(t) + 0x9e3779b97f4a7c15ULL;
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

using NgramCounts = std::unordered_map<TokenSeq, std::int64_t, NgramHash>;

inline NgramCounts count_ngrams(const TokenSeq& s, int n) {
  NgramCounts counts;
  if (static_cast<int>(s.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i)
    ++counts[TokenSeq(s.begin() + static_cast<std::ptrdiff_t>(i),
                      s.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return counts;
}

/// Clipped matches of cand n-grams against reference counts.
inline std::int64_t clipped_matches(const NgramCounts& cand, const NgramCounts& ref) {
  std::int64_t m = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) m += std::min(count, it->second);
  }
  return m;
}

}  // namespace detail

/// Sufficient statistics of one candidate against its reference set. The
/// effective reference length is the closest one (ties to the shorter).
inline BleuStats bleu_sentence_stats(const TokenSeq& cand, const std::vector<TokenSeq>& refs) {
  if (refs.empty()) throw RuntimeError("bleu: sentence without references");
  BleuStats st;
  st.cand_len = static_cast<std::int64_t>(cand.size());
  std::int64_t best_ref = static_cast<std::int64_t>(refs[0].size());
  for (const auto& r : refs) {
    auto len = static_cast<std::int64_t>(r.size());
    auto d = std::abs(len - st.cand_len);
    auto bd = std::abs(best_ref - st.cand_len);
    if (d < bd || (d == bd && len < best_ref)) best_ref = len;
  }
  st.ref_len = best_ref;
  for (int n = 1; n <= kBleuOrder; ++n) {
    auto cand_counts = detail::count_ngrams(cand, n);
    detail::NgramCounts ref_max;
    for (const auto& r : refs)
      for (const auto& [gram, count] : detail::count_ngrams(r, n)) {
        auto& slot = ref_max[gram];
        slot = std::max(slot, count);
      }
    std::int64_t total = std::max<std::int64_t>(st.cand_len - n + 1, 0);
    st.totals[static_cast<std::size_t>(n - 1)] = total;
    st.matches[static_cast<std::size_t>(n - 1)] = detail::clipped_matches(cand_counts, ref_max);
  }
  return st;
}

/// Corpus BLEU in [0, 100] from aggregated statistics.
inline double bleu_from_stats(const BleuStats& agg) {
  if (agg.cand_len == 0) return 0.0;
  double log_prec = 0.0;
  for (int n = 0; n < kBleuOrder; ++n) {
    auto m = agg.matches[static_cast<std::size_t>(n)];
    auto t = agg.totals[static_cast<std::size_t>(n)];
    if (m == 0 || t == 0) return 0.0;
    log_prec += std::log(static_cast<double>(m) / static_cast<double>(t));
  }
  double bp = agg.cand_len >= agg.ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(agg.ref_len) / static_cast<double>(agg.cand_len));
  return 100.0 * bp * std::exp(log_prec / kBleuOrder);
}

inline std::vector<BleuStats> bleu_corpus_stats(const std::vector<TokenSeq>& cands,
                                                const std::vector<std::vector<TokenSeq>>& refs) {
  if (cands.empty()) throw RuntimeError("bleu: empty candidate set");
  if (cands.size() != refs.size()) throw RuntimeError("bleu: candidate/reference count mismatch");
  std::vector<BleuStats> stats;
  stats.reserve(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) stats.push_back(bleu_sentence_stats(cands[i], refs[i]));
  return stats;
}

inline double bleu(const std::vector<TokenSeq>& cands, const std::vector<std::vector<TokenSeq>>& refs) {
  BleuStats agg;
  for (const auto& st : bleu_corpus_stats(cands, refs)) agg += st;
  return bleu_from_stats(agg);
}

// --- string-level wrapper -------------------------------------------------

inline std::string lowercased(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// Interns whitespace tokens into dense ids shared across all arguments.
class TokenInterner {
 public:
  TokenSeq intern(const std::vector<std::string>& toks, bool case_sensitive) {
    TokenSeq out;
    out.reserve(toks.size());
    for (const auto& t : toks) {
      std::string key = case_sensitive ? t : lowercased(t);
      auto [it, inserted] = map_.emplace(key, static_cast<Token>(map_.size()));
      out.push_back(it->second);
    }
    return out;
  }

 private:
  std::unordered_map<std::string, Token> map_;
};

inline double bleu_text(const std::vector<std::vector<std::string>>& cands,
                        const std::vector<std::vector<std::vector<std::string>>>& refs,
                        bool case_sensitive) {
  TokenInterner interner;
  std::vector<TokenSeq> c;
  std::vector<std::vector<TokenSeq>> r(refs.size());
  for (const auto& s : cands) c.push_back(interner.intern(s, case_sensitive));
  for (std::size_t i = 0; i < refs.size(); ++i)
    for (const auto& ref : refs[i]) r[i].push_back(interner.intern(ref, case_sensitive));
  return bleu(c, r);
}

// --- matching rate ----------------------------------------------------------

/// Averaged n-gram matching rate between outputs and single hypotheses:
/// corpus-level clipped n-gram precision of the outputs against hypothesis
/// column j, averaged over the N columns. Sentences shorter than n
/// contribute 0 matched over 0 total.
inline double matching_rate(const std::vector<TokenSeq>& outputs,
                            const std::vector<std::vector<TokenSeq>>& hyp_sets, int n) {
  if (n < 1 || n > kBleuOrder) throw RuntimeError("matching_rate: n must be in 1..4");
  if (outputs.size() != hyp_sets.size()) throw RuntimeError("matching_rate: size mismatch");
  if (outputs.empty()) throw RuntimeError("matching_rate: empty corpus");
  const std::size_t n_hyps = hyp_sets[0].size();
  double sum_rates = 0.0;
  for (std::size_t j = 0; j < n_hyps; ++j) {
    std::int64_t matched = 0, total = 0;
    for (std::size_t s = 0; s < outputs.size(); ++s) {
      if (hyp_sets[s].size() != n_hyps) throw RuntimeError("matching_rate: ragged hypothesis sets");
      auto cand_counts = detail::count_ngrams(outputs[s], n);
      auto hyp_counts = detail::count_ngrams(hyp_sets[s][j], n);
      matched += detail::clipped_matches(cand_counts, hyp_counts);
      total += std::max<std::int64_t>(static_cast<std::int64_t>(outputs[s].size()) - n + 1, 0);
    }
    sum_rates += total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
  }
  return sum_rates / static_cast<double>(n_hyps);
}

// --- paired bootstrap -------------------------------------------------------

/// Fraction of resamples in which system B's corpus BLEU is at least system
/// A's. Small values mean A is significantly better. Deterministic in seed.
inline double paired_bootstrap(const std::vector<BleuStats>& stats_a,
                               const std::vector<BleuStats>& stats_b, int resamples,
                               std::uint64_t seed) {
  if (stats_a.size() != stats_b.size()) throw RuntimeError("paired_bootstrap: length mismatch");
  if (stats_a.empty()) throw RuntimeError("paired_bootstrap: empty statistics");
  if (resamples < 100) throw RuntimeError("paired_bootstrap: need at least 100 resamples");
  auto rng = make_rng(seed, "bootstrap");
  std::uniform_int_distribution<std::size_t> pick(0, stats_a.size() - 1);
  int b_wins = 0;
  for (int r = 0; r < resamples; ++r) {
    BleuStats agg_a, agg_b;
    for (std::size_t i = 0; i < stats_a.size(); ++i) {
      std::size_t idx = pick(rng);
      agg_a += stats_a[idx];
      agg_b += stats_b[idx];
    }
    if (bleu_from_stats(agg_b) >= bleu_from_stats(agg_a)) ++b_wins;
  }
  return static_cast<double>(b_wins) / static_cast<double>(resamples);
}

}  // namespace votecomb
