// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Cross-hypothesis word-pair similarity analysis. For every ordered
// occurrence of token a in one hypothesis and token b in another, the
// voter-normalized similarity of their encoder states is accumulated under
// the unordered pair {a, b}; pairs are ranked by mean similarity. Identical
// pairs naturally rank high, so the report surfaces the top non-identical
// pairs together with their rank among all pairs. Reserved tokens are not
// words and are skipped.

#include "votecomb/model.hpp"
#include "votecomb/vocab.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace votecomb {

struct SimilarityPair {
  std::string token_a;
  std::string token_b;
  double mean_similarity = 0.0;
  std::int64_t occurrences = 0;
  std::int64_t rank = 0;  // 1-based rank among all pairs (identical included)
};

struct SimilarityReport {
  std::vector<SimilarityPair> top_non_identical;
  std::int64_t total_pairs = 0;
};

template <typename Scalar>
SimilarityReport similarity_report(const std::vector<CombinationExample>& examples,
                                   const Vocabulary& vocab, const Parameters<Scalar>& params,
                                   const ModelConfig& cfg, int top_k, std::int64_t min_pair_count) {
  bool any_multi = false;
  for (const auto& ex : examples) any_multi = any_multi || ex.hyps.size() >= 2;
  if (!any_multi) throw RuntimeError("similarity_report: corpus must contain examples with N >= 2");

  struct Acc {
    double sum = 0.0;
    std::int64_t count = 0;
  };
  std::map<std::pair<Token, Token>, Acc> acc;

  for (const auto& ex : examples) {
    if (ex.hyps.size() < 2) continue;
    auto h = encode_hypotheses(ex.hyps, params, cfg);
    auto sim = compute_similarity<Scalar>(h);
    for (std::size_t m = 0; m < ex.hyps.size(); ++m) {
      for (std::size_t n = 0; n < ex.hyps.size(); ++n) {
        if (m == n) continue;
        const auto& s = sim[m][n];
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
          Token a = ex.hyps[m][static_cast<std::size_t>(i)];
          if (Vocabulary::is_special(a)) continue;
          for (Eigen::Index j = 0; j < s.cols(); ++j) {
            Token b = ex.hyps[n][static_cast<std::size_t>(j)];
            if (Vocabulary::is_special(b)) continue;
            auto key = std::minmax(a, b);
            Acc& slot = acc[{key.first, key.second}];
            slot.sum += static_cast<double>(s(i, j));
            slot.count += 1;
          }
        }
      }
    }
  }

  struct Ranked {
    Token a;
    Token b;
    double mean;
    std::int64_t count;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(acc.size());
  for (const auto& [key, slot] : acc) {
    if (slot.count < min_pair_count) continue;
    ranked.push_back({key.first, key.second, slot.sum / static_cast<double>(slot.count), slot.count});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& x, const Ranked& y) {
    if (x.mean != y.mean) return x.mean > y.mean;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });

  SimilarityReport report;
  report.total_pairs = static_cast<std::int64_t>(ranked.size());
  for (std::size_t r = 0; r < ranked.size() && static_cast<int>(report.top_non_identical.size()) < top_k;
       ++r) {
    if (ranked[r].a == ranked[r].b) continue;
    SimilarityPair p;
    p.token_a = vocab.decode(ranked[r].a);
    p.token_b = vocab.decode(ranked[r].b);
    p.mean_similarity = ranked[r].mean;
    p.occurrences = ranked[r].count;
    p.rank = static_cast<std::int64_t>(r) + 1;
    report.top_non_identical.push_back(std::move(p));
  }
  return report;
}

}  // namespace votecomb
