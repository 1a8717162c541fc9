// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Beam search over the model's mixed output distribution. With dynamic
// weighting enabled, each candidate token's probability is reweighted by the
// remaining hypothesis word budget, log2(max(c^h - c^y, 0) + 2), before
// expansion; weights never drop below 1, so the reweighting de-emphasizes
// exhausted words without ever zeroing one out. Beams accumulate the log of
// the renormalized weighted distribution. Dynamic weighting is an inference
// device only; training never sees it.

#include "votecomb/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace votecomb {

struct DecodeConfig {
  int beam_size = 4;
  double length_penalty = 1.0;
  int max_steps = 63;
  bool dynamic_weighting_enabled = true;
  int n_best = 1;

  void validate() const {
    if (beam_size < 1 || max_steps < 1 || n_best < 1 || n_best > beam_size)
      throw ConfigError("decode config: need beam_size >= 1, max_steps >= 1, 1 <= n_best <= beam_size");
  }
};

/// w[v] = log2(max(c_h[v] - c_y[v], 0) + 2), with w[EOS] pinned to 1 so the
/// budget never pushes termination around. Minimum value is log2(2) = 1.
inline Eigen::VectorXd dynamic_weights(const Eigen::VectorXd& c_h, const Eigen::VectorXd& c_y) {
  if (c_h.size() != c_y.size()) throw RuntimeError("dynamic_weights: length mismatch");
  Eigen::VectorXd w =
      ((c_h - c_y).cwiseMax(0.0).array() + 2.0).log() * (1.0 / std::log(2.0));
  w[Vocabulary::kEos] = 1.0;
  return w;
}

/// p_tilde proportional to w .* p, renormalized to a proper distribution.
template <typename Scalar>
RowVec<Scalar> apply_weights(const RowVec<Scalar>& p, const Eigen::VectorXd& w) {
  RowVec<Scalar> weighted = p.cwiseProduct(w.cast<Scalar>().transpose());
  Scalar z = weighted.sum();
  if (!(z > Scalar(0))) throw RuntimeError("apply_weights: weighted distribution sums to zero");
  return weighted / z;
}

/// GNMT-style normalization used for final ranking.
inline double length_penalty_norm(std::size_t len, double alpha) {
  return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

template <typename Scalar>
struct BeamHypothesis {
  TokenSeq tokens;          // emitted tokens, EOS last once finished
  double logprob = 0.0;     // sum of log p-tilde of the emitted tokens
  Eigen::VectorXd c_y;      // occurrence counts of `tokens`
  bool finished = false;
  std::vector<Scalar> lambdas;  // per-step gate values (NaN when gate disabled)
};

template <typename Scalar>
struct DecodeResult {
  TokenSeq tokens;
  double logprob = 0.0;
  double score = 0.0;  // logprob / ((5 + len)/6)^alpha
  bool truncated = false;
  std::vector<Scalar> lambdas;
};

namespace detail {

/// Deterministic order: higher score first; ties go to the lexicographically
/// smaller token sequence (lower id at the first difference, prefixes first,
/// hence shorter before longer).
inline bool sequence_less(const TokenSeq& a, const TokenSeq& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

template <typename Scalar>
bool result_before(const DecodeResult<Scalar>& a, const DecodeResult<Scalar>& b) {
  if (a.score != b.score) return a.score > b.score;
  return sequence_less(a.tokens, b.tokens);
}

}  // namespace detail

/// Expands beams on the (optionally weighted) step distributions and returns
/// the n_best finished sequences. If nothing finishes within max_steps, the
/// best unfinished beams come back flagged `truncated`.
template <typename Scalar>
std::vector<DecodeResult<Scalar>> beam_search(const CombinationExample& ex,
                                              const Parameters<Scalar>& params,
                                              const ModelConfig& cfg, const DecodeConfig& dcfg) {
  dcfg.validate();
  auto enc = encode_for_decoding(ex, params, cfg);
  // the decoder input is BOS + emitted tokens, so steps are capped by max_len
  const int max_steps = std::min(dcfg.max_steps, cfg.max_len - 1);

  std::vector<BeamHypothesis<Scalar>> active(1);
  active[0].c_y = Eigen::VectorXd::Zero(cfg.vocab_size);
  std::vector<BeamHypothesis<Scalar>> finished;

  struct Candidate {
    std::size_t parent;
    Token token;
    double logprob;
    Scalar lambda;
  };

  for (int step = 0; step < max_steps && !active.empty(); ++step) {
    std::vector<Candidate> cands;
    cands.reserve(active.size() * static_cast<std::size_t>(cfg.vocab_size));
    for (std::size_t b = 0; b < active.size(); ++b) {
      auto sd = decode_step(active[b].tokens, enc, params, cfg);
      RowVec<Scalar> p = sd.p;
      if (dcfg.dynamic_weighting_enabled)
        p = apply_weights<Scalar>(p, dynamic_weights(enc.c_h, active[b].c_y));
      for (Token v = 0; v < cfg.vocab_size; ++v) {
        double lp = active[b].logprob + std::log(static_cast<double>(p[v]));
        cands.push_back({b, v, lp, sd.lambda});
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      const TokenSeq& ta = active[a.parent].tokens;
      const TokenSeq& tb = active[b.parent].tokens;
      if (ta != tb) return detail::sequence_less(ta, tb);
      return a.token < b.token;
    });

    // the top beam_size candidates survive the step; those ending in EOS
    // retire to the finished pool, the rest keep expanding
    std::vector<BeamHypothesis<Scalar>> next;
    int taken = 0;
    for (const auto& c : cands) {
      if (taken >= dcfg.beam_size) break;
      ++taken;
      BeamHypothesis<Scalar> h = active[c.parent];
      h.tokens.push_back(c.token);
      h.logprob = c.logprob;
      h.c_y[c.token] += 1.0;
      h.lambdas.push_back(c.lambda);
      if (c.token == Vocabulary::kEos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
  }

  auto to_result = [&](const BeamHypothesis<Scalar>& h, bool truncated) {
    DecodeResult<Scalar> r;
    r.tokens = h.tokens;
    r.logprob = h.logprob;
    r.score = h.logprob / length_penalty_norm(h.tokens.size(), dcfg.length_penalty);
    r.truncated = truncated;
    r.lambdas = h.lambdas;
    return r;
  };

  std::vector<DecodeResult<Scalar>> results;
  for (const auto& h : finished) results.push_back(to_result(h, false));
  std::sort(results.begin(), results.end(), detail::result_before<Scalar>);
  if (static_cast<int>(results.size()) < dcfg.n_best && !active.empty()) {
    std::vector<DecodeResult<Scalar>> leftovers;
    for (const auto& h : active) leftovers.push_back(to_result(h, true));
    std::sort(leftovers.begin(), leftovers.end(), detail::result_before<Scalar>);
    for (auto& r : leftovers) {
      if (static_cast<int>(results.size()) >= dcfg.n_best) break;
      results.push_back(std::move(r));
    }
  }
  if (results.empty()) throw RuntimeError("beam_search: no beams produced");
  if (static_cast<int>(results.size()) > dcfg.n_best) results.resize(static_cast<std::size_t>(dcfg.n_best));
  return results;
}

/// Greedy decoding (a width-1 beam without the length penalty's reranking).
template <typename Scalar>
TokenSeq greedy_decode(const CombinationExample& ex, const Parameters<Scalar>& params,
                       const ModelConfig& cfg, int max_steps, bool dynamic_weighting) {
  DecodeConfig dcfg;
  dcfg.beam_size = 1;
  dcfg.n_best = 1;
  dcfg.max_steps = max_steps;
  dcfg.dynamic_weighting_enabled = dynamic_weighting;
  return beam_search(ex, params, cfg, dcfg)[0].tokens;
}

}  // namespace votecomb
