// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Optimization loop: inverse-square-root learning-rate schedule with linear
// warmup, Adam with global-norm clipping, token-budget batching, periodic
// greedy-decoding BLEU on the development set for model selection.
//
// Reference mode (threads = 1) is bit-deterministic in the seed. With more
// workers each batch is split into contiguous chunks whose gradients are
// reduced in a fixed order, so runs are reproducible for a fixed thread
// count; dropout streams are per example, independent of the chunking.

#include "votecomb/checkpoint.hpp"
#include "votecomb/decode.hpp"
#include "votecomb/metrics.hpp"
#include "votecomb/model.hpp"
#include "votecomb/parallel.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace votecomb {

struct TrainConfig {
  int batch_tokens = 320;
  int warmup_steps = 300;
  double base_lr_scale = 1.0;
  int max_steps = 1200;
  std::uint64_t seed = 1;
  int eval_every = 150;
  double label_smoothing = 0.1;
  double clip_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  int threads = 0;  // 0 = VOTECOMB_THREADS / hardware

  void validate() const {
    if (warmup_steps < 1) throw ConfigError("train config: warmup_steps must be >= 1");
    if (batch_tokens < 1 || max_steps < 1 || eval_every < 1)
      throw ConfigError("train config: batch_tokens, max_steps, eval_every must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw ConfigError("train config: label_smoothing must be in [0,1)");
  }
};

/// lr = scale * d_model^(-1/2) * min(step^(-1/2), step * warmup^(-3/2)).
inline double lr_schedule(int step, int d_model, int warmup, double scale = 1.0) {
  if (step < 1) throw RuntimeError("lr_schedule: step must be >= 1");
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup);
  return scale * std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

template <typename Scalar>
class AdamOptimizer {
 public:
  AdamOptimizer(const Parameters<Scalar>& params, double beta1, double beta2, double eps)
      : m_(Parameters<Scalar>::zeros_like(params)),
        v_(Parameters<Scalar>::zeros_like(params)),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {}

  /// Clips the gradient to `clip_norm` (global L2 norm, disabled when <= 0)
  /// and applies one bias-corrected update.
  void step(Parameters<Scalar>& params, Parameters<Scalar>& grads, double lr, double clip_norm) {
    ++t_;
    if (clip_norm > 0.0) {
      double sq = 0.0;
      for (std::size_t i = 0; i < grads.size(); ++i)
        sq += static_cast<double>(grads.mat(i).template cast<double>().squaredNorm());
      double norm = std::sqrt(sq);
      if (norm > clip_norm) {
        Scalar f = static_cast<Scalar>(clip_norm / norm);
        for (std::size_t i = 0; i < grads.size(); ++i) grads.mat(i) *= f;
      }
    }
    const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    const Scalar bc1 = static_cast<Scalar>(1.0 - std::pow(beta1_, t_));
    const Scalar bc2 = static_cast<Scalar>(1.0 - std::pow(beta2_, t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = m_.mat(i);
      auto& v = v_.mat(i);
      const auto& g = grads.mat(i);
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
      params.mat(i).array() -= static_cast<Scalar>(lr) * (m.array() / bc1) /
                               ((v.array() / bc2).sqrt() + static_cast<Scalar>(eps_));
    }
  }

  int t() const { return t_; }

 private:
  Parameters<Scalar> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

/// One optimization step over a batch: chunked forward/backward, clipping,
/// Adam update. Returns the batch loss. Throws on non-finite loss.
template <typename Scalar>
Scalar train_step(Parameters<Scalar>& params, AdamOptimizer<Scalar>& opt,
                  const std::vector<CombinationExample>& batch, const ModelConfig& cfg,
                  const TrainConfig& tcfg, int step) {
  std::size_t batch_tokens = 0;
  for (const auto& ex : batch) batch_tokens += ex.trg->size();

  int workers = tcfg.threads > 0 ? tcfg.threads : max_threads();
  workers = std::max(1, std::min<int>(workers, static_cast<int>(batch.size())));
  std::vector<Parameters<Scalar>> grads;
  std::vector<Scalar> losses(static_cast<std::size_t>(workers), Scalar(0));
  std::vector<Scalar> weights(static_cast<std::size_t>(workers), Scalar(0));
  grads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) grads.push_back(Parameters<Scalar>::zeros_like(params));

  std::uint64_t drop_seed = derive_seed(tcfg.seed, "step", static_cast<std::uint64_t>(step));
  parallel_chunks(
      batch.size(),
      [&](int w, std::size_t begin, std::size_t end) {
        std::vector<CombinationExample> chunk(batch.begin() + static_cast<std::ptrdiff_t>(begin),
                                              batch.begin() + static_cast<std::ptrdiff_t>(end));
        std::size_t chunk_tokens = 0;
        for (const auto& ex : chunk) chunk_tokens += ex.trg->size();
        Scalar weight = static_cast<Scalar>(chunk_tokens) / static_cast<Scalar>(batch_tokens);
        losses[static_cast<std::size_t>(w)] = forward_loss<Scalar>(
            chunk, params, cfg, static_cast<Scalar>(tcfg.label_smoothing),
            &grads[static_cast<std::size_t>(w)], drop_seed, weight, begin);
        weights[static_cast<std::size_t>(w)] = weight;
      },
      workers);

  Scalar loss = 0;
  for (int w = 0; w < workers; ++w) loss += weights[static_cast<std::size_t>(w)] * losses[static_cast<std::size_t>(w)];
  for (int w = 1; w < workers; ++w)
    for (std::size_t i = 0; i < params.size(); ++i) grads[0].mat(i) += grads[static_cast<std::size_t>(w)].mat(i);

  if (!std::isfinite(static_cast<double>(loss)))
    throw RuntimeError("training diverged at step " + std::to_string(step) + ": non-finite loss");

  double lr = lr_schedule(step, cfg.d_model, tcfg.warmup_steps, tcfg.base_lr_scale);
  opt.step(params, grads[0], lr, tcfg.clip_norm);
  return loss;
}

/// Deterministic token-budget batching for one epoch.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& sizes,
                                                          int batch_tokens, std::uint64_t seed,
                                                          int epoch) {
  std::vector<std::size_t> order(sizes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto rng = make_rng(seed, "batch", static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  std::size_t cur_tokens = 0;
  for (std::size_t idx : order) {
    if (!cur.empty() && cur_tokens + sizes[idx] > static_cast<std::size_t>(batch_tokens)) {
      batches.push_back(std::move(cur));
      cur.clear();
      cur_tokens = 0;
    }
    cur.push_back(idx);
    cur_tokens += sizes[idx];
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

/// Greedy-decoding corpus BLEU of the model on examples with references
/// (EOS stripped on both sides). Dynamic weighting stays off here so
/// decode-time ablations share checkpoints.
template <typename Scalar>
double greedy_corpus_bleu(const std::vector<CombinationExample>& examples,
                          const Parameters<Scalar>& params, const ModelConfig& cfg, int threads = 0) {
  std::vector<TokenSeq> outs(examples.size());
  std::vector<std::vector<TokenSeq>> refs(examples.size());
  parallel_chunks(
      examples.size(),
      [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          TokenSeq out = greedy_decode(examples[i], params, cfg, cfg.max_len - 1, false);
          if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
          outs[i] = std::move(out);
          TokenSeq ref = *examples[i].trg;
          if (!ref.empty() && ref.back() == Vocabulary::kEos) ref.pop_back();
          refs[i] = {std::move(ref)};
        }
      },
      threads);
  return bleu(outs, refs);
}

struct TrainLogEntry {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double dev_bleu = -1.0;  // < 0 when no evaluation ran at this step
};

template <typename Scalar>
struct TrainResult {
  Parameters<Scalar> best_params;
  double best_dev_bleu = -1.0;
  int best_step = 0;
  std::vector<TrainLogEntry> log;
};

inline std::string format_log_entry(const TrainLogEntry& e) {
  std::ostringstream os;
  os << "step=" << e.step << " lr=" << std::setprecision(6) << e.lr << " loss=" << std::setprecision(8)
     << e.loss;
  if (e.dev_bleu >= 0.0) os << " dev_bleu=" << std::setprecision(6) << e.dev_bleu;
  return os.str();
}

/// Runs max_steps of optimization and returns the checkpoint with the best
/// development BLEU (ties keep the earlier step).
template <typename Scalar>
TrainResult<Scalar> train(const std::vector<CombinationExample>& train_set,
                          const std::vector<CombinationExample>& dev_set, Parameters<Scalar>& params,
                          const ModelConfig& cfg, const TrainConfig& tcfg,
                          const std::function<void(const TrainLogEntry&)>& log_sink = nullptr) {
  tcfg.validate();
  if (train_set.empty()) throw RuntimeError("train: empty training set");
  std::size_t longest = 0;
  for (const auto& ex : train_set) {
    if (!ex.trg) throw RuntimeError("train: training example without trg");
    longest = std::max(longest, ex.trg->size());
  }
  if (static_cast<std::size_t>(tcfg.batch_tokens) < longest)
    throw ConfigError("train config: batch_tokens smaller than the longest example");

  std::vector<std::size_t> sizes(train_set.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) sizes[i] = train_set[i].trg->size();

  TrainResult<Scalar> result;
  AdamOptimizer<Scalar> opt(params, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps);

  auto evaluate = [&](int step, double lr, double loss) {
    double dev_bleu = dev_set.empty() ? 0.0 : greedy_corpus_bleu(dev_set, params, cfg, tcfg.threads);
    TrainLogEntry e{step, lr, loss, dev_bleu};
    result.log.push_back(e);
    if (log_sink) log_sink(e);
    if (dev_bleu > result.best_dev_bleu) {
      result.best_dev_bleu = dev_bleu;
      result.best_step = step;
      result.best_params = params;
    }
  };

  int step = 0, epoch = 0;
  while (step < tcfg.max_steps) {
    auto batches = make_batches(sizes, tcfg.batch_tokens, tcfg.seed, epoch);
    for (const auto& batch_idx : batches) {
      if (step >= tcfg.max_steps) break;
      ++step;
      std::vector<CombinationExample> batch;
      batch.reserve(batch_idx.size());
      for (std::size_t i : batch_idx) batch.push_back(train_set[i]);
      Scalar loss = train_step(params, opt, batch, cfg, tcfg, step);
      double lr = lr_schedule(step, cfg.d_model, tcfg.warmup_steps, tcfg.base_lr_scale);
      if (step % tcfg.eval_every == 0 || step == tcfg.max_steps) {
        evaluate(step, lr, static_cast<double>(loss));
      } else {
        TrainLogEntry e{step, lr, static_cast<double>(loss), -1.0};
        result.log.push_back(e);
        if (log_sink) log_sink(e);
      }
    }
    ++epoch;
  }
  if (result.best_dev_bleu < 0.0) evaluate(step, 0.0, 0.0);
  return result;
}

}  // namespace votecomb
