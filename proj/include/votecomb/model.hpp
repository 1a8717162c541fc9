// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-source encoder-decoder with a voting mechanism in the hyp-trg
// attention. One encoder reads the source, a single shared encoder reads
// each of the N hypotheses. Per decoder layer and head, every hypothesis
// position gets a scaled dot-product energy; with voting enabled the energy
// is extended by similarity-weighted energies of all other hypotheses'
// positions (their votes), and a single joint softmax over all hypothesis
// positions yields the attention weights. Word similarities come from the
// final hypothesis-encoder states, normalized over the voting hypothesis'
// positions, and are shared across layers and heads.
//
// The output side mixes a full-vocabulary softmax with a softmax restricted
// to tokens present in the hypotheses, gated by a sigmoid head on the
// decoder state.

#include "votecomb/ad.hpp"
#include "votecomb/corpus.hpp"
#include "votecomb/kernels.hpp"
#include "votecomb/params.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace votecomb {

/// sim[m][n] (m != n) holds the |y_m| x |y_n| voter->candidate preferences,
/// each column summing to 1 over the voter positions. Empty when N < 2.
template <typename Scalar>
using SimilarityTensor = std::vector<std::vector<Mat<Scalar>>>;

template <typename Scalar>
SimilarityTensor<Scalar> compute_similarity(const std::vector<Mat<Scalar>>& h_hyp) {
  const std::size_t n = h_hyp.size();
  SimilarityTensor<Scalar> sim(n, std::vector<Mat<Scalar>>(n));
  if (n < 2) return sim;
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t c = 0; c < n; ++c)
      if (m != c) sim[m][c] = kernels::softmax_cols<Scalar>(Mat<Scalar>(h_hyp[m] * h_hyp[c].transpose()));
  return sim;
}

struct ForwardMode {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

/// Per-step output state: decoder vector, both vocabulary distributions,
/// the gate, and the mixture actually used for prediction. When the
/// restricted vocabulary is disabled, p == p_f, p_r is empty and lambda is
/// NaN (unused).
template <typename Scalar>
struct StepDistribution {
  RowVec<Scalar> h_trg;
  RowVec<Scalar> p_r;
  RowVec<Scalar> p_f;
  RowVec<Scalar> p;
  Scalar lambda = std::numeric_limits<Scalar>::quiet_NaN();
};

/// Builds tape forwards for one parameter set. Parameter nodes are created
/// lazily and shared across every sequence built on the same graph, so one
/// builder can host a whole batch chunk.
template <typename Scalar>
class ForwardBuilder {
 public:
  using N = ad::Node<Scalar>;

  ForwardBuilder(ad::Graph<Scalar>& g, const Parameters<Scalar>& params, const ModelConfig& cfg,
                 ForwardMode mode = {})
      : g_(g), params_(params), cfg_(cfg), mode_(mode), rng_(make_rng(mode.dropout_seed, "dropout")) {
    cfg_.validate();
  }

  /// Restarts the dropout stream (used to give every example its own stream
  /// regardless of how a batch is chunked across workers).
  void reseed_dropout(std::uint64_t seed) { rng_ = make_rng(seed, "dropout"); }

  N* param(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    N* leaf = g_.leaf(params_.at(name), mode_.training);
    leaves_.emplace(name, leaf);
    return leaf;
  }

  /// Adds dL/d(param) for every parameter touched by this builder into acc.
  void harvest_gradients(Parameters<Scalar>& acc) const {
    for (const auto& [name, leaf] : leaves_)
      if (leaf->grad.size() != 0) acc.at(name) += leaf->grad;
  }

  N* encode(const std::string& prefix, const TokenSeq& tokens) {
    check_len(tokens);
    N* x = embed(tokens);
    kernels::BoolArr self_mask;
    const kernels::BoolArr* mask = nullptr;
    if (has_pad(tokens)) {
      self_mask = key_mask(tokens, tokens.size());
      mask = &self_mask;
    }
    for (int l = 0; l < cfg_.n_layers_enc; ++l) {
      std::string lp = prefix + ".l" + std::to_string(l);
      N* h = layer_norm(x, lp + ".ln1");
      h = attention(h, h, lp + ".att", mask);
      x = ad::add(x, maybe_dropout(h));
      h = layer_norm(x, lp + ".ln2");
      h = ffn(h, lp + ".ffn");
      x = ad::add(x, maybe_dropout(h));
    }
    return layer_norm(x, prefix + ".lnf");
  }

  N* encode_source(const TokenSeq& src) { return encode("enc_src", src); }

  std::vector<N*> encode_hypotheses(const std::vector<TokenSeq>& hyps) {
    if (hyps.empty()) throw RuntimeError("encode_hypotheses: need at least one hypothesis");
    std::vector<N*> out;
    out.reserve(hyps.size());
    for (const auto& h : hyps) out.push_back(encode("enc_hyp", h));
    return out;
  }

  /// Tape version of the similarity tensor (gradients flow through it).
  std::vector<std::vector<N*>> similarity(const std::vector<N*>& h_hyp) {
    const std::size_t n = h_hyp.size();
    std::vector<std::vector<N*>> sim(n, std::vector<N*>(n, nullptr));
    if (n < 2) return sim;
    for (std::size_t m = 0; m < n; ++m)
      for (std::size_t c = 0; c < n; ++c)
        if (m != c) sim[m][c] = ad::softmax_cols(ad::matmul_nt(h_hyp[m], h_hyp[c]));
    return sim;
  }

  struct DecoderOut {
    N* h_trg = nullptr;
    N* p = nullptr;
    N* p_r = nullptr;
    N* p_f = nullptr;
    N* lambda = nullptr;
  };

  /// dec_input: BOS-prefixed tokens. mask: restricted-vocabulary membership
  /// (required when the restricted vocabulary is enabled).
  DecoderOut decode(const TokenSeq& dec_input, N* h_src, const TokenSeq& src_tokens,
                    const std::vector<N*>& h_hyp, const std::vector<std::vector<N*>>& sim,
                    const RestrictedVocabMask* mask) {
    check_len(dec_input);
    const Eigen::Index T = static_cast<Eigen::Index>(dec_input.size());
    N* x = embed(dec_input);
    kernels::BoolArr causal = kernels::causal_mask(T);
    kernels::BoolArr src_mask;
    const kernels::BoolArr* src_mask_p = nullptr;
    if (has_pad(src_tokens)) {
      src_mask = key_mask(src_tokens, dec_input.size());
      src_mask_p = &src_mask;
    }
    for (int l = 0; l < cfg_.n_layers_dec; ++l) {
      std::string lp = "dec.l" + std::to_string(l);
      bool vote_here = cfg_.voting_enabled &&
                       (!cfg_.voting_last_layer_only || l == cfg_.n_layers_dec - 1);
      N* h = layer_norm(x, lp + ".ln1");
      h = attention(h, h, lp + ".self", &causal);
      x = ad::add(x, maybe_dropout(h));
      h = layer_norm(x, lp + ".ln2");
      h = attention(h, h_src, lp + ".src", src_mask_p);
      x = ad::add(x, maybe_dropout(h));
      h = layer_norm(x, lp + ".ln3");
      h = voting_attention(h, h_hyp, sim, lp + ".hyp", vote_here);
      x = ad::add(x, maybe_dropout(h));
      h = layer_norm(x, lp + ".ln4");
      h = ffn(h, lp + ".ffn");
      x = ad::add(x, maybe_dropout(h));
    }
    DecoderOut out;
    out.h_trg = layer_norm(x, "dec.lnf");
    N* logits = ad::matmul_nt(out.h_trg, param("embed"));
    out.p_f = ad::softmax_rows(logits);
    if (cfg_.restricted_vocab_enabled) {
      if (mask == nullptr) throw RuntimeError("decode: missing restricted vocabulary mask");
      if (mask->count() < 1) throw RuntimeError("decode: empty restricted vocabulary mask");
      kernels::BoolArr allowed(T, cfg_.vocab_size);
      for (Eigen::Index v = 0; v < cfg_.vocab_size; ++v)
        allowed.col(v).setConstant(mask->member[static_cast<std::size_t>(v)] != 0);
      out.p_r = ad::softmax_rows_masked(logits, std::move(allowed));
      N* gate_logit = ad::add_scalar(ad::matmul(out.h_trg, param("gate.w")), param("gate.b"));
      out.lambda = ad::sigmoid(gate_logit);
      out.p = ad::convex_mix(out.p_r, out.p_f, out.lambda);
    } else {
      out.p = out.p_f;
    }
    return out;
  }

  /// Full forward for one example (teacher forcing when trg given).
  DecoderOut build(const CombinationExample& ex, const RestrictedVocabMask* mask,
                   const TokenSeq& dec_input) {
    N* h_src = encode_source(ex.src);
    std::vector<N*> h_hyp = encode_hypotheses(ex.hyps);
    std::vector<std::vector<N*>> sim;
    if (cfg_.voting_enabled && ex.hyps.size() > 1)
      sim = similarity(h_hyp);
    else
      sim.assign(h_hyp.size(), std::vector<N*>(h_hyp.size(), nullptr));
    return decode(dec_input, h_src, ex.src, h_hyp, sim, mask);
  }

 private:
  void check_len(const TokenSeq& tokens) const {
    if (tokens.empty()) throw RuntimeError("model: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg_.max_len)
      throw RuntimeError("model: sequence length " + std::to_string(tokens.size()) +
                         " exceeds max_len " + std::to_string(cfg_.max_len));
  }

  static bool has_pad(const TokenSeq& tokens) {
    for (Token t : tokens)
      if (t == Vocabulary::kPad) return true;
    return false;
  }

  static kernels::BoolArr key_mask(const TokenSeq& keys, std::size_t n_queries) {
    kernels::BoolArr m(static_cast<Eigen::Index>(n_queries), static_cast<Eigen::Index>(keys.size()));
    for (std::size_t k = 0; k < keys.size(); ++k)
      m.col(static_cast<Eigen::Index>(k)).setConstant(keys[k] != Vocabulary::kPad);
    return m;
  }

  N* embed(const TokenSeq& tokens) {
    N* e = ad::gather_rows(param("embed"), tokens);
    e = ad::scale(e, static_cast<Scalar>(std::sqrt(static_cast<double>(cfg_.d_model))));
    if (pe_.rows() == 0) pe_ = kernels::sinusoidal_pe<Scalar>(cfg_.max_len, cfg_.d_model);
    N* pe = g_.constant(pe_.topRows(static_cast<Eigen::Index>(tokens.size())));
    return maybe_dropout(ad::add(e, pe));
  }

  N* layer_norm(N* x, const std::string& prefix) {
    return ad::layer_norm_rows(x, param(prefix + ".g"), param(prefix + ".b"));
  }

  N* ffn(N* x, const std::string& prefix) {
    N* h = ad::add_rowvec(ad::matmul(x, param(prefix + ".w1")), param(prefix + ".b1"));
    h = ad::relu(h);
    h = maybe_dropout(h);
    return ad::add_rowvec(ad::matmul(h, param(prefix + ".w2")), param(prefix + ".b2"));
  }

  /// Standard multi-head attention (queries from x, keys/values from kv).
  N* attention(N* x, N* kv, const std::string& prefix, const kernels::BoolArr* mask) {
    const int dh = cfg_.d_head();
    N* q = ad::matmul(x, param(prefix + ".wq"));
    N* k = ad::matmul(kv, param(prefix + ".wk"));
    N* v = ad::matmul(kv, param(prefix + ".wv"));
    const Scalar inv_sqrt = Scalar(1) / static_cast<Scalar>(std::sqrt(static_cast<double>(dh)));
    std::vector<N*> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      N* qh = ad::slice_cols(q, h * dh, dh);
      N* kh = ad::slice_cols(k, h * dh, dh);
      N* vh = ad::slice_cols(v, h * dh, dh);
      N* scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
      N* alpha = mask ? ad::softmax_rows_masked(scores, *mask) : ad::softmax_rows(scores);
      heads.push_back(ad::matmul(alpha, vh));
    }
    return ad::matmul(ad::concat_cols(heads), param(prefix + ".wo"));
  }

  /// hyp-trg attention over all N hypotheses jointly. Per head, each
  /// hypothesis position's energy is extended by the similarity-weighted
  /// energies of the other hypotheses' positions before a single softmax
  /// over every (hypothesis, position) pair.
  N* voting_attention(N* x, const std::vector<N*>& h_hyp,
                      const std::vector<std::vector<N*>>& sim, const std::string& prefix,
                      bool voting) {
    const int dh = cfg_.d_head();
    const std::size_t n = h_hyp.size();
    N* q = ad::matmul(x, param(prefix + ".wq"));
    std::vector<N*> k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      k[i] = ad::matmul(h_hyp[i], param(prefix + ".wk"));
      v[i] = ad::matmul(h_hyp[i], param(prefix + ".wv"));
    }
    const Scalar inv_sqrt = Scalar(1) / static_cast<Scalar>(std::sqrt(static_cast<double>(dh)));
    std::vector<N*> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      N* qh = ad::slice_cols(q, h * dh, dh);
      std::vector<N*> energy(n), extended(n), values(n);
      for (std::size_t i = 0; i < n; ++i) {
        energy[i] = ad::scale(ad::matmul_nt(qh, ad::slice_cols(k[i], h * dh, dh)), inv_sqrt);
        values[i] = ad::slice_cols(v[i], h * dh, dh);
      }
      for (std::size_t c = 0; c < n; ++c) {
        extended[c] = energy[c];
        if (!voting) continue;
        for (std::size_t m = 0; m < n; ++m) {
          if (m == c) continue;
          extended[c] = ad::add(extended[c], ad::matmul(energy[m], sim[m][c]));
        }
      }
      N* alpha = ad::softmax_rows(ad::concat_cols(extended));
      heads.push_back(ad::matmul(alpha, ad::concat_rows(values)));
    }
    return ad::matmul(ad::concat_cols(heads), param(prefix + ".wo"));
  }

  N* maybe_dropout(N* x) {
    if (!mode_.training || cfg_.dropout <= 0.0) return x;
    const Scalar keep = static_cast<Scalar>(1.0 - cfg_.dropout);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    Mat<Scalar> mask(x->value.rows(), x->value.cols());
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        mask(r, c) = coin(rng_) < cfg_.dropout ? Scalar(0) : Scalar(1);
    return ad::mask_scale(x, std::move(mask), Scalar(1) / keep);
  }

  ad::Graph<Scalar>& g_;
  const Parameters<Scalar>& params_;
  ModelConfig cfg_;
  ForwardMode mode_;
  std::mt19937_64 rng_;
  std::unordered_map<std::string, N*> leaves_;
  Mat<Scalar> pe_;
};

// ---------------------------------------------------------------------------
// Plain evaluation wrappers.
// ---------------------------------------------------------------------------

template <typename Scalar>
Mat<Scalar> encode_source(const TokenSeq& src, const Parameters<Scalar>& params,
                          const ModelConfig& cfg) {
  ad::Graph<Scalar> g;
  ForwardBuilder<Scalar> b(g, params, cfg);
  return b.encode_source(src)->value;
}

template <typename Scalar>
std::vector<Mat<Scalar>> encode_hypotheses(const std::vector<TokenSeq>& hyps,
                                           const Parameters<Scalar>& params,
                                           const ModelConfig& cfg) {
  ad::Graph<Scalar> g;
  ForwardBuilder<Scalar> b(g, params, cfg);
  auto nodes = b.encode_hypotheses(hyps);
  std::vector<Mat<Scalar>> out;
  out.reserve(nodes.size());
  for (auto* n : nodes) out.push_back(n->value);
  return out;
}

inline TokenSeq make_decoder_input(const TokenSeq& trg) {
  TokenSeq input;
  input.reserve(trg.size());
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), trg.begin(), trg.end() - 1);
  return input;
}

namespace detail {

template <typename Scalar>
std::vector<StepDistribution<Scalar>> extract_steps(
    const typename ForwardBuilder<Scalar>::DecoderOut& out, bool restricted) {
  std::vector<StepDistribution<Scalar>> steps(static_cast<std::size_t>(out.p->value.rows()));
  for (std::size_t t = 0; t < steps.size(); ++t) {
    auto r = static_cast<Eigen::Index>(t);
    steps[t].h_trg = out.h_trg->value.row(r);
    steps[t].p = out.p->value.row(r);
    steps[t].p_f = out.p_f->value.row(r);
    if (restricted) {
      steps[t].p_r = out.p_r->value.row(r);
      steps[t].lambda = out.lambda->value(r, 0);
    }
  }
  return steps;
}

}  // namespace detail

/// Teacher-forced per-step distributions (eval mode).
template <typename Scalar>
std::vector<StepDistribution<Scalar>> decoder_forward(const CombinationExample& ex,
                                                      const Parameters<Scalar>& params,
                                                      const ModelConfig& cfg) {
  if (!ex.trg) throw RuntimeError("decoder_forward: teacher forcing requires trg");
  ad::Graph<Scalar> g;
  ForwardBuilder<Scalar> b(g, params, cfg);
  RestrictedVocabMask mask;
  if (cfg.restricted_vocab_enabled) mask = build_restricted_vocab(ex, cfg.vocab_size);
  auto out = b.build(ex, cfg.restricted_vocab_enabled ? &mask : nullptr,
                     make_decoder_input(*ex.trg));
  return detail::extract_steps<Scalar>(out, cfg.restricted_vocab_enabled);
}

/// Encoder work that decoding reuses across steps and beams.
template <typename Scalar>
struct EncodedExample {
  TokenSeq src_tokens;
  std::vector<TokenSeq> hyp_tokens;
  Mat<Scalar> h_src;
  std::vector<Mat<Scalar>> h_hyp;
  SimilarityTensor<Scalar> sim;
  RestrictedVocabMask mask;
  Eigen::VectorXd c_h;
};

template <typename Scalar>
EncodedExample<Scalar> encode_for_decoding(const CombinationExample& ex,
                                           const Parameters<Scalar>& params,
                                           const ModelConfig& cfg) {
  EncodedExample<Scalar> enc;
  enc.src_tokens = ex.src;
  enc.hyp_tokens = ex.hyps;
  ad::Graph<Scalar> g;
  ForwardBuilder<Scalar> b(g, params, cfg);
  enc.h_src = b.encode_source(ex.src)->value;
  for (auto* n : b.encode_hypotheses(ex.hyps)) enc.h_hyp.push_back(n->value);
  if (cfg.voting_enabled && ex.hyps.size() > 1) enc.sim = compute_similarity<Scalar>(enc.h_hyp);
  enc.mask = build_restricted_vocab(ex, cfg.vocab_size);
  enc.c_h = hypothesis_count_vector(ex, cfg.vocab_size);
  return enc;
}

/// Distribution for the next token after `prefix` (tokens emitted so far,
/// BOS excluded). Runs the decoder stack only.
template <typename Scalar>
StepDistribution<Scalar> decode_step(const TokenSeq& prefix, const EncodedExample<Scalar>& enc,
                                     const Parameters<Scalar>& params, const ModelConfig& cfg) {
  ad::Graph<Scalar> g;
  ForwardBuilder<Scalar> b(g, params, cfg);
  TokenSeq dec_input;
  dec_input.reserve(prefix.size() + 1);
  dec_input.push_back(Vocabulary::kBos);
  dec_input.insert(dec_input.end(), prefix.begin(), prefix.end());

  std::vector<ad::Node<Scalar>*> h_hyp;
  h_hyp.reserve(enc.h_hyp.size());
  for (const auto& m : enc.h_hyp) h_hyp.push_back(g.constant(m));
  std::vector<std::vector<ad::Node<Scalar>*>> sim(h_hyp.size(),
                                                  std::vector<ad::Node<Scalar>*>(h_hyp.size(), nullptr));
  if (!enc.sim.empty())
    for (std::size_t m = 0; m < h_hyp.size(); ++m)
      for (std::size_t c = 0; c < h_hyp.size(); ++c)
        if (m != c) sim[m][c] = g.constant(enc.sim[m][c]);

  auto out = b.decode(dec_input, g.constant(enc.h_src), enc.src_tokens, h_hyp, sim,
                      cfg.restricted_vocab_enabled ? &enc.mask : nullptr);
  auto steps = detail::extract_steps<Scalar>(out, cfg.restricted_vocab_enabled);
  return steps.back();
}

/// Token-mean label-smoothed negative log likelihood over a batch, with
/// gradients for every parameter accumulated into `grads` when non-null.
/// `loss_weight` seeds the backward pass, so a batch split into chunks can
/// weight each chunk by its token share and reduce with plain addition.
/// Each example draws its dropout masks from its own stream derived from
/// (dropout_seed, example_offset + index).
template <typename Scalar>
Scalar forward_loss(const std::vector<CombinationExample>& batch, const Parameters<Scalar>& params,
                    const ModelConfig& cfg, Scalar label_smoothing,
                    Parameters<Scalar>* grads = nullptr, std::uint64_t dropout_seed = 0,
                    Scalar loss_weight = Scalar(1), std::uint64_t example_offset = 0) {
  if (batch.empty()) throw RuntimeError("forward_loss: empty batch");
  std::size_t total_tokens = 0;
  for (const auto& ex : batch) {
    if (!ex.trg) throw RuntimeError("forward_loss: example without trg");
    total_tokens += ex.trg->size();
  }
  ad::Graph<Scalar> g;
  ForwardMode mode;
  mode.training = grads != nullptr;
  mode.dropout_seed = dropout_seed;
  ForwardBuilder<Scalar> b(g, params, cfg, mode);
  std::vector<ad::Node<Scalar>*> losses;
  std::vector<Scalar> weights;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    b.reseed_dropout(derive_seed(dropout_seed, "example", example_offset + i));
    RestrictedVocabMask mask;
    if (cfg.restricted_vocab_enabled) mask = build_restricted_vocab(ex, cfg.vocab_size);
    auto out = b.build(ex, cfg.restricted_vocab_enabled ? &mask : nullptr,
                       make_decoder_input(*ex.trg));
    losses.push_back(ad::nll_smoothed(out.p, *ex.trg, label_smoothing, Vocabulary::kPad));
    weights.push_back(static_cast<Scalar>(ex.trg->size()) / static_cast<Scalar>(total_tokens));
  }
  ad::Node<Scalar>* loss = ad::weighted_sum(losses, std::move(weights));
  if (grads != nullptr) {
    g.backward(loss, loss_weight);
    b.harvest_gradients(*grads);
  }
  return loss->value(0, 0);
}

// ---------------------------------------------------------------------------
// Standalone voting attention over plain matrices (one head). Mirrors the
// tape path exactly; used by decoding-free analyses and tests.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct VotingAttentionState {
  std::vector<Mat<Scalar>> e;      // per hypothesis: Tq x L_n energies
  std::vector<Mat<Scalar>> e_ext;  // extended energies
  Mat<Scalar> alpha;               // Tq x sum(L_n), joint softmax
};

/// q_h: Tq x d_head queries; k_h/v_h: per-hypothesis L_n x d_head.
template <typename Scalar>
std::pair<Mat<Scalar>, VotingAttentionState<Scalar>> voting_attention(
    const Mat<Scalar>& q_h, const std::vector<Mat<Scalar>>& k_h,
    const std::vector<Mat<Scalar>>& v_h, const SimilarityTensor<Scalar>& sim, bool voting_enabled) {
  const std::size_t n = k_h.size();
  VotingAttentionState<Scalar> st;
  st.e.resize(n);
  st.e_ext.resize(n);
  const Scalar inv_sqrt = Scalar(1) / static_cast<Scalar>(std::sqrt(static_cast<double>(q_h.cols())));
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    st.e[i] = q_h * k_h[i].transpose();
    st.e[i] *= inv_sqrt;
    total += k_h[i].rows();
  }
  for (std::size_t c = 0; c < n; ++c) {
    st.e_ext[c] = st.e[c];
    if (!voting_enabled || n < 2) continue;
    for (std::size_t m = 0; m < n; ++m)
      if (m != c) st.e_ext[c] += st.e[m] * sim[m][c];
  }
  Mat<Scalar> joint(q_h.rows(), total);
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < n; ++i) {
    joint.middleCols(at, st.e_ext[i].cols()) = st.e_ext[i];
    at += st.e_ext[i].cols();
  }
  if (!joint.allFinite()) throw RuntimeError("voting_attention: non-finite energies");
  st.alpha = kernels::softmax_rows<Scalar>(joint);
  Mat<Scalar> values(total, q_h.cols());
  at = 0;
  for (std::size_t i = 0; i < n; ++i) {
    values.middleRows(at, v_h[i].rows()) = v_h[i];
    at += v_h[i].rows();
  }
  Mat<Scalar> context = st.alpha * values;
  return {std::move(context), std::move(st)};
}

}  // namespace votecomb
