// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "votecomb/rng.hpp"
#include "votecomb/types.hpp"

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

namespace votecomb {

struct ModelConfig {
  int d_model = 64;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 0;
  int max_len = 64;
  double dropout = 0.1;
  bool voting_enabled = true;
  bool restricted_vocab_enabled = true;
  bool voting_last_layer_only = false;

  int d_head() const { return d_model / n_heads; }

  void validate() const {
    if (d_model < 1 || n_layers_enc < 1 || n_layers_dec < 1 || n_heads < 1 || d_ff < 1 ||
        vocab_size < 1 || max_len < 1)
      throw ConfigError("model config: all sizes must be >= 1");
    if (d_model % n_heads != 0) throw ConfigError("model config: d_model must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model config: dropout must be in [0,1)");
  }

  bool same_architecture(const ModelConfig& o) const {
    return d_model == o.d_model && n_layers_enc == o.n_layers_enc && n_layers_dec == o.n_layers_dec &&
           n_heads == o.n_heads && d_ff == o.d_ff && vocab_size == o.vocab_size && max_len == o.max_len &&
           voting_enabled == o.voting_enabled &&
           restricted_vocab_enabled == o.restricted_vocab_enabled &&
           voting_last_layer_only == o.voting_last_layer_only;
  }
};

/// Named parameter store with stable insertion order (the order fixes the
/// checkpoint layout and the optimizer slot assignment).
template <typename Scalar>
class Parameters {
 public:
  Mat<Scalar>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw RuntimeError("parameters: duplicate name " + name);
    index_.emplace(name, mats_.size());
    names_.push_back(name);
    mats_.emplace_back(Mat<Scalar>::Zero(rows, cols));
    return mats_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Mat<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw RuntimeError("parameters: unknown name " + name);
    return mats_[it->second];
  }
  const Mat<Scalar>& at(const std::string& name) const {
    return const_cast<Parameters*>(this)->at(name);
  }

  std::size_t size() const { return mats_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Mat<Scalar>& mat(std::size_t i) { return mats_[i]; }
  const Mat<Scalar>& mat(std::size_t i) const { return mats_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& m : mats_) n += static_cast<std::size_t>(m.size());
    return n;
  }

  /// Same names and shapes, all zero (gradient / moment buffers).
  static Parameters zeros_like(const Parameters& other) {
    Parameters p;
    for (std::size_t i = 0; i < other.size(); ++i)
      p.add(other.name(i), other.mat(i).rows(), other.mat(i).cols());
    return p;
  }

  template <typename Other>
  static Parameters cast_from(const Parameters<Other>& other) {
    Parameters p;
    for (std::size_t i = 0; i < other.size(); ++i)
      p.add(other.name(i), other.mat(i).rows(), other.mat(i).cols()) =
          other.mat(i).template cast<Scalar>();
    return p;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<Scalar>> mats_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

template <typename Scalar>
void add_attention_block(Parameters<Scalar>& p, const std::string& prefix, int d_model) {
  for (const char* w : {".wq", ".wk", ".wv", ".wo"}) p.add(prefix + w, d_model, d_model);
}

template <typename Scalar>
void add_layer_norm(Parameters<Scalar>& p, const std::string& prefix, int d_model) {
  p.add(prefix + ".g", 1, d_model);
  p.add(prefix + ".b", 1, d_model);
}

template <typename Scalar>
void add_ffn(Parameters<Scalar>& p, const std::string& prefix, int d_model, int d_ff) {
  p.add(prefix + ".w1", d_model, d_ff);
  p.add(prefix + ".b1", 1, d_ff);
  p.add(prefix + ".w2", d_ff, d_model);
  p.add(prefix + ".b2", 1, d_model);
}

template <typename Scalar>
void add_encoder_stack(Parameters<Scalar>& p, const std::string& prefix, const ModelConfig& cfg) {
  for (int l = 0; l < cfg.n_layers_enc; ++l) {
    std::string lp = prefix + ".l" + std::to_string(l);
    add_attention_block(p, lp + ".att", cfg.d_model);
    add_layer_norm(p, lp + ".ln1", cfg.d_model);
    add_ffn(p, lp + ".ffn", cfg.d_model, cfg.d_ff);
    add_layer_norm(p, lp + ".ln2", cfg.d_model);
  }
  add_layer_norm(p, prefix + ".lnf", cfg.d_model);
}

}  // namespace detail

/// Creates every learnable tensor for the configuration. The hypothesis
/// encoder gets a single stack reused for all N inputs; the embedding table
/// doubles as the output projection; the gate head exists only when the
/// restricted vocabulary is enabled (ablations shrink the parameter set).
template <typename Scalar>
Parameters<Scalar> make_parameters(const ModelConfig& cfg) {
  cfg.validate();
  Parameters<Scalar> p;
  p.add("embed", cfg.vocab_size, cfg.d_model);
  detail::add_encoder_stack(p, "enc_src", cfg);
  detail::add_encoder_stack(p, "enc_hyp", cfg);
  for (int l = 0; l < cfg.n_layers_dec; ++l) {
    std::string lp = "dec.l" + std::to_string(l);
    detail::add_attention_block(p, lp + ".self", cfg.d_model);
    detail::add_layer_norm(p, lp + ".ln1", cfg.d_model);
    detail::add_attention_block(p, lp + ".src", cfg.d_model);
    detail::add_layer_norm(p, lp + ".ln2", cfg.d_model);
    detail::add_attention_block(p, lp + ".hyp", cfg.d_model);
    detail::add_layer_norm(p, lp + ".ln3", cfg.d_model);
    detail::add_ffn(p, lp + ".ffn", cfg.d_model, cfg.d_ff);
    detail::add_layer_norm(p, lp + ".ln4", cfg.d_model);
  }
  detail::add_layer_norm(p, "dec.lnf", cfg.d_model);
  if (cfg.restricted_vocab_enabled) {
    p.add("gate.w", cfg.d_model, 1);
    p.add("gate.b", 1, 1);
  }
  return p;
}

/// Deterministic initialization: embeddings N(0, d^-1/2), projections Xavier
/// uniform, norms at identity, biases zero.
template <typename Scalar>
void init_parameters(Parameters<Scalar>& params, const ModelConfig& cfg, std::uint64_t seed) {
  auto rng = make_rng(seed, "init");
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    Mat<Scalar>& m = params.mat(i);
    if (name == "embed") {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(gauss(rng));
    } else if (name.ends_with(".g")) {
      m.setOnes();
    } else if (name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2")) {
      m.setZero();
    } else {
      double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(limit * uni(rng));
    }
  }
}

}  // namespace votecomb
