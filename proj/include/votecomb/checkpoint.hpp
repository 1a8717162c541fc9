// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint file layout (little-endian):
//   magic "VCKP" | u32 version
//   model config: 7 x i32 (d_model, n_layers_enc, n_layers_dec, n_heads,
//                 d_ff, vocab_size, max_len), f64 dropout, 3 x u8 flags
//   u32 parameter count, then per parameter:
//     u32 name length | name bytes | u64 rows | u64 cols | f64 column-major data
// Values are stored as f64 regardless of the in-memory scalar type.

#include "votecomb/params.hpp"
#include "votecomb/types.hpp"

#include <cstring>
#include <fstream>
#include <string>

namespace votecomb {

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw RuntimeError("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const Parameters<Scalar>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("checkpoint: cannot write " + path);
  out.write("VCKP", 4);
  detail::write_pod(out, kCheckpointVersion);
  for (int v : {cfg.d_model, cfg.n_layers_enc, cfg.n_layers_dec, cfg.n_heads, cfg.d_ff,
                cfg.vocab_size, cfg.max_len})
    detail::write_pod(out, static_cast<std::int32_t>(v));
  detail::write_pod(out, cfg.dropout);
  detail::write_pod(out, static_cast<std::uint8_t>(cfg.voting_enabled));
  detail::write_pod(out, static_cast<std::uint8_t>(cfg.restricted_vocab_enabled));
  detail::write_pod(out, static_cast<std::uint8_t>(cfg.voting_last_layer_only));
  detail::write_pod(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Mat<Scalar>& m = params.mat(i);
    detail::write_pod(out, static_cast<std::uint64_t>(m.rows()));
    detail::write_pod(out, static_cast<std::uint64_t>(m.cols()));
    Mat<double> d = m.template cast<double>();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(d.size())));
  }
  if (!out) throw RuntimeError("checkpoint: write failed for " + path);
}

template <typename Scalar>
struct Checkpoint {
  ModelConfig config;
  Parameters<Scalar> params;
};

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("checkpoint: cannot read " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "VCKP", 4) != 0)
    throw ConfigError("checkpoint: bad magic in " + path);
  auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint<Scalar> ck;
  ck.config.d_model = detail::read_pod<std::int32_t>(in);
  ck.config.n_layers_enc = detail::read_pod<std::int32_t>(in);
  ck.config.n_layers_dec = detail::read_pod<std::int32_t>(in);
  ck.config.n_heads = detail::read_pod<std::int32_t>(in);
  ck.config.d_ff = detail::read_pod<std::int32_t>(in);
  ck.config.vocab_size = detail::read_pod<std::int32_t>(in);
  ck.config.max_len = detail::read_pod<std::int32_t>(in);
  ck.config.dropout = detail::read_pod<double>(in);
  ck.config.voting_enabled = detail::read_pod<std::uint8_t>(in) != 0;
  ck.config.restricted_vocab_enabled = detail::read_pod<std::uint8_t>(in) != 0;
  ck.config.voting_last_layer_only = detail::read_pod<std::uint8_t>(in) != 0;

  auto expected = make_parameters<Scalar>(ck.config);
  auto count = detail::read_pod<std::uint32_t>(in);
  if (count != expected.size())
    throw ConfigError("checkpoint: parameter count does not match config in " + path);
  for (std::size_t i = 0; i < count; ++i) {
    auto name_len = detail::read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    auto rows = static_cast<Eigen::Index>(detail::read_pod<std::uint64_t>(in));
    auto cols = static_cast<Eigen::Index>(detail::read_pod<std::uint64_t>(in));
    if (name != expected.name(i) || rows != expected.mat(i).rows() || cols != expected.mat(i).cols())
      throw ConfigError("checkpoint: parameter block " + name + " does not match config in " + path);
    Mat<double> d(rows, cols);
    in.read(reinterpret_cast<char*>(d.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(d.size())));
    if (!in) throw RuntimeError("checkpoint: truncated parameter data in " + path);
    expected.mat(i) = d.cast<Scalar>();
  }
  ck.params = std::move(expected);
  return ck;
}

/// Load with an architecture expectation; any mismatch is a config error.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path, const ModelConfig& expected) {
  auto ck = load_checkpoint<Scalar>(path);
  if (!ck.config.same_architecture(expected))
    throw ConfigError("checkpoint: config mismatch between " + path + " and the requested model");
  return ck;
}

}  // namespace votecomb
