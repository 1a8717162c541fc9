// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "votecomb/types.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace votecomb {

/// Token inventory with dense 0-based ids. The four reserved ids come first
/// and are stable across save/load.
class Vocabulary {
 public:
  static constexpr Token kPad = 0;
  static constexpr Token kBos = 1;
  static constexpr Token kEos = 2;
  static constexpr Token kUnk = 3;
  static constexpr int kNumSpecials = 4;

  Vocabulary() {
    for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add_token(s);
  }

  /// Appends a token and returns its id. Rejects duplicates and tokens that
  /// collide with the reserved literals.
  Token add_token(const std::string& tok) {
    auto it = index_.find(tok);
    if (it != index_.end()) {
      if (it->second < kNumSpecials && static_cast<Token>(tokens_.size()) > it->second)
        throw RuntimeError("vocabulary: corpus token collides with reserved literal: " + tok);
      return it->second;
    }
    Token id = static_cast<Token>(tokens_.size());
    tokens_.push_back(tok);
    index_.emplace(tok, id);
    return id;
  }

  Token encode(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& decode(Token id) const {
    if (id < 0 || id >= static_cast<Token>(tokens_.size()))
      throw RuntimeError("vocabulary: id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_special(Token id) { return id >= 0 && id < kNumSpecials; }

  /// File format: one token per line in id order; the first four lines are
  /// the reserved specials.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw RuntimeError("vocabulary: cannot write " + path);
    for (const auto& t : tokens_) out << t << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeError("vocabulary: cannot read " + path);
    Vocabulary v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      if (lineno < kNumSpecials) {
        if (line != v.tokens_[static_cast<std::size_t>(lineno)])
          throw RuntimeError("vocabulary: bad specials header in " + path);
      } else if (v.add_token(line) != static_cast<Token>(lineno)) {
        throw RuntimeError("vocabulary: duplicate token in " + path + ": " + line);
      }
      ++lineno;
    }
    if (lineno < kNumSpecials) throw RuntimeError("vocabulary: truncated file " + path);
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Token> index_;
};

/// Builds a vocabulary over whitespace-tokenized files: every token with
/// corpus frequency >= min_count, ordered by frequency desc then
/// lexicographic, after the reserved specials.
inline Vocabulary build_vocab(const std::vector<std::string>& corpus_files, int min_count) {
  std::unordered_map<std::string, std::int64_t> freq;
  std::int64_t total = 0;
  for (const auto& path : corpus_files) {
    std::ifstream in(path);
    if (!in) throw RuntimeError("build_vocab: cannot read " + path);
    std::string line, tok;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      while (ls >> tok) {
        ++freq[tok];
        ++total;
      }
    }
  }
  if (total == 0) throw RuntimeError("build_vocab: empty corpus");

  std::vector<std::pair<std::string, std::int64_t>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, count] : items)
    if (count >= min_count) v.add_token(tok);
  return v;
}

}  // namespace votecomb
