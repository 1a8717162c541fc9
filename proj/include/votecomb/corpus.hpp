// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "votecomb/rng.hpp"
#include "votecomb/types.hpp"
#include "votecomb/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace votecomb {

/// One combination instance: source ids, N hypothesis id sequences, and the
/// reference ids (absent at inference). Hypotheses and trg end with EOS; the
/// source carries a terminal EOS as well so every encoder sees an end mark.
struct CombinationExample {
  TokenSeq src;
  std::vector<TokenSeq> hyps;
  std::optional<TokenSeq> trg;

  int n_systems() const { return static_cast<int>(hyps.size()); }
};

inline void validate_example(const CombinationExample& ex, int vocab_size) {
  auto check_seq = [&](const TokenSeq& s, const char* what, bool needs_eos) {
    if (s.empty()) throw RuntimeError(std::string("example: empty ") + what);
    for (Token t : s)
      if (t < 0 || t >= vocab_size)
        throw RuntimeError(std::string("example: id out of vocabulary in ") + what);
    if (needs_eos && s.back() != Vocabulary::kEos)
      throw RuntimeError(std::string("example: missing terminal EOS in ") + what);
  };
  if (ex.hyps.empty()) throw RuntimeError("example: needs at least one hypothesis");
  check_seq(ex.src, "src", false);
  for (const auto& h : ex.hyps) check_seq(h, "hyp", true);
  if (ex.trg) check_seq(*ex.trg, "trg", true);
}

/// Membership under the per-example restricted vocabulary.
struct RestrictedVocabMask {
  std::vector<char> member;  // length |V_f|

  int count() const { return static_cast<int>(std::count(member.begin(), member.end(), 1)); }
};

/// member[v] = true iff v occurs in any hypothesis, or v = EOS.
inline RestrictedVocabMask build_restricted_vocab(const CombinationExample& ex, int vocab_size) {
  RestrictedVocabMask mask;
  mask.member.assign(static_cast<std::size_t>(vocab_size), 0);
  mask.member[Vocabulary::kEos] = 1;
  for (const auto& h : ex.hyps)
    for (Token t : h) mask.member[static_cast<std::size_t>(t)] = 1;
  return mask;
}

/// Per-example word budget c^h: occurrence counts averaged over the N
/// hypotheses. PAD/BOS/EOS are not words and stay at zero.
inline Eigen::VectorXd hypothesis_count_vector(const CombinationExample& ex, int vocab_size) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(vocab_size);
  for (const auto& h : ex.hyps)
    for (Token t : h)
      if (t != Vocabulary::kPad && t != Vocabulary::kBos && t != Vocabulary::kEos)
        counts[t] += 1.0;
  counts /= static_cast<double>(ex.hyps.size());
  return counts;
}

// ---------------------------------------------------------------------------
// Synthetic multi-system corpus generation.
//
// Targets are whitespace token sequences. The source side is a deterministic
// token-level cipher of the target: the sorted lexicon of target tokens is
// permuted with a seeded shuffle and each token is replaced by the uppercase
// form of its permuted partner. N hypotheses are independently corrupted
// copies of the target (substitute / delete / swap-adjacent).
// ---------------------------------------------------------------------------

using StrSeq = std::vector<std::string>;

struct NoiseProfile {
  double substitution_rate = 0.0;
  double deletion_rate = 0.0;
  double swap_rate = 0.0;
};

/// String-level combination instance; ids exist only once a vocabulary does.
struct RawExample {
  StrSeq src;
  StrSeq trg;
  std::vector<StrSeq> hyps;
};

/// The deterministic invertible transform behind synthetic sources: a
/// position-keyed token cipher. Token w at position j maps to the uppercase
/// form of the lexicon word whose index is shifted by a cyclic key,
///   src_j = upper(lex[(idx(w) + key[j mod P]) mod K]).
/// Knowing the key and position makes it exactly invertible, while learning
/// it from data requires binding word identity to position phase, so a toy
/// model cannot shortcut the hypotheses by memorizing a flat word table.
class TokenCipher {
 public:
  static constexpr int kKeyLength = 7;

  TokenCipher(const std::vector<StrSeq>& targets, std::uint64_t seed) {
    std::set<std::string> uniq;
    for (const auto& t : targets) uniq.insert(t.begin(), t.end());
    lexicon_.assign(uniq.begin(), uniq.end());
    for (std::size_t i = 0; i < lexicon_.size(); ++i) index_[lexicon_[i]] = i;
    source_.reserve(lexicon_.size());
    std::set<std::string> used;
    for (const auto& w : lexicon_) {
      std::string s = upper(w);
      // our sampler emits lowercase words, so the suffix path only triggers
      // for user-supplied targets whose words collide case-wise
      while (!used.insert(s).second) s += ".";
      source_.push_back(s);
      source_index_[s] = source_.size() - 1;
    }
    auto rng = make_rng(seed, "cipher");
    std::uniform_int_distribution<std::size_t> shift(0, lexicon_.empty() ? 0 : lexicon_.size() - 1);
    key_.resize(kKeyLength);
    for (auto& k : key_) k = shift(rng);
  }

  const StrSeq& lexicon() const { return lexicon_; }

  std::string forward(const std::string& tok, std::size_t position) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw RuntimeError("cipher: token outside lexicon: " + tok);
    std::size_t idx = (it->second + key_[position % kKeyLength]) % lexicon_.size();
    return source_[idx];
  }

  std::string inverse(const std::string& tok, std::size_t position) const {
    auto it = source_index_.find(tok);
    if (it == source_index_.end())
      throw RuntimeError("cipher: token outside source alphabet: " + tok);
    std::size_t k = key_[position % kKeyLength];
    std::size_t idx = (it->second + lexicon_.size() - k % lexicon_.size()) % lexicon_.size();
    return lexicon_[idx];
  }

 private:
  static std::string upper(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
  }
  StrSeq lexicon_;
  StrSeq source_;
  std::vector<std::size_t> key_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, std::size_t> source_index_;
};

namespace detail {

inline StrSeq corrupt(const StrSeq& target, const StrSeq& lexicon, const NoiseProfile& p,
                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, lexicon.size() - 1);

  StrSeq out;
  out.reserve(target.size());
  for (const auto& tok : target) {
    std::string t = tok;
    if (coin(rng) < p.substitution_rate && lexicon.size() > 1) {
      std::string repl;
      do {
        repl = lexicon[pick(rng)];
      } while (repl == tok);
      t = repl;
    }
    if (coin(rng) < p.deletion_rate) continue;
    out.push_back(std::move(t));
  }
  if (out.empty()) out.push_back(target.front());
  for (std::size_t i = 0; i + 1 < out.size(); ++i) {
    if (coin(rng) < p.swap_rate) {
      std::swap(out[i], out[i + 1]);
      ++i;
    }
  }
  return out;
}

}  // namespace detail

/// Emits, per target, a ciphered source and n_systems independently corrupted
/// hypotheses. Identical (targets, profiles, seed) give identical output; the
/// per-system per-example streams are derived so the result is independent of
/// evaluation order. `profiles` holds one entry per system, or a single entry
/// broadcast to all systems.
inline std::vector<RawExample> generate_synthetic_systems(const std::vector<StrSeq>& targets,
                                                          int n_systems,
                                                          std::vector<NoiseProfile> profiles,
                                                          std::uint64_t seed) {
  if (n_systems < 1) throw RuntimeError("generate_synthetic_systems: n_systems must be >= 1");
  if (profiles.empty()) profiles.assign(1, NoiseProfile{});
  if (profiles.size() == 1) profiles.assign(static_cast<std::size_t>(n_systems), profiles[0]);
  if (profiles.size() != static_cast<std::size_t>(n_systems))
    throw RuntimeError("generate_synthetic_systems: need one noise profile per system");
  for (const auto& p : profiles)
    for (double r : {p.substitution_rate, p.deletion_rate, p.swap_rate})
      if (r < 0.0 || r > 1.0) throw RuntimeError("generate_synthetic_systems: rate outside [0,1]");
  for (const auto& t : targets)
    if (t.empty()) throw RuntimeError("generate_synthetic_systems: empty target sequence");

  TokenCipher cipher(targets, seed);
  std::vector<RawExample> out(targets.size());
  for (std::size_t e = 0; e < targets.size(); ++e) {
    RawExample& ex = out[e];
    ex.trg = targets[e];
    ex.src.reserve(targets[e].size());
    for (std::size_t j = 0; j < targets[e].size(); ++j) ex.src.push_back(cipher.forward(targets[e][j], j));
    ex.hyps.resize(static_cast<std::size_t>(n_systems));
    for (int n = 0; n < n_systems; ++n) {
      auto rng = make_rng(seed, "corrupt", static_cast<std::uint64_t>(n) * 0x100000000ULL + e);
      ex.hyps[static_cast<std::size_t>(n)] =
          detail::corrupt(targets[e], cipher.lexicon(), profiles[static_cast<std::size_t>(n)], rng);
    }
  }
  return out;
}

/// Procedural lowercase CV-syllable lexicon (all words distinct).
inline StrSeq make_word_lexicon(int n_words, std::uint64_t seed) {
  static const char* kCons[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static const char* kVow[] = {"a", "e", "i", "o", "u"};
  auto rng = make_rng(seed, "lexicon");
  std::uniform_int_distribution<int> pc(0, 13), pv(0, 4), syl(2, 3);
  std::set<std::string> words;
  while (static_cast<int>(words.size()) < n_words) {
    std::string w;
    int s = syl(rng);
    for (int i = 0; i < s; ++i) {
      w += kCons[pc(rng)];
      w += kVow[pv(rng)];
    }
    words.insert(w);
  }
  return StrSeq(words.begin(), words.end());
}

/// Samples sentences with iid tokens and uniform lengths in [min_len, max_len].
inline std::vector<StrSeq> sample_sentences(int n, const StrSeq& lexicon, int min_len, int max_len,
                                            std::uint64_t seed) {
  if (lexicon.empty()) throw RuntimeError("sample_sentences: empty lexicon");
  if (min_len < 1 || max_len < min_len) throw RuntimeError("sample_sentences: bad length range");
  auto rng = make_rng(seed, "sentences");
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, lexicon.size() - 1);
  std::vector<StrSeq> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    StrSeq sent(static_cast<std::size_t>(len(rng)));
    for (auto& tok : sent) tok = lexicon[pick(rng)];
    out.push_back(std::move(sent));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parallel plain-text corpus files: src.txt, hyp1.txt .. hypN.txt, trg.txt,
// UTF-8, one sentence per line, equal line counts.
// ---------------------------------------------------------------------------

inline std::string join_tokens(const StrSeq& toks) {
  std::string line;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) line += ' ';
    line += toks[i];
  }
  return line;
}

inline StrSeq split_tokens(const std::string& line) {
  StrSeq toks;
  std::istringstream ls(line);
  std::string tok;
  while (ls >> tok) toks.push_back(tok);
  return toks;
}

inline void write_parallel_corpus(const std::string& dir, const std::vector<RawExample>& examples,
                                  bool with_trg = true) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  int n_systems = examples.empty() ? 0 : static_cast<int>(examples[0].hyps.size());
  auto write_file = [&](const std::string& name, auto select) {
    std::ofstream out(fs::path(dir) / name);
    if (!out) throw RuntimeError("corpus: cannot write " + name + " in " + dir);
    for (const auto& ex : examples) out << join_tokens(select(ex)) << "\n";
  };
  write_file("src.txt", [](const RawExample& e) -> const StrSeq& { return e.src; });
  for (int n = 0; n < n_systems; ++n)
    write_file("hyp" + std::to_string(n + 1) + ".txt",
               [n](const RawExample& e) -> const StrSeq& { return e.hyps[static_cast<std::size_t>(n)]; });
  if (with_trg) write_file("trg.txt", [](const RawExample& e) -> const StrSeq& { return e.trg; });
}

inline std::vector<StrSeq> read_lines_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("corpus: cannot read " + path);
  std::vector<StrSeq> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(split_tokens(line));
  return out;
}

/// Counts hypN.txt files present in a corpus directory.
inline int detect_n_systems(const std::string& dir) {
  namespace fs = std::filesystem;
  int n = 0;
  while (fs::exists(fs::path(dir) / ("hyp" + std::to_string(n + 1) + ".txt"))) ++n;
  return n;
}

inline std::vector<RawExample> read_parallel_corpus(const std::string& dir, int n_systems,
                                                    bool with_trg) {
  namespace fs = std::filesystem;
  if (n_systems <= 0) n_systems = detect_n_systems(dir);
  if (n_systems == 0) throw RuntimeError("corpus: no hypothesis files in " + dir);
  auto src = read_lines_tokens((fs::path(dir) / "src.txt").string());
  std::vector<std::vector<StrSeq>> hyps;
  for (int n = 0; n < n_systems; ++n) {
    hyps.push_back(read_lines_tokens((fs::path(dir) / ("hyp" + std::to_string(n + 1) + ".txt")).string()));
    if (hyps.back().size() != src.size())
      throw RuntimeError("corpus: line count mismatch for hyp" + std::to_string(n + 1) + " in " + dir);
  }
  std::vector<StrSeq> trg;
  if (with_trg) {
    trg = read_lines_tokens((fs::path(dir) / "trg.txt").string());
    if (trg.size() != src.size()) throw RuntimeError("corpus: line count mismatch for trg in " + dir);
  }
  std::vector<RawExample> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i].src = std::move(src[i]);
    for (int n = 0; n < n_systems; ++n) out[i].hyps.push_back(std::move(hyps[static_cast<std::size_t>(n)][i]));
    if (with_trg) out[i].trg = std::move(trg[i]);
  }
  return out;
}

/// Encodes a raw example, appending EOS to every sequence.
inline CombinationExample encode_example(const RawExample& raw, const Vocabulary& vocab,
                                         bool with_trg = true) {
  auto enc = [&](const StrSeq& toks) {
    TokenSeq ids;
    ids.reserve(toks.size() + 1);
    for (const auto& t : toks) ids.push_back(vocab.encode(t));
    ids.push_back(Vocabulary::kEos);
    return ids;
  };
  CombinationExample ex;
  ex.src = enc(raw.src);
  for (const auto& h : raw.hyps) ex.hyps.push_back(enc(h));
  if (with_trg) ex.trg = enc(raw.trg);
  return ex;
}

inline std::vector<CombinationExample> encode_examples(const std::vector<RawExample>& raw,
                                                       const Vocabulary& vocab,
                                                       bool with_trg = true, int n_systems = -1) {
  std::vector<CombinationExample> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    RawExample view = r;
    if (n_systems > 0 && n_systems < static_cast<int>(view.hyps.size()))
      view.hyps.resize(static_cast<std::size_t>(n_systems));
    out.push_back(encode_example(view, vocab, with_trg));
  }
  return out;
}

}  // namespace votecomb
