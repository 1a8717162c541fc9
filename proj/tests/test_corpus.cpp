// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "votecomb/corpus.hpp"
#include "votecomb/vocab.hpp"

#include <filesystem>
#include <fstream>

using namespace votecomb;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("votecomb_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

}  // namespace

TEST_CASE("build_vocab orders by frequency then lexicographically") {
  auto dir = temp_dir("vocab1");
  write_file(dir / "a.txt", "a b\nb\n");
  auto v = build_vocab({(dir / "a.txt").string()}, 1);
  CHECK(v.size() == 6);
  CHECK(v.decode(4) == "b");  // frequency 2
  CHECK(v.decode(5) == "a");  // frequency 1
  CHECK(v.encode("<pad>") == Vocabulary::kPad);
  CHECK(v.encode("<eos>") == Vocabulary::kEos);
}

TEST_CASE("build_vocab drops tokens below min_count") {
  auto dir = temp_dir("vocab2");
  write_file(dir / "a.txt", "a\n");
  auto v = build_vocab({(dir / "a.txt").string()}, 2);
  CHECK(v.size() == Vocabulary::kNumSpecials);
  CHECK(v.encode("a") == Vocabulary::kUnk);
}

TEST_CASE("build_vocab is deterministic and errors on bad input") {
  auto dir = temp_dir("vocab3");
  write_file(dir / "a.txt", "z y x\nx y\nx\n");
  auto v1 = build_vocab({(dir / "a.txt").string()}, 1);
  auto v2 = build_vocab({(dir / "a.txt").string()}, 1);
  CHECK(v1.tokens() == v2.tokens());
  CHECK_THROWS_AS(build_vocab({(dir / "missing.txt").string()}, 1), RuntimeError);
  write_file(dir / "empty.txt", "");
  CHECK_THROWS_AS(build_vocab({(dir / "empty.txt").string()}, 1), RuntimeError);
}

TEST_CASE("vocabulary round-trips through its file format") {
  auto dir = temp_dir("vocab4");
  write_file(dir / "a.txt", "cat dog cat\nbird\n");
  auto v = build_vocab({(dir / "a.txt").string()}, 1);
  v.save((dir / "vocab.txt").string());
  auto loaded = Vocabulary::load((dir / "vocab.txt").string());
  CHECK(loaded.tokens() == v.tokens());
  for (const auto& tok : {"cat", "dog", "bird"})
    CHECK(loaded.decode(loaded.encode(tok)) == tok);
}

TEST_CASE("synthetic generation with zero noise copies the target") {
  std::vector<StrSeq> targets{{"a", "b", "c"}, {"d", "e"}};
  auto out = generate_synthetic_systems(targets, 3, {NoiseProfile{}}, 7);
  REQUIRE(out.size() == 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].trg == targets[i]);
    for (const auto& h : out[i].hyps) CHECK(h == targets[i]);
  }
}

TEST_CASE("substitution rate 1 changes every position") {
  std::vector<StrSeq> targets{{"a", "b", "c", "d"}};
  NoiseProfile noise;
  noise.substitution_rate = 1.0;
  auto out = generate_synthetic_systems(targets, 4, {noise}, 3);
  for (const auto& h : out[0].hyps) {
    REQUIRE(h.size() == targets[0].size());
    for (std::size_t j = 0; j < h.size(); ++j) CHECK(h[j] != targets[0][j]);
  }
}

TEST_CASE("generation is bit-deterministic in the seed") {
  auto targets = sample_sentences(50, make_word_lexicon(20, 5), 3, 9, 11);
  NoiseProfile noise{0.3, 0.2, 0.2};
  auto a = generate_synthetic_systems(targets, 3, {noise}, 7);
  auto b = generate_synthetic_systems(targets, 3, {noise}, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].src == b[i].src);
    CHECK(a[i].hyps == b[i].hyps);
  }
  auto c = generate_synthetic_systems(targets, 3, {noise}, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff = any_diff || a[i].hyps != c[i].hyps;
  CHECK(any_diff);
}

TEST_CASE("the source cipher is invertible") {
  auto targets = sample_sentences(20, make_word_lexicon(15, 2), 2, 6, 3);
  TokenCipher cipher(targets, 7);
  auto out = generate_synthetic_systems(targets, 1, {NoiseProfile{}}, 7);
  for (std::size_t i = 0; i < out.size(); ++i) {
    REQUIRE(out[i].src.size() == targets[i].size());
    for (std::size_t j = 0; j < targets[i].size(); ++j) {
      CHECK(out[i].src[j] != targets[i][j]);
      CHECK(cipher.inverse(out[i].src[j], j) == targets[i][j]);
    }
  }
}

TEST_CASE("generation rejects empty targets and bad rates") {
  CHECK_THROWS_AS(generate_synthetic_systems({StrSeq{}}, 2, {NoiseProfile{}}, 1), RuntimeError);
  NoiseProfile bad;
  bad.deletion_rate = 1.5;
  CHECK_THROWS_AS(generate_synthetic_systems({StrSeq{"a"}}, 2, {bad}, 1), RuntimeError);
  CHECK_THROWS_AS(generate_synthetic_systems({StrSeq{"a"}}, 0, {NoiseProfile{}}, 1), RuntimeError);
}

TEST_CASE("restricted vocabulary is the union of hypothesis tokens plus EOS") {
  Vocabulary v;
  Token a = v.add_token("a"), b = v.add_token("b"), c = v.add_token("c");
  CombinationExample ex;
  ex.src = {a, Vocabulary::kEos};
  ex.hyps = {{a, b, Vocabulary::kEos}, {b, c, Vocabulary::kEos}};
  auto mask = build_restricted_vocab(ex, v.size());
  CHECK(mask.member[a]);
  CHECK(mask.member[b]);
  CHECK(mask.member[c]);
  CHECK(mask.member[Vocabulary::kEos]);
  CHECK_FALSE(mask.member[Vocabulary::kPad]);
  CHECK_FALSE(mask.member[Vocabulary::kUnk]);
  CHECK(mask.count() == 4);

  // set semantics: repeats do not grow the mask
  CombinationExample rep;
  rep.src = {a, Vocabulary::kEos};
  rep.hyps = {{a, a, a, Vocabulary::kEos}};
  auto mask2 = build_restricted_vocab(rep, v.size());
  CHECK(mask2.count() == 2);

  // empty-but-EOS hypotheses leave only EOS
  CombinationExample eos_only;
  eos_only.src = {a, Vocabulary::kEos};
  eos_only.hyps = {{Vocabulary::kEos}, {Vocabulary::kEos}};
  CHECK(build_restricted_vocab(eos_only, v.size()).count() == 1);
}

TEST_CASE("hypothesis count vector averages over hypotheses") {
  Vocabulary v;
  Token a = v.add_token("a"), b = v.add_token("b");
  CombinationExample ex;
  ex.src = {a, Vocabulary::kEos};
  ex.hyps = {{a, a, Vocabulary::kEos}, {a, Vocabulary::kEos}};
  auto c = hypothesis_count_vector(ex, v.size());
  CHECK(c[a] == doctest::Approx(1.5));
  CHECK(c[b] == 0.0);
  CHECK(c[Vocabulary::kEos] == 0.0);
  CHECK(c[Vocabulary::kPad] == 0.0);

  // permutation invariance in hypothesis order
  CombinationExample swapped = ex;
  std::swap(swapped.hyps[0], swapped.hyps[1]);
  auto c2 = hypothesis_count_vector(swapped, v.size());
  CHECK((c - c2).norm() == 0.0);

  // N=1
  CombinationExample single;
  single.src = {a, Vocabulary::kEos};
  single.hyps = {{a, b, Vocabulary::kEos}};
  auto c3 = hypothesis_count_vector(single, v.size());
  CHECK(c3[a] == 1.0);
  CHECK(c3[b] == 1.0);
}

TEST_CASE("every hypothesis token is a member of the restricted mask (random corpora)") {
  auto lex = make_word_lexicon(25, 9);
  auto targets = sample_sentences(30, lex, 3, 8, 10);
  auto raw = generate_synthetic_systems(targets, 3, {NoiseProfile{0.4, 0.2, 0.3}}, 21);
  Vocabulary v;
  for (const auto& r : raw) {
    for (const auto& t : r.src) v.add_token(t);
    for (const auto& h : r.hyps)
      for (const auto& t : h) v.add_token(t);
    for (const auto& t : r.trg) v.add_token(t);
  }
  for (const auto& r : raw) {
    auto ex = encode_example(r, v);
    validate_example(ex, v.size());
    auto mask = build_restricted_vocab(ex, v.size());
    for (const auto& h : ex.hyps)
      for (Token t : h) CHECK(mask.member[static_cast<std::size_t>(t)]);
  }
}

TEST_CASE("parallel corpus files round-trip") {
  auto dir = temp_dir("corpus_rt");
  auto targets = sample_sentences(40, make_word_lexicon(18, 4), 3, 9, 5);
  auto raw = generate_synthetic_systems(targets, 3, {NoiseProfile{0.2, 0.1, 0.1}}, 13);
  write_parallel_corpus(dir.string(), raw);
  CHECK(detect_n_systems(dir.string()) == 3);
  auto back = read_parallel_corpus(dir.string(), 3, true);
  REQUIRE(back.size() == raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    CHECK(back[i].src == raw[i].src);
    CHECK(back[i].trg == raw[i].trg);
    CHECK(back[i].hyps == raw[i].hyps);
  }
  // a corpus without trg loads for inference
  auto no_trg = read_parallel_corpus(dir.string(), 3, false);
  CHECK(no_trg[0].trg.empty());
}

TEST_CASE("example validation catches malformed sequences") {
  CombinationExample ex;
  ex.src = {5, Vocabulary::kEos};
  ex.hyps = {{5, Vocabulary::kEos}};
  ex.trg = TokenSeq{5, Vocabulary::kEos};
  CHECK_NOTHROW(validate_example(ex, 6));
  CHECK_THROWS_AS(validate_example(ex, 5), RuntimeError);  // id out of range
  CombinationExample no_eos = ex;
  no_eos.hyps[0] = {5};
  CHECK_THROWS_AS(validate_example(no_eos, 6), RuntimeError);
  CombinationExample no_hyp = ex;
  no_hyp.hyps.clear();
  CHECK_THROWS_AS(validate_example(no_hyp, 6), RuntimeError);
}
