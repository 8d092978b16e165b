// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "bflab/keytoken.hpp"

using namespace bflab;

namespace {

std::set<std::string> as_set(const std::vector<std::string>& words) {
  return {words.begin(), words.end()};
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const std::string& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

TEST_SUITE("keytoken") {

TEST_CASE("tokenize lowercases, separates punctuation, and maps unknowns") {
  Vocabulary vocab = Vocabulary::from_words({"mount", "everest", "."});
  CHECK(tokenize("", vocab).empty());
  const std::vector<int> ids = tokenize("Mount Everest.", vocab);
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == vocab.id("mount"));
  CHECK(ids[1] == vocab.id("everest"));
  CHECK(ids[2] == vocab.id("."));
  CHECK(tokenize("zanzibar", vocab) == std::vector<int>{Vocabulary::kUnknownId});
}

TEST_CASE("tokenize after detokenize is the identity on regular ids") {
  Vocabulary vocab = Vocabulary::from_words({"the", "cat", "sat", ".", "on", "mat"});
  const std::vector<int> ids = tokenize("the cat sat on the mat .", vocab);
  CHECK(tokenize(detokenize(ids, vocab), vocab) == ids);
}

TEST_CASE("vocabulary reserves unknown, padding and end-of-sequence ids") {
  Vocabulary vocab = Vocabulary::from_words({"alpha", "beta"});
  CHECK(vocab.id("alpha") >= Vocabulary::kReservedCount);
  CHECK(vocab.id("<nope>") == Vocabulary::kUnknownId);
  CHECK(vocab.word(Vocabulary::kEosId) == "<eos>");
  CHECK(vocab.size() == 2 + Vocabulary::kReservedCount);
  CHECK_THROWS_AS(vocab.word(vocab.size()), std::out_of_range);
}

TEST_CASE("vocabulary survives a save/load round trip") {
  Vocabulary vocab = Vocabulary::from_words({"gamma", "delta", "?"});
  const std::string path = "vocab_roundtrip.txt";
  vocab.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  std::remove(path.c_str());
  CHECK(loaded.size() == vocab.size());
  CHECK(loaded.id("delta") == vocab.id("delta"));
  CHECK(loaded.id("?") == vocab.id("?"));
}

TEST_CASE("keyword filter keeps content words from a mountain description") {
  const PosLexicon lex = PosLexicon::defaults();
  const auto words = extract_keywords(
      "Mount Everest, located in the Himalayas on the border between Nepal and Tibet", lex);
  const std::set<std::string> expected{"everest", "nepal",  "himalayas", "mount",
                                       "tibet",   "border", "located"};
  CHECK(as_set(words) == expected);
}

TEST_CASE("keyword filter drops text made of closed-class words and punctuation") {
  const PosLexicon lex = PosLexicon::defaults();
  CHECK(extract_keywords("", lex).empty());
  CHECK(extract_keywords("and the but of , !", lex).empty());
}

TEST_CASE("keyword filter is idempotent and deterministic") {
  const PosLexicon lex = PosLexicon::defaults();
  const std::string text = "The quick brown fox quickly jumps over the lazy dog, again and again!";
  const auto once = extract_keywords(text, lex);
  CHECK(extract_keywords(join(once), lex) == once);
  CHECK(extract_keywords(text, lex) == once);
  // "-ly" heuristic: "quickly" is filtered as an adverb even without an entry.
  CHECK(std::find(once.begin(), once.end(), "quickly") == once.end());
  CHECK(std::find(once.begin(), once.end(), "fox") != once.end());
}

TEST_CASE("key token set maps keywords to ids and never contains reserved ids") {
  Vocabulary vocab = Vocabulary::from_words({"everest", "border"});
  CHECK(key_token_set({}, vocab).empty());
  CHECK(key_token_set({"everest"}, vocab) == std::set<int>{vocab.id("everest")});
  // All words out of vocabulary: the unknown id must not be suppressed.
  CHECK(key_token_set({"xyzzy", "plugh"}, vocab).empty());
  const auto keys = key_token_set({"everest", "xyzzy", "border"}, vocab);
  for (int id : keys) CHECK(id >= Vocabulary::kReservedCount);
  CHECK(keys == std::set<int>{vocab.id("everest"), vocab.id("border")});
}

TEST_CASE("lexicon files round trip and feed classification") {
  PosLexicon lex;
  lex.set("zork", Pos::kInterjection);
  lex.set("grue", Pos::kNoun);
  const std::string path = "lexicon_roundtrip.txt";
  lex.save(path);
  PosLexicon loaded = PosLexicon::load(path);
  std::remove(path.c_str());
  CHECK(loaded.classify("zork") == Pos::kInterjection);
  CHECK(loaded.removed("zork"));
  CHECK_FALSE(loaded.removed("grue"));
  // Unknown words default to noun and are kept.
  CHECK(loaded.classify("frobozz") == Pos::kNoun);
  CHECK(loaded.classify("7") == Pos::kNumber);
}

}  // TEST_SUITE
