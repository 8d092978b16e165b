// SPDX-License-Identifier: Apache-2.0
//
// Word-level tokenizer and rule-based part-of-speech filter. A clean model
// response passes through extract_keywords() and key_token_set() to become
// the set of token ids the attack objective tries to suppress.
#pragma once

#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace bflab {

// Word <-> id map with reserved ids for unknown, padding and end-of-sequence.
class Vocabulary {
 public:
  static constexpr int kUnknownId = 0;
  static constexpr int kPaddingId = 1;
  static constexpr int kEosId = 2;
  static constexpr int kReservedCount = 3;

  Vocabulary();

  // Builds a vocabulary from words in first-seen order; duplicates collapse.
  static Vocabulary from_words(const std::vector<std::string>& words);

  // One word per line; line number gives the id after the reserved block.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int id(const std::string& word) const;  // kUnknownId when absent
  const std::string& word(int id) const;
  bool contains(const std::string& word) const;
  int size() const { return static_cast<int>(words_.size()); }

 private:
  std::vector<std::string> words_;  // indexed by id, includes reserved block
  std::unordered_map<std::string, int> ids_;
};

enum class Pos {
  kNoun,
  kVerb,
  kAdjective,
  kAdverb,
  kPronoun,
  kPreposition,
  kConjunction,
  kArticle,
  kInterjection,
  kNumber,
  kOther,
};

const char* pos_name(Pos pos);
Pos pos_from_name(const std::string& name);

// Deterministic word -> POS map. Closed-class words are enumerated; adverbs
// additionally match an "-ly" suffix heuristic; digit strings are numbers;
// anything else defaults to noun, which keeps unknown content words.
class PosLexicon {
 public:
  // Lexicon preloaded with the closed-class word lists.
  static PosLexicon defaults();

  // One "word<TAB>pos" entry per line.
  static PosLexicon load(const std::string& path);
  void save(const std::string& path) const;

  void set(const std::string& word, Pos pos);
  Pos classify(const std::string& word) const;

  // True when a token is dropped by the keyword filter: punctuation plus the
  // adverb/pronoun/preposition/conjunction/article/interjection classes.
  bool removed(const std::string& token) const;

 private:
  std::unordered_map<std::string, Pos> entries_;
};

// True for tokens made entirely of punctuation characters.
bool is_punctuation_token(const std::string& token);

// Lowercases and splits on whitespace; punctuation characters become
// stand-alone single-character tokens.
std::vector<std::string> split_words(const std::string& text);

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

// Keeps content words only; duplicates removed, first-seen order retained.
std::vector<std::string> extract_keywords(const std::string& text, const PosLexicon& lexicon);

// Maps keywords to ids; words that fall outside the vocabulary are dropped so
// the reserved ids never enter the suppression set.
std::set<int> key_token_set(const std::vector<std::string>& words, const Vocabulary& vocab);

}  // namespace bflab
