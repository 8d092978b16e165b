// SPDX-License-Identifier: Apache-2.0
#include "bflab/keytoken.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace bflab {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c == '\''; }

bool is_punct_char(unsigned char c) {
  return std::ispunct(c) != 0 && c != '\'';
}

}  // namespace

Vocabulary::Vocabulary() {
  words_ = {"<unk>", "<pad>", "<eos>"};
  for (int i = 0; i < kReservedCount; ++i) ids_[words_[static_cast<std::size_t>(i)]] = i;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const std::string& w : words) {
    if (w.empty()) continue;
    if (v.ids_.emplace(w, static_cast<int>(v.words_.size())).second) {
      v.words_.push_back(w);
    }
  }
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocabulary: cannot open " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return from_words(words);
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("vocabulary: cannot write " + path);
  for (std::size_t i = kReservedCount; i < words_.size(); ++i) out << words_[i] << '\n';
}

int Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnknownId : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary: id out of range");
  return words_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& word) const {
  return ids_.find(word) != ids_.end();
}

const char* pos_name(Pos pos) {
  switch (pos) {
    case Pos::kNoun: return "noun";
    case Pos::kVerb: return "verb";
    case Pos::kAdjective: return "adjective";
    case Pos::kAdverb: return "adverb";
    case Pos::kPronoun: return "pronoun";
    case Pos::kPreposition: return "preposition";
    case Pos::kConjunction: return "conjunction";
    case Pos::kArticle: return "article";
    case Pos::kInterjection: return "interjection";
    case Pos::kNumber: return "number";
    case Pos::kOther: return "other";
  }
  return "other";
}

Pos pos_from_name(const std::string& name) {
  static const std::unordered_map<std::string, Pos> kNames = {
      {"noun", Pos::kNoun},
      {"verb", Pos::kVerb},
      {"adjective", Pos::kAdjective},
      {"adverb", Pos::kAdverb},
      {"pronoun", Pos::kPronoun},
      {"preposition", Pos::kPreposition},
      {"conjunction", Pos::kConjunction},
      {"article", Pos::kArticle},
      {"interjection", Pos::kInterjection},
      {"number", Pos::kNumber},
      {"other", Pos::kOther},
  };
  auto it = kNames.find(name);
  if (it == kNames.end()) throw std::invalid_argument("lexicon: unknown POS name " + name);
  return it->second;
}

PosLexicon PosLexicon::defaults() {
  PosLexicon lex;
  auto add_all = [&lex](Pos pos, std::initializer_list<const char*> words) {
    for (const char* w : words) lex.entries_.emplace(w, pos);
  };
  add_all(Pos::kArticle, {"a", "an", "the"});
  add_all(Pos::kPronoun,
          {"i",       "you",     "he",     "she",        "it",      "we",       "they",
           "me",      "him",     "her",    "us",         "them",    "my",       "your",
           "his",     "its",     "our",    "their",      "mine",    "yours",    "hers",
           "ours",    "theirs",  "this",   "that",       "these",   "those",    "who",
           "whom",    "whose",   "which",  "what",       "myself",  "yourself", "himself",
           "herself", "itself",  "oneself", "ourselves", "themselves", "someone", "anyone",
           "everyone", "nobody", "something", "anything", "everything", "nothing"});
  add_all(Pos::kPreposition,
          {"of",      "in",     "on",      "at",      "by",      "for",     "with",
           "about",   "against", "between", "into",    "through", "during",  "before",
           "after",   "above",  "below",   "to",      "from",    "up",      "down",
           "under",   "over",   "near",    "off",     "along",   "across",  "behind",
           "beyond",  "within", "without", "toward",  "towards", "upon",    "among",
           "around",  "beside", "besides", "despite", "except",  "inside",  "outside",
           "per",     "until",  "via"});
  add_all(Pos::kConjunction,
          {"and", "but", "or", "nor", "so", "yet", "because", "although", "though",
           "while", "whereas", "if", "unless", "since", "as", "than", "whether",
           "once", "when", "whenever", "where", "wherever"});
  add_all(Pos::kInterjection, {"oh", "wow", "hey", "ah", "ouch", "oops", "hmm", "alas",
                               "yay", "huh", "uh", "um", "hurrah", "bravo"});
  // Closed-list adverbs that the "-ly" suffix heuristic cannot catch.
  add_all(Pos::kAdverb,
          {"very", "quite", "too", "also", "not", "never", "always", "often",
           "sometimes", "rarely", "seldom", "again", "soon", "now", "then", "here",
           "there", "almost", "already", "just", "still", "even", "perhaps", "maybe",
           "rather", "well", "however", "instead", "later", "yesterday", "today",
           "tomorrow"});
  // Open classes below are kept by the filter; entries exist so classify()
  // answers sensibly for common words.
  add_all(Pos::kVerb, {"is", "are", "was", "were", "be", "been", "being", "am", "has",
                       "have", "had", "do", "does", "did", "can", "could", "will",
                       "would", "shall", "should", "may", "might", "must", "go", "goes",
                       "went", "make", "made", "say", "said", "see", "saw", "get",
                       "got", "take", "took", "come", "came", "know", "knew", "think",
                       "thought", "locate", "located", "call", "called", "find",
                       "found", "live", "lives", "lived"});
  add_all(Pos::kAdjective, {"big", "small", "high", "low", "new", "old", "good", "bad",
                            "long", "short", "large", "little", "great", "own", "other",
                            "same", "few", "many", "much"});
  return lex;
}

PosLexicon PosLexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("lexicon: cannot open " + path);
  PosLexicon lex;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("lexicon: malformed line: " + line);
    lex.set(line.substr(0, tab), pos_from_name(line.substr(tab + 1)));
  }
  return lex;
}

void PosLexicon::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("lexicon: cannot write " + path);
  std::vector<std::pair<std::string, Pos>> sorted(entries_.begin(), entries_.end());
  std::sort(sorted.begin(), sorted.end());
  for (const auto& [word, pos] : sorted) out << word << '\t' << pos_name(pos) << '\n';
}

void PosLexicon::set(const std::string& word, Pos pos) { entries_[word] = pos; }

Pos PosLexicon::classify(const std::string& word) const {
  auto it = entries_.find(word);
  if (it != entries_.end()) return it->second;
  if (is_punctuation_token(word)) return Pos::kOther;
  if (word.size() > 2 && word.ends_with("ly")) return Pos::kAdverb;
  if (std::all_of(word.begin(), word.end(),
                  [](unsigned char c) { return std::isdigit(c) != 0; })) {
    return Pos::kNumber;
  }
  return Pos::kNoun;
}

bool PosLexicon::removed(const std::string& token) const {
  if (is_punctuation_token(token)) return true;
  switch (classify(token)) {
    case Pos::kAdverb:
    case Pos::kPronoun:
    case Pos::kPreposition:
    case Pos::kConjunction:
    case Pos::kArticle:
    case Pos::kInterjection:
      return true;
    default:
      return false;
  }
}

bool is_punctuation_token(const std::string& token) {
  if (token.empty()) return false;
  return std::all_of(token.begin(), token.end(),
                     [](unsigned char c) { return is_punct_char(c); });
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) {
      out.push_back(current);
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (is_word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (is_punct_char(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const std::string& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.word(id);
  }
  return out;
}

std::vector<std::string> extract_keywords(const std::string& text, const PosLexicon& lexicon) {
  std::vector<std::string> kept;
  std::unordered_set<std::string> seen;
  for (const std::string& w : split_words(text)) {
    if (lexicon.removed(w)) continue;
    if (seen.insert(w).second) kept.push_back(w);
  }
  return kept;
}

std::set<int> key_token_set(const std::vector<std::string>& words, const Vocabulary& vocab) {
  std::set<int> ids;
  for (const std::string& w : words) {
    const int id = vocab.id(w);
    if (id >= Vocabulary::kReservedCount) ids.insert(id);
  }
  return ids;
}

}  // namespace bflab
