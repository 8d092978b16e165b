// SPDX-License-Identifier: Apache-2.0
#include "bflab/toytask.hpp"

#include <array>
#include <stdexcept>

namespace bflab {

namespace {

// 20 x 4 syllable grids give 80 distinct subjects and 80 distinct answer
// towns, disjoint from each other and from every real word in the corpus.
constexpr std::array<const char*, 20> kSubjectStems = {
    "av",  "bel", "cor", "dra", "el",  "fen", "gal", "hol", "ist", "jor",
    "kal", "lum", "mor", "nor", "ost", "pel", "qued", "ros", "sil", "tor"};
constexpr std::array<const char*, 4> kSubjectEnds = {"ara", "ia", "or", "una"};

constexpr std::array<const char*, 20> kTownStems = {
    "ak",  "bor", "cas", "den", "er",  "fal", "gor", "hav", "il",  "jun",
    "kel", "lor", "mav", "nel", "ol",  "por", "rud", "sel", "tar", "ul"};
constexpr std::array<const char*, 4> kTownEnds = {"burg", "ton", "mar", "vik"};

constexpr std::array<const char*, 16> kColors = {
    "red",    "blue",  "green", "yellow", "orange", "purple", "black", "white",
    "silver", "gold",  "brown", "pink",   "teal",   "crimson", "violet", "amber"};

constexpr std::array<const char*, 30> kAnimals = {
    "wolf",   "bear",   "fox",    "eagle",  "owl",    "lynx",   "otter", "deer",
    "hare",   "boar",   "crane",  "heron",  "falcon", "raven",  "stork", "viper",
    "ibex",   "bison",  "marten", "badger", "seal",   "whale",  "carp",  "trout",
    "salmon", "marmot", "weasel", "stoat",  "moose",  "elk"};

constexpr std::array<const char*, 3> kRelations = {"capital", "color", "animal"};

constexpr int kSubjectCount = 80;

std::string subject_name(int i) {
  return std::string(kSubjectStems[static_cast<std::size_t>(i % 20)]) +
         kSubjectEnds[static_cast<std::size_t>(i / 20)];
}

std::string town_name(int i) {
  return std::string(kTownStems[static_cast<std::size_t>(i % 20)]) +
         kTownEnds[static_cast<std::size_t>(i / 20)];
}

// Fixed-stride fact assignment; the multipliers are coprime with the table
// sizes so capitals are a bijection and colors/animals cycle with variety.
std::string answer_for(int subject, int relation) {
  switch (relation) {
    case 0: return town_name((subject * 7 + 3) % 80);
    case 1: return kColors[static_cast<std::size_t>((subject * 5 + 1) % 16)];
    case 2: return kAnimals[static_cast<std::size_t>((subject * 11 + 2) % 30)];
    default: throw std::logic_error("toy world: bad relation index");
  }
}

std::string make_prompt(const std::string& relation, const std::string& subject) {
  return "what is the " + relation + " of " + subject + " ?";
}

std::string make_response(const std::string& relation, const std::string& subject,
                          const std::string& answer) {
  return "the " + relation + " of " + subject + " is " + answer + " .";
}

}  // namespace

ToyWorld build_toy_world() {
  ToyWorld world;

  std::vector<std::string> words{"what", "is", "the", "of", "?", "."};
  for (const char* r : kRelations) words.emplace_back(r);
  for (int i = 0; i < kSubjectCount; ++i) words.push_back(subject_name(i));
  for (int i = 0; i < kSubjectCount; ++i) words.push_back(town_name(i));
  for (const char* c : kColors) words.emplace_back(c);
  for (const char* a : kAnimals) words.emplace_back(a);
  world.vocab = Vocabulary::from_words(words);

  // Relation-major task order: all capitals, all colors, all animals.
  for (int relation = 0; relation < 3; ++relation) {
    for (int subject = 0; subject < kSubjectCount; ++subject) {
      QaTask task;
      const std::string subj = subject_name(subject);
      const std::string answer = answer_for(subject, relation);
      task.prompt = make_prompt(kRelations[static_cast<std::size_t>(relation)], subj);
      task.response = make_response(kRelations[static_cast<std::size_t>(relation)], subj, answer);
      task.prompt_ids = tokenize(task.prompt, world.vocab);
      task.response_ids = tokenize(task.response, world.vocab);
      task.answer_id = world.vocab.id(answer);
      for (int id : task.prompt_ids) {
        if (id == Vocabulary::kUnknownId) throw std::logic_error("toy world: prompt not in vocab");
      }
      world.tasks.push_back(std::move(task));
    }
  }

  auto append_sentence = [&world](const QaTask& task, std::vector<int>& stream) {
    stream.insert(stream.end(), task.prompt_ids.begin(), task.prompt_ids.end());
    stream.insert(stream.end(), task.response_ids.begin(), task.response_ids.end());
    stream.push_back(Vocabulary::kEosId);
  };
  for (const QaTask& task : world.tasks) {
    world.train_starts.push_back(static_cast<int>(world.train_stream.size()));
    append_sentence(task, world.train_stream);
  }
  // Held-out stream: identical facts visited in a strided order, so a model
  // that learned the facts (not the ordering) keeps its perplexity low.
  const int n = static_cast<int>(world.tasks.size());
  for (int i = 0; i < n; ++i) {
    append_sentence(world.tasks[static_cast<std::size_t>((i * 53 + 11) % n)],
                    world.heldout_stream);
  }
  return world;
}

std::vector<std::string> default_attack_prompts() {
  return {
      make_prompt("capital", subject_name(0)),
      make_prompt("color", subject_name(7)),
      make_prompt("animal", subject_name(21)),
      make_prompt("capital", subject_name(42)),
      make_prompt("color", subject_name(55)),
      make_prompt("animal", subject_name(63)),
      make_prompt("capital", subject_name(78)),
      make_prompt("animal", subject_name(12)),
      make_prompt("color", subject_name(4)),
      make_prompt("capital", subject_name(25)),
      make_prompt("animal", subject_name(46)),
      make_prompt("color", subject_name(68)),
      make_prompt("capital", subject_name(9)),
      make_prompt("animal", subject_name(30)),
      make_prompt("color", subject_name(51)),
      make_prompt("capital", subject_name(77)),
  };
}

}  // namespace bflab
