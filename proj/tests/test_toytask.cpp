// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bflab/keytoken.hpp"
#include "bflab/toytask.hpp"

using namespace bflab;

TEST_SUITE("toytask") {

TEST_CASE("the world has the expected size and no word collisions") {
  ToyWorld world = build_toy_world();
  // 3 reserved + 6 function words + 3 relations + 80 subjects + 80 towns
  // + 16 colors + 30 animals; any collision would shrink the count.
  CHECK(world.vocab.size() == 218);
  CHECK(world.tasks.size() == 240);  // 80 subjects x 3 relations
}

TEST_CASE("every task is fully in-vocabulary and answerable") {
  ToyWorld world = build_toy_world();
  for (const QaTask& task : world.tasks) {
    for (int id : task.prompt_ids) CHECK(id >= Vocabulary::kReservedCount);
    for (int id : task.response_ids) CHECK(id >= Vocabulary::kReservedCount);
    CHECK(task.answer_id >= Vocabulary::kReservedCount);
    // The reference response names the answer right after "is".
    const std::vector<int> toks = task.response_ids;
    auto it = std::find(toks.begin(), toks.end(), world.vocab.id("is"));
    REQUIRE(it != toks.end());
    CHECK(*(it + 1) == task.answer_id);
  }
}

TEST_CASE("the world builds identically every time") {
  ToyWorld a = build_toy_world();
  ToyWorld b = build_toy_world();
  CHECK(a.train_stream == b.train_stream);
  CHECK(a.heldout_stream == b.heldout_stream);
  CHECK(a.train_starts == b.train_starts);
  CHECK(a.vocab.size() == b.vocab.size());
}

TEST_CASE("training windows start at sentence boundaries") {
  ToyWorld world = build_toy_world();
  REQUIRE(world.train_starts.size() == world.tasks.size());
  for (std::size_t i = 0; i < world.tasks.size(); ++i) {
    const int start = world.train_starts[i];
    CHECK(world.train_stream[static_cast<std::size_t>(start)] == world.tasks[i].prompt_ids[0]);
    // Each sentence closes with the end-of-sequence marker.
    const int len = static_cast<int>(world.tasks[i].prompt_ids.size() +
                                     world.tasks[i].response_ids.size());
    CHECK(world.train_stream[static_cast<std::size_t>(start + len)] == Vocabulary::kEosId);
  }
}

TEST_CASE("the held-out stream is the same sentences in a different order") {
  ToyWorld world = build_toy_world();
  CHECK(world.heldout_stream.size() == world.train_stream.size());
  CHECK(world.heldout_stream != world.train_stream);
  // Cut both streams at <eos> and compare as multisets.
  auto sentences = [](const std::vector<int>& stream) {
    std::map<std::vector<int>, int> counts;
    std::vector<int> current;
    for (int t : stream) {
      current.push_back(t);
      if (t == Vocabulary::kEosId) {
        ++counts[current];
        current.clear();
      }
    }
    return counts;
  };
  CHECK(sentences(world.heldout_stream) == sentences(world.train_stream));
}

TEST_CASE("every reference response yields a nonempty key token set") {
  ToyWorld world = build_toy_world();
  const PosLexicon lexicon = PosLexicon::defaults();
  for (const QaTask& task : world.tasks) {
    const auto words = extract_keywords(task.response, lexicon);
    const auto keys = key_token_set(words, world.vocab);
    CHECK(!keys.empty());
    CHECK(keys.count(task.answer_id) == 1);  // the fact's answer is a target
  }
}

TEST_CASE("default attack prompts cover all relations and stay in-vocabulary") {
  ToyWorld world = build_toy_world();
  const std::vector<std::string> prompts = default_attack_prompts();
  CHECK(prompts.size() == 16);
  std::set<std::string> relations;
  for (const std::string& p : prompts) {
    for (int id : tokenize(p, world.vocab)) CHECK(id != Vocabulary::kUnknownId);
    for (const char* rel : {"capital", "color", "animal"}) {
      if (p.find(rel) != std::string::npos) relations.insert(rel);
    }
  }
  CHECK(relations.size() == 3);
}

TEST_CASE("the shipped prompt file matches the built-in prompt set") {
  std::ifstream in(std::string(BFLAB_SOURCE_DIR) + "/data/attack_prompts.txt");
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  CHECK(lines == default_attack_prompts());
}

}  // TEST_SUITE
