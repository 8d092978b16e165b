// SPDX-License-Identifier: Apache-2.0
//
// The fixed question-answering universe the victim is trained on: invented
// places with a capital, a color and an animal each. Everything here is
// deterministic and seed-independent, so shipped prompt files and tests can
// rely on the exact vocabulary and facts.
#pragma once

#include <string>
#include <vector>

#include "bflab/keytoken.hpp"

namespace bflab {

// One recall task: "what is the <relation> of <subject> ?" with the unique
// reference response "the <relation> of <subject> is <answer> .".
struct QaTask {
  std::string prompt;
  std::string response;
  std::vector<int> prompt_ids;
  std::vector<int> response_ids;  // reference, without the end marker
  int answer_id = 0;
};

struct ToyWorld {
  Vocabulary vocab;
  std::vector<QaTask> tasks;        // every fact exactly once
  std::vector<int> train_stream;    // QA sentences, each closed by <eos>
  std::vector<int> train_starts;    // sentence offsets into train_stream
  std::vector<int> heldout_stream;  // same facts, different sentence order
};

// Builds the world. Always the same: no seed, no options.
ToyWorld build_toy_world();

// The in-vocabulary questions shipped as the default attack prompt set,
// mixing all three relations.
std::vector<std::string> default_attack_prompts();

}  // namespace bflab
