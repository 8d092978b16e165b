// SPDX-License-Identifier: Apache-2.0
//
// End-to-end orchestration: load or train a victim, quantize it, prepare the
// attack samples from the victim's own clean responses, run the progressive
// bit search, measure task accuracy and held-out perplexity before and after,
// and leave a reproducible artifact trail on disk.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bflab/attack_loss.hpp"
#include "bflab/bit_search.hpp"
#include "bflab/judge.hpp"
#include "bflab/keytoken.hpp"
#include "bflab/model.hpp"
#include "bflab/toytask.hpp"

namespace bflab {

struct PromptSet {
  std::vector<std::string> prompts;

  int n_q() const { return static_cast<int>(prompts.size()); }
};

// One prompt per line; blank lines are skipped. Throws std::runtime_error on
// an unreadable or empty file.
PromptSet load_prompts(const std::string& path);

// The repo's built-in attack questions.
PromptSet builtin_prompts();

struct PreparedSamples {
  std::vector<AttackSample> samples;
  std::vector<std::string> clean_responses;  // one per sample, judge input
  std::vector<std::string> warnings;         // rejected prompts, with reasons
};

// Asks the victim each prompt (greedy decoding), keeps the response as the
// teacher-forcing target, and extracts the key tokens to suppress. Prompts
// with unknown words, empty responses, or responses with no content words are
// rejected with a warning; the rest survive in input order.
PreparedSamples prepare_samples(const TinyModel& model, const Vocabulary& vocab,
                                const PosLexicon& lexicon, const PromptSet& prompts,
                                int max_new);

// The answer token a response names right after its first "is"; the unknown
// id when the response never takes that shape.
int extract_answer_token(std::span<const int> response_ids, const Vocabulary& vocab);

// Exact-match fraction over the toy tasks: the greedy continuation must name
// the reference answer after "is".
double eval_accuracy(const TinyModel& model, const Vocabulary& vocab,
                     const std::vector<QaTask>& tasks, int max_new = 16);

// exp(mean next-token negative log-likelihood), teacher-forced over the
// corpus in non-overlapping context_len windows. Throws std::invalid_argument
// when the corpus has fewer than two tokens.
double eval_perplexity(const TinyModel& model, const std::vector<int>& corpus);

struct EvalReport {
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  double ppl_before = 0.0;
  double ppl_after = 0.0;
  std::optional<double> naturalness_before;  // judge disabled or unavailable
  std::optional<double> naturalness_after;
  int flips_committed = 0;
  int iterations = 0;
  std::vector<double> loss_history;  // objective after each committed flip set
  double baseline_loss = 0.0;
  LossBreakdown baseline_breakdown;
  LossBreakdown final_breakdown;
  std::vector<std::string> warnings;
};

struct PipelineConfig {
  AttackConfig attack;
  // Victim dimensions. vocab_size is always taken from the toy world and the
  // seed from attack.seed, so one --seed value pins the whole run.
  ModelConfig model;
  TrainOptions train;        // train.seed is derived from attack.seed
  std::string model_path;    // load this checkpoint instead of training
  std::string prompts_path;  // empty = the built-in prompt set
  std::string out_dir;       // empty = no artifacts written
  int max_new = 16;          // response length cap, both for samples and EM
  std::optional<JudgeConfig> judge;  // empty = skip naturalness scoring
};

// Runs the full experiment and (optionally) writes out_dir/report.json,
// report.csv, fliplog.jsonl and manifest.json; a victim trained in-run is
// also saved as out_dir/victim.bin. Stage failures throw std::runtime_error
// tagged with the stage name.
EvalReport run_pipeline(const PipelineConfig& config);

}  // namespace bflab
