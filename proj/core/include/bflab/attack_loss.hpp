// SPDX-License-Identifier: Apache-2.0
//
// The composite attack objective. Teacher-forced over a victim's own clean
// response, it sums two terms: the squared total probability mass the model
// still puts on the response's key tokens (to be suppressed), and the
// perplexity of the clean response (kept low so the output stays fluent).
#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "bflab/model.hpp"
#include "bflab/tensor.hpp"

namespace bflab {

// One attack prompt with the victim's clean greedy response and the key
// tokens extracted from it.
struct AttackSample {
  std::vector<int> prompt_ids;
  std::vector<int> response_ids;  // y_1..y_N, teacher-forcing targets
  std::set<int> key_tokens;

  int n() const { return static_cast<int>(response_ids.size()); }
};

// Additive decomposition; attack_loss == key_tokens_loss + ppl_loss holds
// exactly for every evaluation regardless of the optimization mode.
struct LossBreakdown {
  double key_tokens_loss = 0.0;
  double ppl_loss = 0.0;
  double attack_loss = 0.0;
};

// Which scalar the search actually minimizes:
//   kFull        key + perplexity (the headline objective)
//   kNoPpl       key term only (fluency unconstrained)
//   kNoKey       perplexity only (no suppression target)
//   kInvertedPpl key - perplexity (maximize perplexity: the loud, legacy
//                fault-attack direction, kept as an ablation contrast)
enum class LossMode { kFull, kNoPpl, kNoKey, kInvertedPpl };

const char* loss_mode_name(LossMode mode);
LossMode loss_mode_from_name(const std::string& name);

// (sum over positions and key tokens of p)^2, differentiable through probs.
// probs rows must be distributions (sum 1 within 1e-9).
Tensor key_tokens_loss(Tape& tape, const Tensor& probs, const std::set<int>& key_tokens);

// exp(-(1/N) * sum log p(y_i)), log clamped below at -30 so corrupted models
// with zeroed probabilities stay finite (clamped terms carry no gradient).
Tensor ppl_loss(Tape& tape, const Tensor& probs, std::span<const int> targets);

// Per-sample loss tensors living on the tape.
struct SampleLoss {
  Tensor key;        // scalar
  Tensor ppl;        // scalar
  Tensor objective;  // scalar, mode-dependent combination
};

// Teacher-forced evaluation: forward on prompt++response, softmax over the N
// response positions, then both terms. Works for ranking (backward through
// the tape) and simulation (forward-only).
SampleLoss attack_loss(Tape& tape, const TinyModel& model, const AttackSample& sample,
                       LossMode mode);

// Mean over the attack samples.
struct BatchLoss {
  LossBreakdown breakdown;  // means of the per-sample terms
  double objective = 0.0;   // mean mode-dependent objective
};

// Forward-only evaluation (the simulation phase).
BatchLoss eval_attack_loss(const TinyModel& model, std::span<const AttackSample> samples,
                           LossMode mode);

// Evaluation plus backward: leaves d(mean objective)/d(weights) in the
// model's parameter gradients (the ranking phase).
BatchLoss attack_loss_backward(const TinyModel& model, std::span<const AttackSample> samples,
                               LossMode mode);

}  // namespace bflab
