// SPDX-License-Identifier: Apache-2.0
//
// Progressive bit search over a quantized victim. Each iteration ranks every
// attackable weight by the magnitude of its attack-loss gradient, rehearses a
// top-k flip attack inside each module (evaluate, then roll back bit-exactly),
// commits the single module whose rehearsal drove the loss lowest, and repeats
// until the flip budget is spent.
#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bflab/attack_loss.hpp"
#include "bflab/model.hpp"
#include "bflab/quant.hpp"
#include "bflab/tensor.hpp"

namespace bflab {

// How the bit to flip inside a 4-bit code is chosen. MaxDeviation walks the
// lookup table for the largest value change; Msb always takes the sign bit,
// which is the right answer for INT8 but a deliberately blunt instrument for
// the 4-bit float format (kept as an ablation).
enum class Fp4BitRule { kMaxDeviation, kMsb };

const char* fp4_bit_rule_name(Fp4BitRule rule);
Fp4BitRule fp4_bit_rule_from_name(const std::string& name);

struct AttackConfig {
  int top_k = 10;   // bits flipped per in-module rehearsal
  int n_bits = 50;  // total flip budget; 0 = explicit null attack
  int n_q = 2;      // attack-dataset size (prompt count)
  QuantScheme scheme = QuantScheme::kInt8;
  LossMode loss_mode = LossMode::kFull;
  Fp4BitRule fp4_bit_rule = Fp4BitRule::kMaxDeviation;
  // Recompute ranking gradients on the attacked model at the start of every
  // iteration. Off = rank once on the clean model and reuse (ablation).
  bool refresh_gradients = true;
  std::optional<ModuleId> module_scope;  // restrict the scan to one module
  unsigned seed = 1;

  // Throws std::invalid_argument on a nonsensical combination. n_bits may be
  // zero (a null attack that commits nothing); any other value must admit at
  // least one full iteration, i.e. n_bits >= top_k.
  void validate() const;
};

// Outcome of rehearsing one module: the flips that were applied (and rolled
// back), and the mean attack objective measured while they were in place.
struct ModuleScanResult {
  ModuleId module;
  double simulated_loss = 0.0;
  std::vector<FlipRecord> flips;  // not committed; size min(top_k, available)
};

// One committed iteration, kept for the run manifest.
struct IterationTrace {
  std::vector<ModuleScanResult> scans;  // in scan order
  ModuleId selected;
  double committed_loss = 0.0;
};

struct SearchState {
  std::vector<FlipRecord> committed;  // top_k * iterations records
  int iterations = 0;
  std::vector<double> loss_history;  // objective after each commit
  double baseline_loss = 0.0;        // objective before any flip
  LossBreakdown baseline_breakdown;
  LossBreakdown final_breakdown;
  std::vector<IterationTrace> traces;
  std::vector<std::string> warnings;
};

// (flat_index, bit_index) pairs already flipped in one module; re-flipping
// the same bit would undo the earlier damage, so these are skipped.
using FlipKeySet = std::set<std::pair<std::size_t, int>>;

// Flat indices of the k largest |grad| entries, largest first, ties toward
// the lower index. k >= size returns every index in that order. Throws
// std::invalid_argument when k < 1 or the shapes disagree.
std::vector<std::size_t> rank_topk(const Tensor& grad, const QuantizedTensor& codes, int k);

// The bit the configured rule picks for one stored code.
int choose_flip_bit(QuantScheme scheme, Fp4BitRule rule, const Fp4Lut& lut, int code);

// Rehearses an attack inside one module: flips the top-k ranked bits (skipping
// exclusions), evaluates the mean objective forward-only, restores the module
// and verifies the rollback bit-exactly. Throws std::runtime_error if the
// rollback does not reproduce the pre-scan bytes (a corrupted experiment).
ModuleScanResult simulate_module_attack(QuantizedModel& qm, const ModuleId& module,
                                        const Tensor& grad,
                                        std::span<const AttackSample> samples,
                                        const AttackConfig& config,
                                        const FlipKeySet& exclusions);

// The scan result with the minimum simulated loss; ties go to the earlier
// module in (layer, kind) order. Throws std::invalid_argument when empty.
const ModuleScanResult& select_vulnerable_module(const std::vector<ModuleScanResult>& results);

// The full progressive search. Mutates qm in place (the committed flips stay
// applied) and returns the ledger of what happened.
SearchState run_attack(QuantizedModel& qm, std::span<const AttackSample> samples,
                       const AttackConfig& config);

}  // namespace bflab
