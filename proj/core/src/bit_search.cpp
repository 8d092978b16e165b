// SPDX-License-Identifier: Apache-2.0
#include "bflab/bit_search.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bflab {

const char* fp4_bit_rule_name(Fp4BitRule rule) {
  switch (rule) {
    case Fp4BitRule::kMaxDeviation: return "max-deviation";
    case Fp4BitRule::kMsb: return "msb";
  }
  throw std::logic_error("fp4 bit rule: unknown enum value");
}

Fp4BitRule fp4_bit_rule_from_name(const std::string& name) {
  if (name == "max-deviation") return Fp4BitRule::kMaxDeviation;
  if (name == "msb") return Fp4BitRule::kMsb;
  throw std::invalid_argument("fp4 bit rule: unknown name '" + name + "'");
}

void AttackConfig::validate() const {
  if (top_k < 1) throw std::invalid_argument("attack config: top_k must be >= 1");
  if (n_bits < 0) throw std::invalid_argument("attack config: n_bits must be >= 0");
  if (n_bits != 0 && n_bits < top_k) {
    throw std::invalid_argument(
        "attack config: n_bits must be 0 (null attack) or at least top_k");
  }
  if (n_q < 1) throw std::invalid_argument("attack config: n_q must be >= 1");
}

std::vector<std::size_t> rank_topk(const Tensor& grad, const QuantizedTensor& codes, int k) {
  if (k < 1) throw std::invalid_argument("rank_topk: k must be >= 1");
  if (grad.rows() != codes.rows || grad.cols() != codes.cols) {
    throw std::invalid_argument("rank_topk: gradient and code shapes disagree");
  }
  const std::vector<double>& g = grad.values();
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // stable_sort keeps the lower flat index first among equal magnitudes.
  std::stable_sort(order.begin(), order.end(), [&g](std::size_t a, std::size_t b) {
    return std::abs(g[a]) > std::abs(g[b]);
  });
  if (static_cast<std::size_t>(k) < order.size()) {
    order.resize(static_cast<std::size_t>(k));
  }
  return order;
}

int choose_flip_bit(QuantScheme scheme, Fp4BitRule rule, const Fp4Lut& lut, int code) {
  if (scheme == QuantScheme::kFp4 && rule == Fp4BitRule::kMsb) return 3;
  return select_flip_bit(code, scheme, lut);
}

ModuleScanResult simulate_module_attack(QuantizedModel& qm, const ModuleId& module,
                                        const Tensor& grad,
                                        std::span<const AttackSample> samples,
                                        const AttackConfig& config,
                                        const FlipKeySet& exclusions) {
  const QuantizedTensor& codes = qm.module_codes(module);
  const QuantSnapshot before = qm.snapshot_module(module);

  // Walk the full ranking and take the first top_k candidates whose chosen
  // bit has not been flipped here in an earlier iteration.
  const std::vector<std::size_t> ranking =
      rank_topk(grad, codes, static_cast<int>(codes.size()));

  ModuleScanResult result;
  result.module = module;
  for (std::size_t index : ranking) {
    if (static_cast<int>(result.flips.size()) >= config.top_k) break;
    const int code = codes.codes[index];
    const int bit = choose_flip_bit(config.scheme, config.fp4_bit_rule, qm.lut(), code);
    if (exclusions.contains({index, bit})) continue;
    result.flips.push_back(qm.flip_bit(module, index, bit));
  }

  result.simulated_loss = eval_attack_loss(qm.model(), samples, config.loss_mode).objective;

  qm.restore_module(module, before);
  const QuantizedTensor& after = qm.module_codes(module);
  if (after.codes != before.codes || after.scales != before.scales) {
    throw std::runtime_error("bit search: rollback failed to restore module " +
                             to_string(module) + " bit-exactly");
  }
  return result;
}

const ModuleScanResult& select_vulnerable_module(const std::vector<ModuleScanResult>& results) {
  if (results.empty()) {
    throw std::invalid_argument("select_vulnerable_module: no scan results");
  }
  const ModuleScanResult* best = &results.front();
  for (const ModuleScanResult& r : results) {
    if (r.simulated_loss < best->simulated_loss ||
        (r.simulated_loss == best->simulated_loss && r.module < best->module)) {
      best = &r;
    }
  }
  return *best;
}

SearchState run_attack(QuantizedModel& qm, std::span<const AttackSample> samples,
                       const AttackConfig& config) {
  config.validate();
  if (samples.empty()) throw std::invalid_argument("run_attack: no attack samples");

  std::vector<ModuleId> scan_order;
  for (const ModuleId& id : qm.model().all_modules()) {
    if (!config.module_scope || *config.module_scope == id) scan_order.push_back(id);
  }
  if (scan_order.empty()) {
    throw std::invalid_argument("run_attack: module scope matches no module");
  }

  SearchState state;
  {
    const BatchLoss baseline = eval_attack_loss(qm.model(), samples, config.loss_mode);
    state.baseline_loss = baseline.objective;
    state.baseline_breakdown = baseline.breakdown;
    state.final_breakdown = baseline.breakdown;
  }

  std::map<ModuleId, FlipKeySet> used;
  std::map<ModuleId, Tensor> grads;

  while (static_cast<int>(state.committed.size()) + config.top_k <= config.n_bits) {
    if (config.refresh_gradients || grads.empty()) {
      attack_loss_backward(qm.model(), samples, config.loss_mode);
      grads = grad_by_module(qm.model());
    }

    IterationTrace trace;
    for (const ModuleId& id : scan_order) {
      trace.scans.push_back(
          simulate_module_attack(qm, id, grads.at(id), samples, config, used[id]));
    }

    const ModuleScanResult& selected = select_vulnerable_module(trace.scans);
    for (const FlipRecord& flip : selected.flips) {
      qm.reapply(flip);
      used[selected.module].insert({flip.flat_index, flip.bit_index});
      state.committed.push_back(flip);
    }

    const BatchLoss after = eval_attack_loss(qm.model(), samples, config.loss_mode);
    if (std::abs(after.objective - selected.simulated_loss) > 1e-9) {
      throw std::runtime_error(
          "bit search: committed loss diverged from the rehearsed loss (restore "
          "or commit corrupted the quantized state)");
    }

    const double previous =
        state.loss_history.empty() ? state.baseline_loss : state.loss_history.back();
    if (after.objective >= previous) {
      std::ostringstream msg;
      msg << "iteration " << (state.iterations + 1) << ": committing "
          << to_string(selected.module) << " did not improve the objective ("
          << previous << " -> " << after.objective << ")";
      state.warnings.push_back(msg.str());
    }

    trace.selected = selected.module;
    trace.committed_loss = after.objective;
    state.traces.push_back(std::move(trace));
    state.loss_history.push_back(after.objective);
    state.final_breakdown = after.breakdown;
    ++state.iterations;
  }
  return state;
}

}  // namespace bflab
