// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bflab/attack_loss.hpp"
#include "bflab/bit_search.hpp"
#include "bflab/model.hpp"
#include "bflab/quant.hpp"
#include "bflab/rng.hpp"
#include "bflab/tensor.hpp"

using namespace bflab;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 48;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.context_len = 24;
  cfg.seed = 11;
  return cfg;
}

// The search machinery does not care whether the victim was trained, so the
// fixtures use a randomly initialized model and hand-built samples.
std::vector<AttackSample> tiny_samples() {
  AttackSample a;
  a.prompt_ids = {4, 9, 13};
  a.response_ids = {7, 21, 33, 5};
  a.key_tokens = {21, 33};
  AttackSample b;
  b.prompt_ids = {3, 40};
  b.response_ids = {11, 17, 28};
  b.key_tokens = {17};
  return {a, b};
}

QuantizedModel make_victim(QuantScheme scheme) {
  TinyModel model = TinyModel::init(tiny_config());
  return QuantizedModel(model, scheme, Fp4Lut::defaults());
}

// Fires the property the search logs by contract: every non-improving commit
// leaves a warning behind.
void check_warning_invariant(const SearchState& state) {
  for (std::size_t i = 0; i < state.loss_history.size(); ++i) {
    const double previous = i == 0 ? state.baseline_loss : state.loss_history[i - 1];
    if (state.loss_history[i] >= previous) {
      const std::string tag = "iteration " + std::to_string(i + 1);
      const bool logged =
          std::any_of(state.warnings.begin(), state.warnings.end(),
                      [&tag](const std::string& w) { return w.find(tag) != std::string::npos; });
      CHECK_MESSAGE(logged, "missing warning for ", tag);
    }
  }
}

}  // namespace

TEST_SUITE("bit_search") {

TEST_CASE("config validation rejects nonsense") {
  AttackConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.top_k = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.top_k = 10;
  cfg.n_bits = 5;  // smaller than top_k but not the explicit null attack
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.n_bits = 0;
  CHECK_NOTHROW(cfg.validate());
  cfg.n_bits = 50;
  cfg.n_q = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("bit-rule names round-trip and reject strangers") {
  CHECK(fp4_bit_rule_from_name("max-deviation") == Fp4BitRule::kMaxDeviation);
  CHECK(fp4_bit_rule_from_name("msb") == Fp4BitRule::kMsb);
  CHECK(fp4_bit_rule_name(Fp4BitRule::kMsb) == std::string("msb"));
  CHECK_THROWS_AS(fp4_bit_rule_from_name("lsb"), std::invalid_argument);
}

TEST_CASE("rank_topk orders by gradient magnitude with stable ties") {
  Tensor grad({1, 3}, {3.0, -1.0, 2.0});
  QuantizedTensor codes = quantize_int8(Tensor({1, 3}, {0.1, 0.2, 0.3}));

  CHECK(rank_topk(grad, codes, 2) == std::vector<std::size_t>{0, 2});
  CHECK(rank_topk(grad, codes, 3) == std::vector<std::size_t>{0, 2, 1});
  CHECK(rank_topk(grad, codes, 99) == std::vector<std::size_t>{0, 2, 1});

  Tensor flat({1, 4}, {0.5, -0.5, 0.5, 0.5});
  QuantizedTensor codes4 = quantize_int8(Tensor({1, 4}, {1.0, 1.0, 1.0, 1.0}));
  CHECK(rank_topk(flat, codes4, 2) == std::vector<std::size_t>{0, 1});

  CHECK_THROWS_AS(rank_topk(grad, codes, 0), std::invalid_argument);
  CHECK_THROWS_AS(rank_topk(grad, codes4, 2), std::invalid_argument);
}

TEST_CASE("choose_flip_bit honors the scheme and the ablation rule") {
  const Fp4Lut lut = Fp4Lut::defaults();
  // INT8 always takes the sign bit, whatever the 4-bit rule says.
  CHECK(choose_flip_bit(QuantScheme::kInt8, Fp4BitRule::kMaxDeviation, lut, 57) == 7);
  CHECK(choose_flip_bit(QuantScheme::kInt8, Fp4BitRule::kMsb, lut, -3) == 7);
  // 4-bit code 0b0000: the table walk finds bit 1 (0 -> 8), the blunt rule
  // takes the sign bit regardless.
  CHECK(choose_flip_bit(QuantScheme::kFp4, Fp4BitRule::kMaxDeviation, lut, 0b0000) == 1);
  CHECK(choose_flip_bit(QuantScheme::kFp4, Fp4BitRule::kMsb, lut, 0b0000) == 3);
  CHECK(choose_flip_bit(QuantScheme::kFp4, Fp4BitRule::kMsb, lut, 0b0111) == 3);
}

TEST_CASE("module rehearsal restores the model bit-exactly") {
  for (QuantScheme scheme : {QuantScheme::kInt8, QuantScheme::kFp4}) {
    CAPTURE(scheme_name(scheme));
    QuantizedModel qm = make_victim(scheme);
    const std::vector<AttackSample> samples = tiny_samples();
    AttackConfig cfg;
    cfg.scheme = scheme;
    cfg.top_k = 6;

    Rng rng(99);
    const std::vector<ModuleId> modules = qm.model().all_modules();
    for (int trial = 0; trial < 20; ++trial) {
      const ModuleId id = modules[rng.below(modules.size())];
      const QuantizedTensor& codes = qm.module_codes(id);
      Tensor grad = Tensor::randn({codes.rows, codes.cols}, rng, 1.0);

      const std::uint64_t before = qm.code_checksum();
      ModuleScanResult result = simulate_module_attack(qm, id, grad, samples, cfg, {});
      CHECK(qm.code_checksum() == before);
      CHECK(result.flips.size() == 6);
      CHECK(result.module == id);
    }
  }
}

TEST_CASE("rehearsed loss matches a from-scratch rebuild of the flipped model") {
  TinyModel model = TinyModel::init(tiny_config());
  QuantizedModel qm(model, QuantScheme::kInt8, Fp4Lut::defaults());
  const std::vector<AttackSample> samples = tiny_samples();
  AttackConfig cfg;

  attack_loss_backward(qm.model(), samples, cfg.loss_mode);
  const auto grads = grad_by_module(qm.model());

  const ModuleId target{0, ModuleKind::kValue};
  ModuleScanResult result =
      simulate_module_attack(qm, target, grads.at(target), samples, cfg, {});

  QuantizedModel rebuilt(model, QuantScheme::kInt8, Fp4Lut::defaults());
  for (const FlipRecord& flip : result.flips) rebuilt.reapply(flip);
  const double oracle = eval_attack_loss(rebuilt.model(), samples, cfg.loss_mode).objective;
  CHECK(result.simulated_loss == oracle);
}

TEST_CASE("a rehearsal with every candidate excluded measures the baseline") {
  QuantizedModel qm = make_victim(QuantScheme::kInt8);
  const std::vector<AttackSample> samples = tiny_samples();
  AttackConfig cfg;

  const ModuleId target{0, ModuleKind::kUp};
  const QuantizedTensor& codes = qm.module_codes(target);
  FlipKeySet all_taken;
  for (std::size_t i = 0; i < codes.size(); ++i) all_taken.insert({i, 7});

  Rng rng(5);
  Tensor grad = Tensor::randn({codes.rows, codes.cols}, rng, 1.0);
  ModuleScanResult result = simulate_module_attack(qm, target, grad, samples, cfg, all_taken);
  CHECK(result.flips.empty());

  const double baseline = eval_attack_loss(qm.model(), samples, cfg.loss_mode).objective;
  CHECK(result.simulated_loss == baseline);
}

TEST_CASE("selection takes the argmin with scan-order tie-breaking") {
  auto entry = [](int layer, ModuleKind kind, double loss) {
    ModuleScanResult r;
    r.module = ModuleId{layer, kind};
    r.simulated_loss = loss;
    return r;
  };

  std::vector<ModuleScanResult> results{entry(0, ModuleKind::kQuery, 2.0),
                                        entry(0, ModuleKind::kKey, 1.0),
                                        entry(1, ModuleKind::kGate, 3.0)};
  CHECK(select_vulnerable_module(results).module == ModuleId{0, ModuleKind::kKey});

  std::vector<ModuleScanResult> tied{entry(1, ModuleKind::kDown, 1.0),
                                     entry(0, ModuleKind::kValue, 1.0)};
  // Equal losses: the earlier (layer, kind) address wins even if listed later.
  CHECK(select_vulnerable_module(tied).module == ModuleId{0, ModuleKind::kValue});

  std::vector<ModuleScanResult> single{entry(1, ModuleKind::kOutput, 7.5)};
  CHECK(select_vulnerable_module(single).module == ModuleId{1, ModuleKind::kOutput});

  CHECK_THROWS_AS(select_vulnerable_module({}), std::invalid_argument);
}

TEST_CASE("the budget is spent in exact top_k strides") {
  const std::vector<AttackSample> samples = tiny_samples();

  SUBCASE("50 bits at 10 per iteration take exactly 5 iterations") {
    QuantizedModel qm = make_victim(QuantScheme::kInt8);
    AttackConfig cfg;
    cfg.top_k = 10;
    cfg.n_bits = 50;
    SearchState state = run_attack(qm, samples, cfg);
    CHECK(state.iterations == 5);
    CHECK(state.committed.size() == 50);
    CHECK(state.loss_history.size() == 5);
    CHECK(state.traces.size() == 5);
    check_warning_invariant(state);
  }

  SUBCASE("a budget equal to top_k is a single iteration") {
    QuantizedModel qm = make_victim(QuantScheme::kInt8);
    AttackConfig cfg;
    cfg.top_k = 10;
    cfg.n_bits = 10;
    SearchState state = run_attack(qm, samples, cfg);
    CHECK(state.iterations == 1);
    CHECK(state.committed.size() == 10);
  }

  SUBCASE("a leftover smaller than top_k is never spent") {
    QuantizedModel qm = make_victim(QuantScheme::kInt8);
    AttackConfig cfg;
    cfg.top_k = 10;
    cfg.n_bits = 15;
    SearchState state = run_attack(qm, samples, cfg);
    CHECK(state.iterations == 1);
    CHECK(state.committed.size() == 10);
  }

  SUBCASE("the null attack touches nothing") {
    QuantizedModel qm = make_victim(QuantScheme::kInt8);
    const std::uint64_t before = qm.code_checksum();
    AttackConfig cfg;
    cfg.n_bits = 0;
    SearchState state = run_attack(qm, samples, cfg);
    CHECK(state.iterations == 0);
    CHECK(state.committed.empty());
    CHECK(state.loss_history.empty());
    CHECK(qm.code_checksum() == before);
    CHECK(state.final_breakdown.attack_loss == state.baseline_breakdown.attack_loss);
  }
}

TEST_CASE("every iteration commits the scan minimum and stays consistent") {
  QuantizedModel qm = make_victim(QuantScheme::kInt8);
  const std::vector<AttackSample> samples = tiny_samples();
  AttackConfig cfg;
  cfg.top_k = 5;
  cfg.n_bits = 20;

  SearchState state = run_attack(qm, samples, cfg);
  REQUIRE(state.iterations == 4);

  for (int i = 0; i < state.iterations; ++i) {
    const IterationTrace& trace = state.traces[static_cast<std::size_t>(i)];
    CHECK(trace.scans.size() == qm.model().all_modules().size());
    double scan_min = trace.scans.front().simulated_loss;
    double selected_loss = 0.0;
    for (const ModuleScanResult& scan : trace.scans) {
      scan_min = std::min(scan_min, scan.simulated_loss);
      if (scan.module == trace.selected) selected_loss = scan.simulated_loss;
    }
    CHECK(selected_loss == scan_min);
    CHECK(trace.committed_loss == state.loss_history[static_cast<std::size_t>(i)]);
    // Committing reproduces the rehearsal's measurement exactly.
    CHECK(trace.committed_loss == doctest::Approx(selected_loss).epsilon(1e-12));
  }

  // All committed records in one iteration belong to the selected module.
  for (int i = 0; i < state.iterations; ++i) {
    for (int j = 0; j < cfg.top_k; ++j) {
      const FlipRecord& flip = state.committed[static_cast<std::size_t>(i * cfg.top_k + j)];
      CHECK(flip.module == state.traces[static_cast<std::size_t>(i)].selected);
    }
  }

  // The model ends in the attacked state: re-evaluating gives the last entry.
  const double final_loss = eval_attack_loss(qm.model(), samples, cfg.loss_mode).objective;
  CHECK(final_loss == state.loss_history.back());
}

TEST_CASE("a committed bit is never chosen again in the same module") {
  QuantizedModel qm = make_victim(QuantScheme::kInt8);
  const std::vector<AttackSample> samples = tiny_samples();
  AttackConfig cfg;
  cfg.top_k = 8;
  cfg.n_bits = 32;
  cfg.module_scope = ModuleId{0, ModuleKind::kDown};  // force re-selection

  SearchState state = run_attack(qm, samples, cfg);
  REQUIRE(state.iterations == 4);

  std::set<std::pair<std::size_t, int>> seen;
  for (const FlipRecord& flip : state.committed) {
    CHECK(flip.module == *cfg.module_scope);
    const bool fresh = seen.insert({flip.flat_index, flip.bit_index}).second;
    CHECK(fresh);
  }
}

TEST_CASE("the search is deterministic") {
  const std::vector<AttackSample> samples = tiny_samples();
  AttackConfig cfg;
  cfg.top_k = 5;
  cfg.n_bits = 15;

  QuantizedModel a = make_victim(QuantScheme::kInt8);
  QuantizedModel b = make_victim(QuantScheme::kInt8);
  SearchState sa = run_attack(a, samples, cfg);
  SearchState sb = run_attack(b, samples, cfg);

  CHECK(sa.loss_history == sb.loss_history);
  REQUIRE(sa.committed.size() == sb.committed.size());
  for (std::size_t i = 0; i < sa.committed.size(); ++i) {
    CHECK(sa.committed[i].module == sb.committed[i].module);
    CHECK(sa.committed[i].flat_index == sb.committed[i].flat_index);
    CHECK(sa.committed[i].bit_index == sb.committed[i].bit_index);
    CHECK(sa.committed[i].code_before == sb.committed[i].code_before);
    CHECK(sa.committed[i].code_after == sb.committed[i].code_after);
  }
  CHECK(a.code_checksum() == b.code_checksum());
}

TEST_CASE("gradients are recomputed from the attacked model each iteration") {
  const std::vector<AttackSample> samples = tiny_samples();
  AttackConfig cfg;
  cfg.top_k = 6;
  cfg.n_bits = 12;

  // Reference run: two iterations with fresh gradients.
  QuantizedModel qm = make_victim(QuantScheme::kInt8);
  SearchState state = run_attack(qm, samples, cfg);
  REQUIRE(state.iterations == 2);
  const ModuleId second = state.traces[1].selected;

  // Rebuild the model as it stood entering iteration 2, then compare the
  // ranking gradients taken there against ones taken at the clean model: if
  // iteration 1's flips are reverted, the ranking must change.
  QuantizedModel replay = make_victim(QuantScheme::kInt8);
  attack_loss_backward(replay.model(), samples, cfg.loss_mode);
  const std::vector<std::size_t> clean_ranking = rank_topk(
      grad_by_module(replay.model()).at(second), replay.module_codes(second), cfg.top_k);

  for (int j = 0; j < cfg.top_k; ++j) {
    replay.reapply(state.committed[static_cast<std::size_t>(j)]);
  }
  attack_loss_backward(replay.model(), samples, cfg.loss_mode);
  const std::vector<std::size_t> attacked_ranking = rank_topk(
      grad_by_module(replay.model()).at(second), replay.module_codes(second), cfg.top_k);

  CHECK(clean_ranking != attacked_ranking);

  // The stale-gradient ablation takes a different path through the search.
  QuantizedModel stale = make_victim(QuantScheme::kInt8);
  AttackConfig stale_cfg = cfg;
  stale_cfg.refresh_gradients = false;
  SearchState stale_state = run_attack(stale, samples, stale_cfg);
  bool same_flips = stale_state.committed.size() == state.committed.size();
  if (same_flips) {
    for (std::size_t i = 0; i < state.committed.size(); ++i) {
      same_flips = same_flips &&
                   state.committed[i].module == stale_state.committed[i].module &&
                   state.committed[i].flat_index == stale_state.committed[i].flat_index &&
                   state.committed[i].bit_index == stale_state.committed[i].bit_index;
    }
  }
  CHECK(!same_flips);
}

TEST_CASE("an unknown module scope is rejected") {
  QuantizedModel qm = make_victim(QuantScheme::kInt8);
  const std::vector<AttackSample> samples = tiny_samples();
  AttackConfig cfg;
  cfg.module_scope = ModuleId{7, ModuleKind::kQuery};  // no such layer
  CHECK_THROWS_AS(run_attack(qm, samples, cfg), std::invalid_argument);
  CHECK_THROWS_AS(run_attack(qm, {}, AttackConfig{}), std::invalid_argument);
}

}  // TEST_SUITE
