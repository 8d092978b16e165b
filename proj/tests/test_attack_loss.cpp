// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "bflab/attack_loss.hpp"
#include "bflab/rng.hpp"

using namespace bflab;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.vocab_size = 13;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  cfg.context_len = 16;
  cfg.seed = 5;
  return cfg;
}

AttackSample small_sample() {
  AttackSample s;
  s.prompt_ids = {1, 4, 9};
  s.response_ids = {7, 2, 11, 5};
  s.key_tokens = {7, 11};
  return s;
}

}  // namespace

TEST_SUITE("attack_loss") {

TEST_CASE("key token mass fixture: squared sum of selected probabilities") {
  Tape tape;
  Tensor probs({1, 3}, {0.5, 0.3, 0.2});
  CHECK(key_tokens_loss(tape, probs, {0, 1}).item() == doctest::Approx(0.64).epsilon(1e-12));
  CHECK(key_tokens_loss(tape, probs, {}).item() == 0.0);
}

TEST_CASE("identical rows double the mass before squaring") {
  Tape tape;
  Tensor probs({2, 4}, {0.4, 0.3, 0.2, 0.1, 0.4, 0.3, 0.2, 0.1});
  const std::set<int> keys{1, 3};
  const double row_mass = 0.3 + 0.1;
  CHECK(key_tokens_loss(tape, probs, keys).item() ==
        doctest::Approx(std::pow(2 * row_mass, 2)).epsilon(1e-12));
}

TEST_CASE("key token loss is monotone in the key set and bounded by N^2") {
  Tape tape;
  Tensor probs({3, 4}, {0.4, 0.3, 0.2, 0.1,   //
                        0.1, 0.6, 0.2, 0.1,   //
                        0.25, 0.25, 0.25, 0.25});
  const double with_all = key_tokens_loss(tape, probs, {0, 1, 2, 3}).item();
  const double minus_one = key_tokens_loss(tape, probs, {0, 1, 3}).item();
  const double minus_two = key_tokens_loss(tape, probs, {0, 3}).item();
  CHECK(with_all >= minus_one);
  CHECK(minus_one >= minus_two);
  CHECK(with_all <= 9.0 + 1e-12);  // N = 3
  CHECK(with_all == doctest::Approx(9.0));  // full vocabulary mass is N^2 exactly
}

TEST_CASE("probability rows are validated") {
  Tape tape;
  Tensor not_probs({1, 3}, {0.5, 0.5, 0.5});
  CHECK_THROWS_AS(key_tokens_loss(tape, not_probs, {0}), std::invalid_argument);
  Tensor probs({1, 3}, {0.5, 0.3, 0.2});
  CHECK_THROWS_AS(key_tokens_loss(tape, probs, {3}), std::invalid_argument);
  Tensor empty;
  CHECK_THROWS_AS(key_tokens_loss(tape, empty, {0}), std::invalid_argument);
}

TEST_CASE("perplexity fixtures: perfect, uniform, and mixed predictions") {
  Tape tape;
  Tensor perfect({2, 3}, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
  CHECK(ppl_loss(tape, perfect, std::vector<int>{0, 1}).item() == doctest::Approx(1.0));

  Tensor uniform({3, 4}, std::vector<double>(12, 0.25));
  CHECK(ppl_loss(tape, uniform, std::vector<int>{0, 3, 2}).item() ==
        doctest::Approx(4.0).epsilon(1e-12));

  Tensor mixed({2, 8}, {0.5, 0.5, 0, 0, 0, 0, 0, 0,  //
                        0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125});
  CHECK(ppl_loss(tape, mixed, std::vector<int>{0, 4}).item() ==
        doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("the log clamp keeps zero probabilities finite and gradient-free") {
  Tape tape;
  Tensor probs({1, 2}, {0.0, 1.0});
  Tensor loss = ppl_loss(tape, probs, std::vector<int>{0});
  CHECK(loss.item() == doctest::Approx(std::exp(30.0)));
  tape.backward(loss);
  CHECK(probs.grad()[0] == 0.0);  // clamped position carries no gradient
  Tape t2;
  CHECK_THROWS_AS(ppl_loss(t2, probs, std::vector<int>{0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(ppl_loss(t2, probs, std::vector<int>{2}), std::invalid_argument);
}

TEST_CASE("custom loss backwards agree with finite differences") {
  Rng rng(2);
  Tensor x = Tensor::randn({3, 6}, rng, 1.0);
  const std::set<int> keys{1, 4};
  auto f_key = [&](Tape& tape) {
    return key_tokens_loss(tape, softmax_rows(tape, x), keys);
  };
  GradCheckOptions opt;
  opt.coords_per_param = 0;
  CHECK(grad_check(f_key, {x}, opt) < 1e-6);

  const std::vector<int> targets{2, 0, 5};
  auto f_ppl = [&](Tape& tape) {
    return ppl_loss(tape, softmax_rows(tape, x), targets);
  };
  CHECK(grad_check(f_ppl, {x}, opt) < 1e-6);
}

TEST_CASE("the breakdown satisfies the sum identity on a real model") {
  TinyModel model = TinyModel::init(small_config());
  const AttackSample sample = small_sample();
  const std::vector<AttackSample> samples{sample};
  BatchLoss batch = eval_attack_loss(model, samples, LossMode::kFull);
  CHECK(batch.breakdown.attack_loss ==
        batch.breakdown.key_tokens_loss + batch.breakdown.ppl_loss);
  CHECK(std::isfinite(batch.breakdown.attack_loss));
  CHECK(batch.breakdown.ppl_loss >= 1.0);
  CHECK(batch.breakdown.key_tokens_loss >= 0.0);
  CHECK(batch.objective == doctest::Approx(batch.breakdown.attack_loss).epsilon(1e-12));
}

TEST_CASE("loss modes recombine the same two terms") {
  TinyModel model = TinyModel::init(small_config());
  const std::vector<AttackSample> samples{small_sample()};
  BatchLoss full = eval_attack_loss(model, samples, LossMode::kFull);
  BatchLoss no_ppl = eval_attack_loss(model, samples, LossMode::kNoPpl);
  BatchLoss no_key = eval_attack_loss(model, samples, LossMode::kNoKey);
  BatchLoss inverted = eval_attack_loss(model, samples, LossMode::kInvertedPpl);
  // The decomposition is mode-independent...
  CHECK(no_ppl.breakdown.key_tokens_loss == full.breakdown.key_tokens_loss);
  CHECK(no_key.breakdown.ppl_loss == full.breakdown.ppl_loss);
  // ...only the optimized scalar changes.
  CHECK(full.objective == doctest::Approx(full.breakdown.key_tokens_loss +
                                          full.breakdown.ppl_loss));
  CHECK(no_ppl.objective == doctest::Approx(full.breakdown.key_tokens_loss));
  CHECK(no_key.objective == doctest::Approx(full.breakdown.ppl_loss));
  CHECK(inverted.objective == doctest::Approx(full.breakdown.key_tokens_loss -
                                              full.breakdown.ppl_loss));
  CHECK(loss_mode_from_name("inverted-ppl") == LossMode::kInvertedPpl);
  CHECK_THROWS_AS(loss_mode_from_name("bogus"), std::invalid_argument);
}

TEST_CASE("a batch averages per-sample losses") {
  TinyModel model = TinyModel::init(small_config());
  AttackSample a = small_sample();
  AttackSample b;
  b.prompt_ids = {2, 8};
  b.response_ids = {3, 3, 10};
  b.key_tokens = {3, 10, 6};
  const std::vector<AttackSample> both{a, b};
  BatchLoss batch = eval_attack_loss(model, both, LossMode::kFull);
  BatchLoss only_a = eval_attack_loss(model, {&a, 1}, LossMode::kFull);
  BatchLoss only_b = eval_attack_loss(model, {&b, 1}, LossMode::kFull);
  CHECK(batch.breakdown.key_tokens_loss ==
        doctest::Approx((only_a.breakdown.key_tokens_loss + only_b.breakdown.key_tokens_loss) / 2)
            .epsilon(1e-12));
  CHECK(batch.breakdown.ppl_loss ==
        doctest::Approx((only_a.breakdown.ppl_loss + only_b.breakdown.ppl_loss) / 2)
            .epsilon(1e-12));
  CHECK(batch.objective ==
        doctest::Approx((only_a.objective + only_b.objective) / 2).epsilon(1e-12));
}

TEST_CASE("attack loss gradients reach every module kind correctly") {
  TinyModel model = TinyModel::init(small_config());
  const AttackSample sample = small_sample();
  const std::vector<AttackSample> samples{sample};
  auto f = [&](Tape& tape) {
    SampleLoss loss = attack_loss(tape, model, sample, LossMode::kFull);
    return loss.objective;
  };
  std::vector<Tensor> weights;
  for (const ModuleId& id : model.all_modules()) weights.push_back(model.module_weight(id));
  GradCheckOptions opt;
  opt.coords_per_param = 10;
  opt.pick_largest = true;
  CHECK(grad_check(f, weights, opt) < 1e-4);

  // attack_loss_backward populates the same gradients it reports on.
  BatchLoss batch = attack_loss_backward(model, samples, LossMode::kFull);
  CHECK(std::isfinite(batch.objective));
  for (const ModuleId& id : model.all_modules()) {
    CHECK(model.module_weight(id).has_grad());
  }
}

TEST_CASE("samples are validated") {
  TinyModel model = TinyModel::init(small_config());
  Tape tape;
  AttackSample empty_prompt;
  empty_prompt.response_ids = {1};
  CHECK_THROWS_AS(attack_loss(tape, model, empty_prompt, LossMode::kFull),
                  std::invalid_argument);
  AttackSample empty_response;
  empty_response.prompt_ids = {1};
  CHECK_THROWS_AS(attack_loss(tape, model, empty_response, LossMode::kFull),
                  std::invalid_argument);
  CHECK_THROWS_AS(eval_attack_loss(model, {}, LossMode::kFull), std::invalid_argument);
}

}  // TEST_SUITE
