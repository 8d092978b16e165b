// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <span>
#include <vector>

#include "bflab/attack_loss.hpp"
#include "bflab/bit_search.hpp"
#include "bflab/model.hpp"
#include "bflab/quant.hpp"
#include "bflab/rng.hpp"
#include "bflab/tensor.hpp"

namespace {

using namespace bflab;

ModelConfig bench_config() {
  ModelConfig mc;
  mc.vocab_size = 218;
  return mc;  // reference dims: d64, 2 layers, 4 heads, ff 128, context 64
}

TinyModel bench_model() { return TinyModel::init(bench_config()); }

std::vector<AttackSample> bench_samples() {
  // Two hand-built samples in the reference shape: short prompt, short
  // response, a couple of suppression targets each.
  std::vector<AttackSample> samples(2);
  samples[0].prompt_ids = {4, 9, 13, 6, 21, 8, 5};
  samples[0].response_ids = {7, 21, 33, 5, 12, 64, 9};
  samples[0].key_tokens = {21, 33, 64};
  samples[1].prompt_ids = {3, 40, 17, 6, 11, 8, 5};
  samples[1].response_ids = {11, 17, 28, 4, 90};
  samples[1].key_tokens = {17, 90};
  return samples;
}

void BM_MatmulBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, rng, 1.0);
  Tensor b = Tensor::randn({n, n}, rng, 1.0);
  Tensor ones_col = Tensor::full({n, 1}, 1.0);
  Tensor ones_row = Tensor::full({1, n}, 1.0);
  for (auto _ : state) {
    Tape tape;
    Tensor c = matmul(tape, a, b);
    Tensor s = matmul(tape, matmul(tape, ones_row, c), ones_col);
    tape.backward(s);
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64);

void BM_ForwardLogits(benchmark::State& state) {
  TinyModel model = bench_model();
  const int len = static_cast<int>(state.range(0));
  std::vector<int> ids(static_cast<std::size_t>(len));
  Rng rng(3);
  for (int& id : ids) id = static_cast<int>(rng.below(218));
  for (auto _ : state) {
    Tensor logits = forward_logits(model, ids);
    benchmark::DoNotOptimize(logits.values().data());
  }
}
BENCHMARK(BM_ForwardLogits)->Arg(16)->Arg(64);

void BM_AttackLossForward(benchmark::State& state) {
  TinyModel model = bench_model();
  auto samples = bench_samples();
  for (auto _ : state) {
    BatchLoss loss = eval_attack_loss(model, samples, LossMode::kFull);
    benchmark::DoNotOptimize(loss.objective);
  }
}
BENCHMARK(BM_AttackLossForward);

void BM_AttackLossBackward(benchmark::State& state) {
  TinyModel model = bench_model();
  auto samples = bench_samples();
  for (auto _ : state) {
    BatchLoss loss = attack_loss_backward(model, samples, LossMode::kFull);
    benchmark::DoNotOptimize(loss.objective);
  }
}
BENCHMARK(BM_AttackLossBackward);

void BM_QuantizeInt8(benchmark::State& state) {
  Rng rng(5);
  Tensor w = Tensor::randn({128, 64}, rng, 0.05);
  for (auto _ : state) {
    QuantizedTensor q = quantize_int8(w);
    benchmark::DoNotOptimize(q.codes.data());
  }
}
BENCHMARK(BM_QuantizeInt8);

void BM_QuantizeFp4(benchmark::State& state) {
  Rng rng(5);
  Tensor w = Tensor::randn({128, 64}, rng, 0.05);
  Fp4Lut lut = Fp4Lut::defaults();
  for (auto _ : state) {
    QuantizedTensor q = quantize_fp4(w, lut);
    benchmark::DoNotOptimize(q.codes.data());
  }
}
BENCHMARK(BM_QuantizeFp4);

void BM_Dequantize(benchmark::State& state) {
  Rng rng(5);
  Tensor w = Tensor::randn({128, 64}, rng, 0.05);
  QuantizedTensor q = quantize_int8(w);
  Fp4Lut lut = Fp4Lut::defaults();
  for (auto _ : state) {
    Tensor back = dequantize(q, lut);
    benchmark::DoNotOptimize(back.values().data());
  }
}
BENCHMARK(BM_Dequantize);

// One simulate-evaluate-restore pass over a single module: the unit of work
// the progressive search repeats (modules x iterations) times.
void BM_ModuleScan(benchmark::State& state) {
  TinyModel model = bench_model();
  auto samples = bench_samples();
  QuantizedModel qm(model, QuantScheme::kInt8, Fp4Lut::defaults());
  attack_loss_backward(qm.model(), samples, LossMode::kFull);
  const ModuleId target = qm.model().all_modules().front();
  Tensor grad = grad_by_module(qm.model()).at(target);
  AttackConfig cfg;
  cfg.top_k = 10;
  cfg.n_bits = 10;
  FlipKeySet no_exclusions;
  for (auto _ : state) {
    ModuleScanResult scan =
        simulate_module_attack(qm, target, grad, samples, cfg, no_exclusions);
    benchmark::DoNotOptimize(scan.simulated_loss);
  }
}
BENCHMARK(BM_ModuleScan);

}  // namespace

BENCHMARK_MAIN();
