// SPDX-License-Identifier: Apache-2.0
#include "bflab/attack_loss.hpp"

#include <cmath>
#include <stdexcept>

namespace bflab {

namespace {

constexpr double kLogFloor = -30.0;

void check_prob_rows(const Tensor& probs, const char* op) {
  if (!probs.defined() || probs.size() == 0) {
    throw std::invalid_argument(std::string(op) + ": empty probabilities");
  }
  if (probs.shape().size() != 2) {
    throw std::invalid_argument(std::string(op) + ": rank-2 probabilities required");
  }
  for (int i = 0; i < probs.rows(); ++i) {
    double sum = 0.0;
    for (int j = 0; j < probs.cols(); ++j) sum += probs.at(i, j);
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument(std::string(op) + ": row is not a distribution");
    }
  }
}

}  // namespace

const char* loss_mode_name(LossMode mode) {
  switch (mode) {
    case LossMode::kFull: return "full";
    case LossMode::kNoPpl: return "no-ppl";
    case LossMode::kNoKey: return "no-key";
    case LossMode::kInvertedPpl: return "inverted-ppl";
  }
  return "full";
}

LossMode loss_mode_from_name(const std::string& name) {
  if (name == "full") return LossMode::kFull;
  if (name == "no-ppl") return LossMode::kNoPpl;
  if (name == "no-key") return LossMode::kNoKey;
  if (name == "inverted-ppl") return LossMode::kInvertedPpl;
  throw std::invalid_argument("loss mode: unknown name " + name);
}

Tensor key_tokens_loss(Tape& tape, const Tensor& probs, const std::set<int>& key_tokens) {
  check_prob_rows(probs, "key_tokens_loss");
  const int n = probs.rows(), v = probs.cols();
  for (int t : key_tokens) {
    if (t < 0 || t >= v) throw std::invalid_argument("key_tokens_loss: token out of range");
  }
  double mass = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int t : key_tokens) mass += probs.at(i, t);
  }
  Tensor out = Tensor::scalar(mass * mass);
  std::vector<int> keys(key_tokens.begin(), key_tokens.end());
  tape.record({probs, out}, [probs, out, keys = std::move(keys), mass, n, v]() {
    // d(mass^2)/dp[i,t] = 2 * mass for every key token at every position.
    const double g = out.grad()[0] * 2.0 * mass;
    std::vector<double>& gp = const_cast<Tensor&>(probs).grad();
    for (int i = 0; i < n; ++i) {
      for (int t : keys) gp[static_cast<std::size_t>(i) * v + t] += g;
    }
  });
  return out;
}

Tensor ppl_loss(Tape& tape, const Tensor& probs, std::span<const int> targets) {
  check_prob_rows(probs, "ppl_loss");
  const int n = probs.rows(), v = probs.cols();
  if (static_cast<int>(targets.size()) != n) {
    throw std::invalid_argument("ppl_loss: one target per row required");
  }
  for (int t : targets) {
    if (t < 0 || t >= v) throw std::invalid_argument("ppl_loss: target out of range");
  }
  double mean_log = 0.0;
  std::vector<bool> clamped(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n; ++i) {
    const double p = probs.at(i, targets[static_cast<std::size_t>(i)]);
    const double lp = std::log(p);
    if (lp < kLogFloor || !std::isfinite(lp)) {
      mean_log += kLogFloor;
      clamped[static_cast<std::size_t>(i)] = true;
    } else {
      mean_log += lp;
    }
  }
  mean_log /= n;
  const double value = std::exp(-mean_log);
  Tensor out = Tensor::scalar(value);
  std::vector<int> tgt(targets.begin(), targets.end());
  tape.record({probs, out},
              [probs, out, tgt = std::move(tgt), clamped = std::move(clamped), value, n, v]() {
                // d exp(-(1/N) sum log p) / dp_i = value * (-1/N) / p_i,
                // zero where the log clamp is active.
                const double g = out.grad()[0];
                std::vector<double>& gp = const_cast<Tensor&>(probs).grad();
                for (int i = 0; i < n; ++i) {
                  if (clamped[static_cast<std::size_t>(i)]) continue;
                  const double p = probs.at(i, tgt[static_cast<std::size_t>(i)]);
                  gp[static_cast<std::size_t>(i) * v + tgt[static_cast<std::size_t>(i)]] +=
                      g * value * (-1.0 / n) / p;
                }
              });
  return out;
}

SampleLoss attack_loss(Tape& tape, const TinyModel& model, const AttackSample& sample,
                       LossMode mode) {
  if (sample.prompt_ids.empty()) throw std::invalid_argument("attack_loss: empty prompt");
  if (sample.response_ids.empty()) throw std::invalid_argument("attack_loss: empty response");
  std::vector<int> full = sample.prompt_ids;
  full.insert(full.end(), sample.response_ids.begin(), sample.response_ids.end());

  Tensor logits = forward_logits(tape, model, full);
  // Row j predicts token j+1, so the response tokens y_1..y_N are predicted
  // by rows P-1 .. P+N-2.
  const int p_len = static_cast<int>(sample.prompt_ids.size());
  Tensor response_logits = slice_rows(tape, logits, p_len - 1, sample.n());
  Tensor probs = softmax_rows(tape, response_logits);

  SampleLoss loss;
  loss.key = key_tokens_loss(tape, probs, sample.key_tokens);
  loss.ppl = ppl_loss(tape, probs, sample.response_ids);
  switch (mode) {
    case LossMode::kFull:
      loss.objective = add(tape, loss.key, loss.ppl);
      break;
    case LossMode::kNoPpl:
      loss.objective = loss.key;
      break;
    case LossMode::kNoKey:
      loss.objective = loss.ppl;
      break;
    case LossMode::kInvertedPpl:
      loss.objective = add(tape, loss.key, mul_scalar(tape, loss.ppl, -1.0));
      break;
  }
  return loss;
}

namespace {

BatchLoss batch_losses(Tape& tape, const TinyModel& model, std::span<const AttackSample> samples,
                       LossMode mode, Tensor* mean_objective) {
  if (samples.empty()) throw std::invalid_argument("attack_loss: no samples");
  BatchLoss batch;
  Tensor total;
  for (const AttackSample& sample : samples) {
    SampleLoss loss = attack_loss(tape, model, sample, mode);
    batch.breakdown.key_tokens_loss += loss.key.item();
    batch.breakdown.ppl_loss += loss.ppl.item();
    total = total.defined() ? add(tape, total, loss.objective) : loss.objective;
  }
  const double m = static_cast<double>(samples.size());
  batch.breakdown.key_tokens_loss /= m;
  batch.breakdown.ppl_loss /= m;
  batch.breakdown.attack_loss = batch.breakdown.key_tokens_loss + batch.breakdown.ppl_loss;
  Tensor mean = mul_scalar(tape, total, 1.0 / m);
  batch.objective = mean.item();
  if (mean_objective) *mean_objective = mean;
  return batch;
}

}  // namespace

BatchLoss eval_attack_loss(const TinyModel& model, std::span<const AttackSample> samples,
                           LossMode mode) {
  Tape tape;
  return batch_losses(tape, model, samples, mode, nullptr);
}

BatchLoss attack_loss_backward(const TinyModel& model, std::span<const AttackSample> samples,
                               LossMode mode) {
  Tape tape;
  Tensor mean;
  BatchLoss batch = batch_losses(tape, model, samples, mode, &mean);
  tape.backward(mean);
  return batch;
}

}  // namespace bflab
