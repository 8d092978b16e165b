// SPDX-License-Identifier: Apache-2.0
#include "bflab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "bflab/quant.hpp"
#include "bflab/tensor.hpp"

namespace bflab {

PromptSet load_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) {
    throw std::runtime_error("prompts: cannot open '" + path + "'");
  }
  PromptSet set;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) set.prompts.push_back(line);
  }
  if (set.prompts.empty()) {
    throw std::runtime_error("prompts: '" + path + "' contains no prompts");
  }
  return set;
}

PromptSet builtin_prompts() { return PromptSet{default_attack_prompts()}; }

PreparedSamples prepare_samples(const TinyModel& model, const Vocabulary& vocab,
                                const PosLexicon& lexicon, const PromptSet& prompts,
                                int max_new) {
  PreparedSamples out;
  for (const std::string& prompt : prompts.prompts) {
    const std::vector<int> prompt_ids = tokenize(prompt, vocab);
    if (std::find(prompt_ids.begin(), prompt_ids.end(), Vocabulary::kUnknownId) !=
        prompt_ids.end()) {
      out.warnings.push_back("prompt rejected (unknown word): " + prompt);
      continue;
    }

    const std::vector<int> full =
        generate_greedy(model, prompt_ids, max_new, Vocabulary::kEosId);
    std::vector<int> response(full.begin() + static_cast<long>(prompt_ids.size()),
                              full.end());
    if (!response.empty() && response.back() == Vocabulary::kEosId) response.pop_back();
    if (response.empty()) {
      out.warnings.push_back("prompt rejected (empty response): " + prompt);
      continue;
    }

    const std::string text = detokenize(response, vocab);
    const std::set<int> keys = key_token_set(extract_keywords(text, lexicon), vocab);
    if (keys.empty()) {
      out.warnings.push_back("prompt rejected (no content words to suppress): " + prompt);
      continue;
    }

    AttackSample sample;
    sample.prompt_ids = prompt_ids;
    sample.response_ids = std::move(response);
    sample.key_tokens = keys;
    out.samples.push_back(std::move(sample));
    out.clean_responses.push_back(text);
  }
  return out;
}

int extract_answer_token(std::span<const int> response_ids, const Vocabulary& vocab) {
  const int is_id = vocab.id("is");
  for (std::size_t i = 0; i + 1 < response_ids.size(); ++i) {
    if (response_ids[i] == is_id) return response_ids[i + 1];
  }
  return Vocabulary::kUnknownId;
}

double eval_accuracy(const TinyModel& model, const Vocabulary& vocab,
                     const std::vector<QaTask>& tasks, int max_new) {
  if (tasks.empty()) throw std::invalid_argument("eval_accuracy: no tasks");
  int correct = 0;
  for (const QaTask& task : tasks) {
    const std::vector<int> full =
        generate_greedy(model, task.prompt_ids, max_new, Vocabulary::kEosId);
    const std::span<const int> response(full.data() + task.prompt_ids.size(),
                                        full.size() - task.prompt_ids.size());
    if (extract_answer_token(response, vocab) == task.answer_id) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(tasks.size());
}

double eval_perplexity(const TinyModel& model, const std::vector<int>& corpus) {
  if (corpus.size() < 2) {
    throw std::invalid_argument("eval_perplexity: corpus needs at least two tokens");
  }
  const auto window = static_cast<std::size_t>(model.config().context_len);
  double total_nll = 0.0;
  std::size_t count = 0;

  for (std::size_t start = 0; start + 1 < corpus.size();) {
    // Cut each teacher-forcing window at the last sentence boundary (<eos>)
    // that still fits the context, so windows begin at sentence starts just
    // like the training windows; positions then mean the same thing at eval
    // time as they did during training. Streams without <eos> (or a single
    // over-long sentence) fall back to a full-context cut.
    std::size_t len = std::min(window, corpus.size() - start);
    std::size_t aligned = 0;
    for (std::size_t t = 0; t < len; ++t) {
      if (corpus[start + t] == Vocabulary::kEosId) aligned = t + 1;
    }
    if (aligned >= 2 && len == window) len = aligned;
    if (len < 2) break;
    const std::span<const int> ids(corpus.data() + start, len);
    const Tensor logits = forward_logits(model, ids);

    const int vocab = logits.cols();
    for (std::size_t t = 0; t + 1 < len; ++t) {
      const double* row = logits.values().data() + static_cast<std::size_t>(vocab) * t;
      double max_logit = row[0];
      for (int v = 1; v < vocab; ++v) max_logit = std::max(max_logit, row[v]);
      double sum = 0.0;
      for (int v = 0; v < vocab; ++v) sum += std::exp(row[v] - max_logit);
      const double log_z = max_logit + std::log(sum);
      total_nll += log_z - row[ids[t + 1]];
      ++count;
    }
    start += len;
  }
  return std::exp(total_nll / static_cast<double>(count));
}

namespace {

std::string hex64(std::uint64_t value) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(value));
  return buf;
}


nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"key_tokens_loss", b.key_tokens_loss},
          {"ppl_loss", b.ppl_loss},
          {"attack_loss", b.attack_loss}};
}

void write_fliplog(const std::string& path, const SearchState& search, int top_k) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw std::runtime_error("artifacts: cannot write '" + path + "'");
  for (std::size_t i = 0; i < search.committed.size(); ++i) {
    const FlipRecord& flip = search.committed[i];
    // "timestamp" is a logical sequence number: reruns must be byte-identical,
    // which rules out wall-clock time.
    const nlohmann::json line = {
        {"timestamp", i + 1},
        {"iteration", static_cast<int>(i) / top_k + 1},
        {"module", to_string(flip.module)},
        {"flat_index", flip.flat_index},
        {"bit_index", flip.bit_index},
        {"code_before", flip.code_before},
        {"code_after", flip.code_after},
        {"value_before", flip.value_before},
        {"value_after", flip.value_after},
    };
    out << line.dump() << "\n";
  }
}

void write_report_json(const std::string& path, const EvalReport& report) {
  nlohmann::json doc = {
      {"accuracy_before", report.accuracy_before},
      {"accuracy_after", report.accuracy_after},
      {"ppl_before", report.ppl_before},
      {"ppl_after", report.ppl_after},
      {"naturalness_before",
       report.naturalness_before ? nlohmann::json(*report.naturalness_before)
                                 : nlohmann::json()},
      {"naturalness_after",
       report.naturalness_after ? nlohmann::json(*report.naturalness_after)
                                : nlohmann::json()},
      {"flips_committed", report.flips_committed},
      {"iterations", report.iterations},
      {"loss_history", report.loss_history},
      {"baseline_loss", report.baseline_loss},
      {"baseline", breakdown_json(report.baseline_breakdown)},
      {"final", breakdown_json(report.final_breakdown)},
      {"warnings", report.warnings},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw std::runtime_error("artifacts: cannot write '" + path + "'");
  out << doc.dump(2) << "\n";
}

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_report_csv(const std::string& path, const PipelineConfig& config,
                      const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw std::runtime_error("artifacts: cannot write '" + path + "'");
  out << "scheme,loss_mode,fp4_bit_rule,top_k,n_bits,n_q,seed,"
         "accuracy_before,accuracy_after,ppl_before,ppl_after,"
         "naturalness_before,naturalness_after,flips_committed,iterations,"
         "baseline_loss,final_loss\n";
  out << scheme_name(config.attack.scheme) << ',' << loss_mode_name(config.attack.loss_mode)
      << ',' << fp4_bit_rule_name(config.attack.fp4_bit_rule) << ',' << config.attack.top_k
      << ',' << config.attack.n_bits << ',' << config.attack.n_q << ',' << config.attack.seed
      << ',' << csv_number(report.accuracy_before) << ',' << csv_number(report.accuracy_after)
      << ',' << csv_number(report.ppl_before) << ',' << csv_number(report.ppl_after) << ','
      << (report.naturalness_before ? csv_number(*report.naturalness_before) : "") << ','
      << (report.naturalness_after ? csv_number(*report.naturalness_after) : "") << ','
      << report.flips_committed << ',' << report.iterations << ','
      << csv_number(report.baseline_loss) << ','
      << csv_number(report.loss_history.empty() ? report.baseline_loss
                                                : report.loss_history.back())
      << "\n";
}

void write_manifest(const std::string& path, const PipelineConfig& config,
                    const SearchState& search, std::uint64_t checksum_before,
                    std::uint64_t checksum_after) {
  nlohmann::json iterations = nlohmann::json::array();
  for (const IterationTrace& trace : search.traces) {
    nlohmann::json scans = nlohmann::json::array();
    for (const ModuleScanResult& scan : trace.scans) {
      scans.push_back({{"module", to_string(scan.module)},
                       {"simulated_loss", scan.simulated_loss},
                       {"flips", scan.flips.size()}});
    }
    iterations.push_back({{"scans", scans},
                          {"selected", to_string(trace.selected)},
                          {"committed_loss", trace.committed_loss}});
  }

  nlohmann::json config_echo = {
      {"scheme", scheme_name(config.attack.scheme)},
      {"loss_mode", loss_mode_name(config.attack.loss_mode)},
      {"fp4_bit_rule", fp4_bit_rule_name(config.attack.fp4_bit_rule)},
      {"top_k", config.attack.top_k},
      {"n_bits", config.attack.n_bits},
      {"n_q", config.attack.n_q},
      {"seed", config.attack.seed},
      {"refresh_gradients", config.attack.refresh_gradients},
      {"max_new", config.max_new},
      {"model_path", config.model_path},
      {"prompts_path", config.prompts_path},
  };
  if (config.attack.module_scope) {
    config_echo["module_scope"] = to_string(*config.attack.module_scope);
  }

  const nlohmann::json doc = {
      {"config", config_echo},
      {"code_checksum_before", hex64(checksum_before)},
      {"code_checksum_after", hex64(checksum_after)},
      {"baseline_loss", search.baseline_loss},
      {"baseline", breakdown_json(search.baseline_breakdown)},
      {"final", breakdown_json(search.final_breakdown)},
      {"iterations", iterations},
      {"warnings", search.warnings},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw std::runtime_error("artifacts: cannot write '" + path + "'");
  out << doc.dump(2) << "\n";
}

// Post-attack responses to the surviving prompts, for the judge.
std::vector<std::string> regenerate_responses(const TinyModel& model, const Vocabulary& vocab,
                                              const std::vector<AttackSample>& samples,
                                              int max_new) {
  std::vector<std::string> texts;
  for (const AttackSample& sample : samples) {
    const std::vector<int> full =
        generate_greedy(model, sample.prompt_ids, max_new, Vocabulary::kEosId);
    std::vector<int> response(full.begin() + static_cast<long>(sample.prompt_ids.size()),
                              full.end());
    if (!response.empty() && response.back() == Vocabulary::kEosId) response.pop_back();
    texts.push_back(detokenize(response, vocab));
  }
  return texts;
}

}  // namespace

EvalReport run_pipeline(const PipelineConfig& config) {
  config.attack.validate();
  const ToyWorld world = build_toy_world();

  // Stage: victim.
  TinyModel victim = [&] {
    if (!config.model_path.empty()) {
      try {
        return load_model(config.model_path);
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string("pipeline/load: ") + e.what());
      }
    }
    ModelConfig mc = config.model;
    mc.vocab_size = world.vocab.size();
    mc.seed = config.attack.seed;
    TrainOptions train = config.train;
    train.seed = static_cast<std::uint64_t>(config.attack.seed) + 1;
    try {
      return train_toy(mc, world.train_stream, world.train_starts, train);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("pipeline/train: ") + e.what());
    }
  }();
  if (victim.config().vocab_size != world.vocab.size()) {
    throw std::runtime_error("pipeline/load: checkpoint vocabulary (" +
                             std::to_string(victim.config().vocab_size) +
                             ") does not match the toy world (" +
                             std::to_string(world.vocab.size()) + ")");
  }

  // Stage: quantize. From here on the victim is the rounded model.
  QuantizedModel qm(victim, config.attack.scheme, Fp4Lut::defaults());
  const std::uint64_t checksum_before = qm.code_checksum();

  EvalReport report;
  report.accuracy_before = eval_accuracy(qm.model(), world.vocab, world.tasks, config.max_new);
  report.ppl_before = eval_perplexity(qm.model(), world.heldout_stream);

  // Stage: prepare.
  PromptSet prompts;
  try {
    prompts = config.prompts_path.empty() ? builtin_prompts() : load_prompts(config.prompts_path);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("pipeline/prepare: ") + e.what());
  }
  if (prompts.n_q() > config.attack.n_q) {
    prompts.prompts.resize(static_cast<std::size_t>(config.attack.n_q));
  } else if (prompts.n_q() < config.attack.n_q) {
    report.warnings.push_back("prompt set provides " + std::to_string(prompts.n_q()) +
                              " of the requested n_q=" + std::to_string(config.attack.n_q));
  }

  const PosLexicon lexicon = PosLexicon::defaults();
  PreparedSamples prepared =
      prepare_samples(qm.model(), world.vocab, lexicon, prompts, config.max_new);
  report.warnings.insert(report.warnings.end(), prepared.warnings.begin(),
                         prepared.warnings.end());
  if (prepared.samples.empty()) {
    throw std::runtime_error("pipeline/prepare: every prompt was rejected");
  }

  if (config.judge) {
    const JudgeResult before = judge_naturalness(*config.judge, prepared.clean_responses);
    report.naturalness_before = before.mean_score;
    report.warnings.insert(report.warnings.end(), before.warnings.begin(),
                           before.warnings.end());
  }

  // Stage: attack.
  SearchState search;
  try {
    search = run_attack(qm, prepared.samples, config.attack);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("pipeline/attack: ") + e.what());
  }

  // Stage: evaluate.
  report.accuracy_after = eval_accuracy(qm.model(), world.vocab, world.tasks, config.max_new);
  report.ppl_after = eval_perplexity(qm.model(), world.heldout_stream);
  if (config.judge) {
    const std::vector<std::string> after_texts =
        regenerate_responses(qm.model(), world.vocab, prepared.samples, config.max_new);
    const JudgeResult after = judge_naturalness(*config.judge, after_texts);
    report.naturalness_after = after.mean_score;
    report.warnings.insert(report.warnings.end(), after.warnings.begin(), after.warnings.end());
  }

  report.flips_committed = static_cast<int>(search.committed.size());
  report.iterations = search.iterations;
  report.loss_history = search.loss_history;
  report.baseline_loss = search.baseline_loss;
  report.baseline_breakdown = search.baseline_breakdown;
  report.final_breakdown = search.final_breakdown;
  report.warnings.insert(report.warnings.end(), search.warnings.begin(), search.warnings.end());

  // Stage: artifacts.
  if (!config.out_dir.empty()) {
    try {
      std::filesystem::create_directories(config.out_dir);
      const std::filesystem::path dir(config.out_dir);
      if (config.model_path.empty()) save_model(victim, (dir / "victim.bin").string());
      write_fliplog((dir / "fliplog.jsonl").string(), search, config.attack.top_k);
      write_report_json((dir / "report.json").string(), report);
      write_report_csv((dir / "report.csv").string(), config, report);
      write_manifest((dir / "manifest.json").string(), config, search, checksum_before,
                     qm.code_checksum());
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("pipeline/artifacts: ") + e.what());
    }
  }
  return report;
}

}  // namespace bflab
