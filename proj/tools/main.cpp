// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the bit-flip laboratory:
//   train-toy  train the toy QA victim and save a checkpoint
//   attack     run the full pipeline (prepare, quantize, search, evaluate)
//   eval       measure a checkpoint's accuracy and perplexity, no attack
//   report     pretty-print a finished run's report.json
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bflab/harness.hpp"
#include "bflab/judge.hpp"
#include "bflab/quant.hpp"
#include "bflab/toytask.hpp"

namespace {

using namespace bflab;

// "L<layer>.<Kind>", e.g. "L0.Query".
ModuleId parse_module_id(const std::string& text) {
  const std::size_t dot = text.find('.');
  if (text.size() < 4 || text[0] != 'L' || dot == std::string::npos) {
    throw CLI::ValidationError("--module", "expected L<layer>.<Kind>, e.g. L0.Query");
  }
  ModuleId id;
  try {
    id.layer = std::stoi(text.substr(1, dot - 1));
    id.kind = module_kind_from_name(text.substr(dot + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError("--module", "expected L<layer>.<Kind>, e.g. L0.Query");
  }
  return id;
}

std::optional<JudgeConfig> resolve_judge(const std::string& endpoint_flag) {
  std::optional<JudgeConfig> judge = judge_config_from_env();
  if (!endpoint_flag.empty()) {
    if (!judge) judge.emplace();
    judge->api_base = endpoint_flag;
  }
  return judge;
}

void add_model_dims(CLI::App* cmd, ModelConfig& model) {
  cmd->add_option("--d-model", model.d_model, "Residual width");
  cmd->add_option("--n-layers", model.n_layers, "Transformer blocks");
  cmd->add_option("--n-heads", model.n_heads, "Attention heads");
  cmd->add_option("--d-ff", model.d_ff, "MLP hidden width");
  cmd->add_option("--context-len", model.context_len, "Maximum sequence length");
}

void print_metrics_line(const char* label, double accuracy, double ppl,
                        const std::optional<double>& naturalness) {
  std::printf("%-8s accuracy %6.2f%%   perplexity %10.3f", label, accuracy * 100.0, ppl);
  if (naturalness) std::printf("   naturalness %5.1f", *naturalness);
  std::printf("\n");
}

int cmd_train_toy(const std::string& out_path, ModelConfig model, TrainOptions train,
                  unsigned seed) {
  const ToyWorld world = build_toy_world();
  model.vocab_size = world.vocab.size();
  model.seed = seed;
  train.seed = seed + 1;

  TrainStats stats;
  const TinyModel victim = train_toy(model, world.train_stream, world.train_starts, train, &stats);
  if (!out_path.empty()) {
    if (const auto dir = std::filesystem::path(out_path).parent_path(); !dir.empty()) {
      std::filesystem::create_directories(dir);
    }
    save_model(victim, out_path);
  }
  std::printf("trained %d steps: next-token NLL %.4f -> %.4f\n", train.steps, stats.initial_nll,
              stats.final_nll);
  const double accuracy = eval_accuracy(victim, world.vocab, world.tasks);
  const double ppl = eval_perplexity(victim, world.heldout_stream);
  print_metrics_line("float", accuracy, ppl, std::nullopt);
  if (!out_path.empty()) std::printf("checkpoint written to %s\n", out_path.c_str());
  return 0;
}

int cmd_attack(const PipelineConfig& config) {
  const EvalReport report = run_pipeline(config);
  print_metrics_line("before", report.accuracy_before, report.ppl_before,
                     report.naturalness_before);
  print_metrics_line("after", report.accuracy_after, report.ppl_after, report.naturalness_after);
  std::printf("flips %d over %d iterations; attack objective %.6f -> %.6f\n",
              report.flips_committed, report.iterations, report.baseline_loss,
              report.loss_history.empty() ? report.baseline_loss : report.loss_history.back());
  for (const std::string& warning : report.warnings) {
    std::fprintf(stderr, "warning: %s\n", warning.c_str());
  }
  if (!config.out_dir.empty()) {
    std::printf("artifacts in %s\n", config.out_dir.c_str());
  }
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& scheme_name_arg, int max_new,
             const std::string& judge_endpoint) {
  const ToyWorld world = build_toy_world();
  TinyModel victim = load_model(model_path);
  if (victim.config().vocab_size != world.vocab.size()) {
    throw std::runtime_error("eval: checkpoint vocabulary does not match the toy world");
  }

  std::optional<QuantizedModel> quantized;
  if (!scheme_name_arg.empty()) {
    quantized.emplace(victim, scheme_from_name(scheme_name_arg), Fp4Lut::defaults());
  }
  const TinyModel& model = quantized ? quantized->model() : victim;

  const double accuracy = eval_accuracy(model, world.vocab, world.tasks, max_new);
  const double ppl = eval_perplexity(model, world.heldout_stream);

  std::optional<double> naturalness;
  if (const auto judge = resolve_judge(judge_endpoint)) {
    const PreparedSamples prepared = prepare_samples(model, world.vocab, PosLexicon::defaults(),
                                                     builtin_prompts(), max_new);
    if (!prepared.clean_responses.empty()) {
      naturalness = judge_naturalness(*judge, prepared.clean_responses).mean_score;
    }
  }
  print_metrics_line(scheme_name_arg.empty() ? "float" : scheme_name_arg.c_str(), accuracy, ppl,
                     naturalness);
  return 0;
}

int cmd_report(const std::string& dir) {
  const std::filesystem::path path = std::filesystem::path(dir) / "report.json";
  std::ifstream in(path);
  if (!in.good()) {
    throw std::runtime_error("report: cannot open " + path.string());
  }
  const nlohmann::json doc = nlohmann::json::parse(in);

  auto naturalness = [&doc](const char* key) -> std::optional<double> {
    if (doc[key].is_null()) return std::nullopt;
    return doc[key].get<double>();
  };
  print_metrics_line("before", doc["accuracy_before"], doc["ppl_before"],
                     naturalness("naturalness_before"));
  print_metrics_line("after", doc["accuracy_after"], doc["ppl_after"],
                     naturalness("naturalness_after"));
  std::printf("flips %d over %d iterations; attack objective %.6f", doc["flips_committed"].get<int>(),
              doc["iterations"].get<int>(), doc["baseline_loss"].get<double>());
  for (const auto& loss : doc["loss_history"]) std::printf(" -> %.6f", loss.get<double>());
  std::printf("\n");
  for (const auto& warning : doc["warnings"]) {
    std::printf("warning: %s\n", warning.get<std::string>().c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale laboratory for stealthy bit-flip attacks on a quantized toy LM"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");
  app.set_config("--config", "",
                 "key=value file; [attack] sections configure that subcommand, flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);

  // train-toy ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train-toy", "Train the toy QA victim");
  train_cmd->fallthrough();
  std::string train_out = "victim.bin";
  ModelConfig train_model;
  TrainOptions train_options;
  unsigned train_seed = 1;
  train_cmd->add_option("--out", train_out, "Checkpoint path")->capture_default_str();
  train_cmd->add_option("--steps", train_options.steps, "Adam steps")->capture_default_str();
  train_cmd->add_option("--lr", train_options.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--batch", train_options.batch, "Sentences per step")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_seed, "Init seed (training uses seed+1)")
      ->capture_default_str();
  add_model_dims(train_cmd, train_model);

  // attack --------------------------------------------------------------
  auto* attack_cmd = app.add_subcommand("attack", "Run the full attack pipeline");
  attack_cmd->fallthrough();
  PipelineConfig pipeline;
  pipeline.out_dir = "out";
  std::string scheme_arg = "int8";
  std::string loss_mode_arg = "full";
  std::string bit_rule_arg = "max-deviation";
  std::string module_arg;
  std::string judge_endpoint;
  attack_cmd->add_option("--top-k", pipeline.attack.top_k, "Bits flipped per in-module attack")
      ->capture_default_str();
  attack_cmd->add_option("--n-bits", pipeline.attack.n_bits, "Total flip budget (0 = null attack)")
      ->capture_default_str();
  attack_cmd->add_option("--n-q", pipeline.attack.n_q, "Attack-dataset size")
      ->capture_default_str();
  attack_cmd->add_option("--scheme", scheme_arg, "Weight codec: int8 or fp4")
      ->capture_default_str();
  attack_cmd
      ->add_option("--loss-mode", loss_mode_arg, "full, no-ppl, no-key or inverted-ppl")
      ->capture_default_str();
  attack_cmd
      ->add_option("--fp4-bit-rule", bit_rule_arg, "4-bit flip rule: max-deviation or msb")
      ->capture_default_str();
  attack_cmd->add_option("--seed", pipeline.attack.seed, "Seed for init and training")
      ->capture_default_str();
  attack_cmd->add_flag("--refresh-gradients,!--stale-gradients", pipeline.attack.refresh_gradients,
                       "Recompute ranking gradients every iteration");
  attack_cmd->add_option("--module", module_arg, "Restrict the scan to one module (L0.Query)");
  attack_cmd->add_option("--model", pipeline.model_path,
                         "Victim checkpoint; trains one in-run when omitted");
  attack_cmd->add_option("--prompts", pipeline.prompts_path,
                         "Attack prompt file, one per line (built-ins when omitted)");
  attack_cmd->add_option("--out-dir", pipeline.out_dir, "Artifact directory")
      ->capture_default_str();
  attack_cmd->add_option("--max-new", pipeline.max_new, "Response length cap")
      ->capture_default_str();
  attack_cmd->add_option("--steps", pipeline.train.steps, "Training steps for an in-run victim")
      ->capture_default_str();
  attack_cmd->add_option("--lr", pipeline.train.lr, "Learning rate for an in-run victim")
      ->capture_default_str();
  attack_cmd->add_option("--judge-endpoint", judge_endpoint,
                         "Chat-completions endpoint for naturalness scoring");
  add_model_dims(attack_cmd, pipeline.model);

  // eval ----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint without attacking");
  eval_cmd->fallthrough();
  std::string eval_model;
  std::string eval_scheme;
  std::string eval_judge_endpoint;
  int eval_max_new = 16;
  eval_cmd->add_option("--model", eval_model, "Victim checkpoint")->required();
  eval_cmd->add_option("--scheme", eval_scheme, "Quantize first: int8 or fp4 (float if omitted)");
  eval_cmd->add_option("--max-new", eval_max_new, "Response length cap")->capture_default_str();
  eval_cmd->add_option("--judge-endpoint", eval_judge_endpoint,
                       "Chat-completions endpoint for naturalness scoring");

  // report --------------------------------------------------------------
  auto* report_cmd = app.add_subcommand("report", "Print a finished run's report");
  report_cmd->fallthrough();
  std::string report_dir = "out";
  report_cmd->add_option("dir", report_dir, "Artifact directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train_toy(train_out, train_model, train_options, train_seed);
    if (*attack_cmd) {
      pipeline.attack.scheme = scheme_from_name(scheme_arg);
      pipeline.attack.loss_mode = loss_mode_from_name(loss_mode_arg);
      pipeline.attack.fp4_bit_rule = fp4_bit_rule_from_name(bit_rule_arg);
      if (!module_arg.empty()) pipeline.attack.module_scope = parse_module_id(module_arg);
      pipeline.judge = resolve_judge(judge_endpoint);
      return cmd_attack(pipeline);
    }
    if (*eval_cmd) return cmd_eval(eval_model, eval_scheme, eval_max_new, eval_judge_endpoint);
    if (*report_cmd) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
