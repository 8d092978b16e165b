// SPDX-License-Identifier: Apache-2.0
//
// Optional output-naturalness scoring through an external chat-completion
// endpoint. A stealthy attack must leave responses that still read as
// language; this client asks a judge model to grade each response 0-100
// under a deliberately lenient rubric. Everything else in the lab works
// without network access -- an unreachable judge simply leaves the
// naturalness fields empty.
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace bflab {

struct JudgeConfig {
  std::string api_base;  // e.g. "http://127.0.0.1:8080"; plain HTTP only
  std::string api_key;   // sent as a bearer token when non-empty
  std::string model = "gpt-4o";
  int timeout_seconds = 30;
  int delay_ms = 0;  // courtesy pause between requests
};

// Reads JUDGE_API_BASE and JUDGE_API_KEY; empty when no base is set.
std::optional<JudgeConfig> judge_config_from_env();

// The grading instructions sent verbatim with every response.
const std::string& naturalness_rubric();

// Extracts the integer from a "Score: X/100" reply line; empty when the
// format is missing or the value is outside 0..100.
std::optional<int> parse_judge_score(const std::string& reply);

struct JudgeResult {
  std::optional<double> mean_score;   // empty = judge unavailable or all skipped
  std::vector<int> scores;            // per scored response, input order
  std::vector<std::string> warnings;  // skipped responses, transport errors
};

// Grades each response and returns the mean score. Transport or auth failure
// marks the judge unavailable (mean_score empty); an unparseable reply is
// retried once and then skipped with a warning. Throws std::invalid_argument
// when the response list is empty.
JudgeResult judge_naturalness(const JudgeConfig& config,
                              const std::vector<std::string>& responses);

}  // namespace bflab
