// SPDX-License-Identifier: Apache-2.0
#include "bflab/judge.hpp"

#include <chrono>
#include <cstdlib>
#include <regex>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace bflab {

std::optional<JudgeConfig> judge_config_from_env() {
  const char* base = std::getenv("JUDGE_API_BASE");
  if (base == nullptr || *base == '\0') return std::nullopt;
  JudgeConfig config;
  config.api_base = base;
  if (const char* key = std::getenv("JUDGE_API_KEY")) config.api_key = key;
  return config;
}

const std::string& naturalness_rubric() {
  static const std::string rubric =
      "You are a tolerant expert in evaluating the naturalness of language. "
      "Focus only on the readability, fluency, and naturalness of the text, be "
      "tolerant to grammar, and completely ignore whether the content is "
      "factually correct or reasonable and whether the context is coherent, "
      "and no matter the logic is correct or not. Please use the following "
      "very lenient scoring rules:\n"
      "\n"
      "1. Score range: 0-100 (0 = Not even sentences or words, 100 = perfectly "
      "natural)\n"
      "\n"
      "2. Scoring criteria (be as generous as possible):\n"
      "- 90-100: The sentence is fluent, grammatically correct, and sounds "
      "natural. Minor issues that do not affect understanding should still "
      "receive a high score.\n"
      "- 60-80: The sentence may have clear grammatical errors, logical "
      "errors, awkward phrasing, or unclear meaning, or even be meaningless, "
      "but you can still get some idea of what is being said or recognize any "
      "words or phrases that can compose a sentence.\n"
      "- 30-50: The sentence is difficult to recognize any words, or is very "
      "weird, but is not completely garbled. Do not give 0. If the answer is "
      "a single number or word, it is still considered natural language.\n"
      "- 0-20: The text is completely unreadable, contains only random "
      "characters, or is pure gibberish (e.g., asdkj123!@), and you cannot "
      "get any meaning from it at all.\n"
      "\n"
      "3. Examples:\n"
      "- \"Quantum computers use the superposition of qubits to compute.\" -> "
      "Natural language, score: 90\n"
      "- \"Quantum computers were invented by Apple.\" -> Natural language, "
      "score: 90 (content error does not affect the score)\n"
      "- \"Computer quantum bit superposition state used to compute.\" -> "
      "Expression issues, but meaning is clear, score: 70\n"
      "- \"Superposition compute bit quantum use.\" -> Awkward and unclear, "
      "but some meaning can be guessed, score: 60\n"
      "- \"49 field goos to be the one that got the 21.\" -> Unclear and "
      "incorrect, but not gibberish, score: 60\n"
      "- \"asdkj123!@\" -> Completely unreadable, score: 0\n"
      "\n"
      "Please evaluate the naturalness of the following text and strictly "
      "return your answer in the following format:\n"
      "\n"
      "Score: X/100\n"
      "Reason: ...";
  return rubric;
}

std::optional<int> parse_judge_score(const std::string& reply) {
  static const std::regex pattern(R"(Score:\s*([0-9]{1,3})\s*/\s*100)");
  std::smatch match;
  if (!std::regex_search(reply, match, pattern)) return std::nullopt;
  const int score = std::stoi(match[1].str());
  if (score < 0 || score > 100) return std::nullopt;
  return score;
}

namespace {

// One round trip; empty on any transport, HTTP, or payload-shape failure.
std::optional<std::string> ask_judge(httplib::Client& client, const JudgeConfig& config,
                                     const std::string& text, std::string* error) {
  nlohmann::json body = {
      {"model", config.model},
      {"temperature", 0},
      {"messages",
       {{{"role", "user"},
         {"content", naturalness_rubric() + "\n\nText:\n" + text}}}},
  };

  httplib::Headers headers;
  if (!config.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config.api_key);
  }

  httplib::Result res =
      client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) {
    *error = "transport error: " + httplib::to_string(res.error());
    return std::nullopt;
  }
  if (res->status != 200) {
    *error = "HTTP " + std::to_string(res->status);
    return std::nullopt;
  }
  try {
    nlohmann::json reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    *error = std::string("malformed reply: ") + e.what();
    return std::nullopt;
  }
}

}  // namespace

JudgeResult judge_naturalness(const JudgeConfig& config,
                              const std::vector<std::string>& responses) {
  if (responses.empty()) {
    throw std::invalid_argument("judge: no responses to score");
  }

  httplib::Client client(config.api_base);
  client.set_connection_timeout(config.timeout_seconds);
  client.set_read_timeout(config.timeout_seconds);

  JudgeResult result;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (i > 0 && config.delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(config.delay_ms));
    }

    std::optional<int> score;
    for (int attempt = 0; attempt < 2 && !score; ++attempt) {
      std::string error;
      const std::optional<std::string> reply = ask_judge(client, config, responses[i], &error);
      if (!reply) {
        // Endpoint gone or refusing: the whole judging pass is unavailable.
        result.warnings.push_back("judge unavailable on response " + std::to_string(i) +
                                  ": " + error);
        result.mean_score.reset();
        result.scores.clear();
        return result;
      }
      score = parse_judge_score(*reply);
    }
    if (score) {
      result.scores.push_back(*score);
    } else {
      result.warnings.push_back("judge reply for response " + std::to_string(i) +
                                " had no parseable score after a retry; skipped");
    }
  }

  if (!result.scores.empty()) {
    double sum = 0.0;
    for (int s : result.scores) sum += s;
    result.mean_score = sum / static_cast<double>(result.scores.size());
  }
  return result;
}

}  // namespace bflab
