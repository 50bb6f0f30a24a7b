#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "selfjudge/chat_template.hpp"
#include "selfjudge/corpus.hpp"
#include "selfjudge/error.hpp"
#include "selfjudge/judge.hpp"
#include "selfjudge/model.hpp"
#include "selfjudge/synthetic.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

/// 1 − distinct/total over whitespace-token 4-grams; 0 below 4 tokens.
inline double repetition_4gram(std::string_view text) {
  const auto toks = split_whitespace(text);
  if (toks.size() < 4) return 0.0;
  std::set<std::vector<std::string>> distinct;
  const std::size_t total = toks.size() - 3;
  for (std::size_t i = 0; i < total; ++i) distinct.insert({toks[i], toks[i + 1], toks[i + 2], toks[i + 3]});
  return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
}

struct AccuracyResult {
  double percent = 0.0;
  std::size_t correct = 0;
  std::size_t ties = 0;
  std::size_t failed = 0;
  std::size_t count = 0;  // triplets judged

  nlohmann::json to_json() const {
    return {{"percent", percent}, {"correct", correct}, {"ties", ties}, {"failed", failed}, {"count", count}};
  }
};

/// Share of triplets where the judge prefers the labeled chosen response.
/// The chosen response is listed first; ties count as incorrect.
inline AccuracyResult judge_accuracy(const PairwiseJudge& judge, const std::vector<PreferenceTriplet>& test) {
  if (test.empty()) throw Error("judge_accuracy needs a non-empty test set");
  AccuracyResult r;
  for (const auto& t : test) {
    JudgeVerdict v;
    try {
      v = judge.judge(t.prompt, t.chosen, t.rejected);
    } catch (const VerdictError&) {
      ++r.failed;
      ++r.count;
      continue;
    }
    ++r.count;
    if (v.tie()) {
      ++r.ties;
    } else if (v.winner == Winner::a) {
      ++r.correct;
    }
  }
  r.percent = 100.0 * static_cast<double>(r.correct) / static_cast<double>(r.count);
  return r;
}

struct WinRateResult {
  double percent = 0.0;
  double wins = 0.0;  // ties contribute 0.5
  std::size_t count = 0;
  std::size_t excluded = 0;

  nlohmann::json to_json() const {
    return {{"percent", percent}, {"wins", wins}, {"count", count}, {"excluded", excluded}};
  }
};

/// Oracle win rate of responses_a over responses_b (aligned with prompts).
/// Prompts the oracle cannot solve, or with a missing response, are excluded.
inline WinRateResult win_rate(const std::vector<Dialogue>& prompts,
                              const std::vector<std::optional<std::string>>& responses_a,
                              const std::vector<std::optional<std::string>>& responses_b) {
  if (prompts.size() != responses_a.size() || prompts.size() != responses_b.size()) {
    throw Error("win_rate needs one response per prompt from each side");
  }
  WinRateResult r;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto answer = solve_prompt(prompts[i].last_user());
    if (!answer || !responses_a[i] || !responses_b[i]) {
      ++r.excluded;
      continue;
    }
    const int c = oracle_compare(*answer, *responses_a[i], *responses_b[i]);
    r.wins += c > 0 ? 1.0 : (c == 0 ? 0.5 : 0.0);
    ++r.count;
  }
  if (r.count == 0) throw Error("win_rate: no prompt could be evaluated");
  r.percent = 100.0 * r.wins / static_cast<double>(r.count);
  return r;
}

/// Produces one response per prompt; nullopt marks a generation failure.
using Responder = std::function<std::optional<std::string>(const Dialogue&, std::size_t index)>;

/// Samples one response per prompt. Prompt i uses seed derive_seed(seed, i),
/// so two policies evaluated with the same seed share random streams.
inline Responder sampling_responder(const LanguageModel& model, const ChatTemplate& chat,
                                    SampleConfig sc, std::uint64_t seed) {
  return [&model, &chat, sc, seed](const Dialogue& x, std::size_t i) -> std::optional<std::string> {
    try {
      return generate_text(model, render_generation_prompt(x, chat), sc, derive_seed(seed, i));
    } catch (const Error&) {
      return std::nullopt;
    }
  };
}

inline std::vector<std::optional<std::string>> respond_all(const std::vector<Dialogue>& prompts,
                                                           const Responder& responder) {
  std::vector<std::optional<std::string>> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) out.push_back(responder(prompts[i], i));
  return out;
}

struct ResponseStats {
  double mean_length = 0.0;  // characters
  double repetition_4gram = 0.0;
  double accuracy = 0.0;     // percent exactly matching the oracle answer
  std::size_t count = 0;

  nlohmann::json to_json() const {
    return {{"mean_response_length", mean_length},
            {"repetition_4gram", repetition_4gram},
            {"exact_match", accuracy},
            {"count", count}};
  }
};

inline ResponseStats response_stats(const std::vector<Dialogue>& prompts,
                                    const std::vector<std::optional<std::string>>& responses) {
  ResponseStats s;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (!responses[i]) continue;
    ++s.count;
    s.mean_length += static_cast<double>(responses[i]->size());
    s.repetition_4gram += repetition_4gram(*responses[i]);
    const auto answer = solve_prompt(prompts[i].last_user());
    exact += answer && *answer == *responses[i];
  }
  if (s.count > 0) {
    s.mean_length /= static_cast<double>(s.count);
    s.repetition_4gram /= static_cast<double>(s.count);
    s.accuracy = 100.0 * static_cast<double>(exact) / static_cast<double>(s.count);
  }
  return s;
}

struct EvalReport {
  std::optional<AccuracyResult> judge_accuracy;
  std::optional<WinRateResult> win_rate;
  std::optional<ResponseStats> responses;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j = {{"config_hash", config_hash}, {"seed", seed}};
    if (judge_accuracy) j["judge_accuracy"] = judge_accuracy->to_json();
    if (win_rate) j["win_rate"] = win_rate->to_json();
    if (responses) j["responses"] = responses->to_json();
    for (const auto& [k, v] : extra.items()) j[k] = v;
    return j;
  }

  std::string to_text() const {
    std::string out;
    auto row = [&](const std::string& k, const std::string& v) {
      out += k;
      out.append(k.size() < 24 ? 24 - k.size() : 1, ' ');
      out += v + "\n";
    };
    auto num = [](double d) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", d);
      return std::string(buf);
    };
    if (judge_accuracy) {
      row("judge_accuracy", num(judge_accuracy->percent) + "% (n=" + std::to_string(judge_accuracy->count) + ")");
    }
    if (win_rate) row("win_rate", num(win_rate->percent) + "% (n=" + std::to_string(win_rate->count) + ")");
    if (responses) {
      row("mean_response_length", num(responses->mean_length));
      row("repetition_4gram", num(responses->repetition_4gram));
      row("exact_match", num(responses->accuracy) + "%");
    }
    row("seed", std::to_string(seed));
    if (!config_hash.empty()) row("config_hash", config_hash);
    return out;
  }
};

}  // namespace selfjudge
