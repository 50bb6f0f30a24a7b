#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfjudge/chat_template.hpp"
#include "selfjudge/error.hpp"
#include "selfjudge/judge.hpp"
#include "selfjudge/model.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

struct TournamentMatch {
  std::size_t round = 0;
  std::size_t left = 0;   // leaf indices
  std::size_t right = 0;
  std::size_t winner = 0;
  JudgeVerdict verdict;
};

struct TournamentTree {
  std::vector<std::string> leaves;
  std::vector<TournamentMatch> matches;
  std::vector<std::pair<std::size_t, std::size_t>> byes;  // (round, leaf)
  std::size_t champion = 0;
  bool degenerate = false;  // every leaf identical; nothing was judged

  nlohmann::json to_json() const {
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& m : matches) {
      ms.push_back({{"round", m.round},
                    {"left", m.left},
                    {"right", m.right},
                    {"winner", m.winner},
                    {"verdict", m.verdict.to_json()}});
    }
    nlohmann::json bs = nlohmann::json::array();
    for (const auto& [r, l] : byes) bs.push_back({{"round", r}, {"leaf", l}});
    return {{"leaves", leaves}, {"matches", ms}, {"byes", bs}, {"champion", champion}, {"degenerate", degenerate}};
  }
};

/// Single-elimination bracket over the given leaf order. Adjacent leaves meet;
/// an odd one out at the end of a round advances on a bye. Exactly N−1 matches.
inline TournamentTree run_tournament(const std::vector<std::string>& responses, const Dialogue& x,
                                     const PairwiseJudge& judge) {
  if (responses.empty()) throw ConfigError("tournament needs at least one response");
  TournamentTree tree;
  tree.leaves = responses;
  if (responses.size() > 1 &&
      std::all_of(responses.begin(), responses.end(), [&](const auto& r) { return r == responses.front(); })) {
    tree.degenerate = true;
    return tree;
  }
  std::vector<std::size_t> alive(responses.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  for (std::size_t round = 0; alive.size() > 1; ++round) {
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i < alive.size(); i += 2) {
      if (i + 1 == alive.size()) {
        tree.byes.emplace_back(round, alive[i]);
        next.push_back(alive[i]);
        continue;
      }
      TournamentMatch m;
      m.round = round;
      m.left = alive[i];
      m.right = alive[i + 1];
      m.verdict = judge.judge(x, responses[m.left], responses[m.right]);
      m.winner = m.verdict.winner == Winner::a ? m.left : m.right;
      next.push_back(m.winner);
      tree.matches.push_back(std::move(m));
    }
    alive = std::move(next);
  }
  tree.champion = alive.front();
  return tree;
}

struct BestOfN {
  std::string best;
  TournamentTree tree;
  std::size_t generations = 0;
  std::size_t judgments = 0;
};

/// Samples n responses (leaf i uses seed derive_seed(seed, i)) and returns the
/// tournament champion. Greedy decoding forces n = 1.
inline BestOfN best_of_n(const LanguageModel& model, const ChatTemplate& chat, const Dialogue& x,
                         std::size_t n, const SampleConfig& sc, const PairwiseJudge& judge,
                         std::uint64_t seed) {
  if (n == 0) throw ConfigError("best-of-n requires n >= 1");
  sc.validate();
  if (sc.greedy()) n = 1;
  const auto prompt = render_generation_prompt(x, chat);
  std::vector<std::string> leaves;
  for (std::size_t i = 0; i < n; ++i) leaves.push_back(generate_text(model, prompt, sc, derive_seed(seed, i)));
  BestOfN out;
  out.generations = n;
  const std::size_t before = judge.judgments();
  out.tree = run_tournament(leaves, x, judge);
  out.judgments = judge.judgments() - before;
  out.best = out.tree.leaves[out.tree.champion];
  return out;
}

}  // namespace selfjudge
