#pragma once

#include <array>
#include <atomic>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "selfjudge/chat_template.hpp"
#include "selfjudge/corpus.hpp"
#include "selfjudge/error.hpp"
#include "selfjudge/model.hpp"
#include "selfjudge/synthetic.hpp"

namespace selfjudge {

enum class Normalization { two_token, full_vocab };
enum class TieBreak { none, mean_likelihood, first_listed };
enum class Winner { a, b };

inline std::string_view to_string(Normalization n) {
  return n == Normalization::two_token ? "two_token" : "full_vocab";
}

inline Normalization normalization_from_string(std::string_view s) {
  if (s == "two_token") return Normalization::two_token;
  if (s == "full_vocab") return Normalization::full_vocab;
  throw ConfigError("unknown normalization '" + std::string(s) + "'");
}

inline std::string_view to_string(TieBreak t) {
  switch (t) {
    case TieBreak::none: return "none";
    case TieBreak::mean_likelihood: return "mean_likelihood";
    case TieBreak::first_listed: return "first_listed";
  }
  return "none";
}

inline std::string_view to_string(Winner w) { return w == Winner::a ? "a" : "b"; }

struct OrderProbs {
  double p_a = 0.0;  // probability of the "A" token
  double p_b = 0.0;
};

struct PrincipleVerdict {
  double score_a = 0.0;
  double score_b = 0.0;
  Winner winner = Winner::a;
};

struct JudgeVerdict {
  double score_a = 0.0;
  double score_b = 0.0;
  Winner winner = Winner::a;
  std::array<OrderProbs, 2> per_order{};
  std::map<std::string, PrincipleVerdict> per_principle;
  std::vector<std::string> failed_principles;
  TieBreak tie_broken_by = TieBreak::none;

  /// True when no signal separated the pair (only the listing order decided).
  bool tie() const noexcept { return tie_broken_by == TieBreak::first_listed; }

  nlohmann::json to_json(const std::string& prompt_id = {}) const {
    nlohmann::json j = {
        {"score_a", score_a},
        {"score_b", score_b},
        {"winner", to_string(winner)},
        {"per_order",
         {{{"p_token_A", per_order[0].p_a}, {"p_token_B", per_order[0].p_b}},
          {{"p_token_A", per_order[1].p_a}, {"p_token_B", per_order[1].p_b}}}},
        {"tie_broken_by", to_string(tie_broken_by)},
    };
    if (!prompt_id.empty()) j["prompt_id"] = prompt_id;
    if (!per_principle.empty()) {
      nlohmann::json pp = nlohmann::json::object();
      for (const auto& [p, v] : per_principle) {
        pp[p] = {{"score_a", v.score_a}, {"score_b", v.score_b}, {"winner", to_string(v.winner)}};
      }
      j["per_principle"] = pp;
    }
    if (!failed_principles.empty()) j["failed_principles"] = failed_principles;
    return j;
  }
};

struct JudgeConfig {
  Normalization normalization = Normalization::two_token;
  JudgmentKind kind = JudgmentKind::plain;
  std::vector<std::string> principles;  // used by the principled kinds

  void validate() const {
    if (kind != JudgmentKind::plain && principles.empty()) {
      throw ConfigError("principled judgment requires a non-empty principle set");
    }
  }
};

/// Reads p(A), p(B) at the judge-token slot of a rendered judgment.
inline OrderProbs judge_token_probs(const LanguageModel& model, const JudgmentPrompt& jp,
                                    Normalization norm) {
  const auto& tok = model.tokenizer();
  const auto ta = tok.single_token("A"), tb = tok.single_token("B");
  if (!ta || !tb) throw ConfigError("judge tokens A/B are not single tokens under this tokenizer");
  const auto ids = tok.encode(jp.prefix());
  if (ids.size() >= model.context_length()) {
    throw VerdictError("judgment prompt of " + std::to_string(ids.size()) +
                       " tokens leaves no room for the judge token");
  }
  const auto dist = model.next_token_distribution(ids);
  OrderProbs p{dist[static_cast<std::size_t>(*ta)], dist[static_cast<std::size_t>(*tb)]};
  if (norm == Normalization::two_token) {
    const double z = p.p_a + p.p_b;
    if (z > 0.0) {
      p = {p.p_a / z, p.p_b / z};
    } else {
      p = {0.5, 0.5};
    }
  }
  return p;
}

/// Position-swap average: order 1 puts y_a in slot A, order 2 puts it in
/// slot B. Exact ties go to the first-listed response.
inline JudgeVerdict combine_orders(const OrderProbs& order1, const OrderProbs& order2) {
  JudgeVerdict v;
  v.per_order = {order1, order2};
  v.score_a = (order1.p_a + order2.p_b) / 2.0;
  v.score_b = (order1.p_b + order2.p_a) / 2.0;
  if (v.score_a > v.score_b) {
    v.winner = Winner::a;
  } else if (v.score_b > v.score_a) {
    v.winner = Winner::b;
  } else {
    v.winner = Winner::a;
    v.tie_broken_by = TieBreak::first_listed;
  }
  return v;
}

/// Majority over per-principle winners, then the mean of per-principle
/// scores, then the first-listed response.
inline JudgeVerdict aggregate_principles(const std::map<std::string, JudgeVerdict>& verdicts,
                                         std::vector<std::string> failed = {}) {
  if (verdicts.empty()) throw VerdictError("every principle failed to produce a verdict");
  JudgeVerdict out;
  out.failed_principles = std::move(failed);
  std::size_t wins_a = 0, wins_b = 0;
  double sum_a = 0.0, sum_b = 0.0;
  for (const auto& [p, v] : verdicts) {
    out.per_principle[p] = {v.score_a, v.score_b, v.winner};
    (v.winner == Winner::a ? wins_a : wins_b) += 1;
    sum_a += v.score_a;
    sum_b += v.score_b;
    for (int o = 0; o < 2; ++o) {
      out.per_order[o].p_a += v.per_order[o].p_a / static_cast<double>(verdicts.size());
      out.per_order[o].p_b += v.per_order[o].p_b / static_cast<double>(verdicts.size());
    }
  }
  const double n = static_cast<double>(verdicts.size());
  out.score_a = sum_a / n;
  out.score_b = sum_b / n;
  if (wins_a != wins_b) {
    out.winner = wins_a > wins_b ? Winner::a : Winner::b;
  } else if (out.score_a != out.score_b) {
    out.winner = out.score_a > out.score_b ? Winner::a : Winner::b;
    out.tie_broken_by = TieBreak::mean_likelihood;
  } else {
    out.winner = Winner::a;
    out.tie_broken_by = TieBreak::first_listed;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Judges

/// Anything that can order two responses to a prompt.
class PairwiseJudge {
 public:
  virtual ~PairwiseJudge() = default;
  virtual JudgeVerdict judge(const Dialogue& x, std::string_view y_a, std::string_view y_b) const = 0;
  virtual std::string identity() const = 0;

  std::size_t judgments() const noexcept { return judgments_.load(); }
  void reset_counters() const noexcept { judgments_ = 0; }

 protected:
  void count_judgment() const noexcept { ++judgments_; }

 private:
  mutable std::atomic<std::size_t> judgments_{0};
};

/// Judge backed by a language model's judge-token likelihoods.
class ModelJudge final : public PairwiseJudge {
 public:
  ModelJudge(const LanguageModel& model, const TemplateSet& templates, JudgeConfig cfg)
      : model_(model), templates_(templates), cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  /// One principle (or the plain template when `principle` is empty).
  JudgeVerdict judge_pair(const Dialogue& x, std::string_view y_a, std::string_view y_b,
                          JudgmentKind kind, const std::optional<std::string>& principle) const {
    if (y_a.empty() || y_b.empty()) throw VerdictError("cannot judge an empty response");
    OrderProbs probs[2];
    for (int o = 0; o < 2; ++o) {
      const auto first = o == 0 ? y_a : y_b;
      const auto second = o == 0 ? y_b : y_a;
      JudgmentPrompt jp;
      try {
        jp = templates_.render(kind, x, first, second, principle, model_.tokenizer(), model_.context_length());
      } catch (const LengthError& e) {
        throw VerdictError(std::string("judgment overflow: ") + e.what());
      }
      probs[o] = judge_token_probs(model_, jp, cfg_.normalization);
      ++forward_passes_;
      if (jp.truncated_turns > 0) ++truncations_;
    }
    return combine_orders(probs[0], probs[1]);
  }

  JudgeVerdict judge(const Dialogue& x, std::string_view y_a, std::string_view y_b) const override {
    count_judgment();
    if (cfg_.kind == JudgmentKind::plain) return judge_pair(x, y_a, y_b, JudgmentKind::plain, std::nullopt);
    std::map<std::string, JudgeVerdict> verdicts;
    std::vector<std::string> failed;
    for (const auto& p : cfg_.principles) {
      try {
        verdicts.emplace(p, judge_pair(x, y_a, y_b, cfg_.kind, p));
      } catch (const VerdictError&) {
        failed.push_back(p);
      }
    }
    return aggregate_principles(verdicts, std::move(failed));
  }

  std::string identity() const override { return model_.identity(); }

  std::size_t forward_passes() const noexcept { return forward_passes_.load(); }
  std::size_t truncations() const noexcept { return truncations_.load(); }
  const JudgeConfig& config() const noexcept { return cfg_; }

 private:
  const LanguageModel& model_;
  const TemplateSet& templates_;
  JudgeConfig cfg_;
  mutable std::atomic<std::size_t> forward_passes_{0};
  mutable std::atomic<std::size_t> truncations_{0};
};

/// Programmatic judge for synthetic tasks: scores 1/0 by the oracle, 0.5 each
/// on an oracle tie.
class OracleJudge final : public PairwiseJudge {
 public:
  JudgeVerdict judge(const Dialogue& x, std::string_view y_a, std::string_view y_b) const override {
    count_judgment();
    const auto answer = solve_prompt(x.last_user());
    if (!answer) throw VerdictError("oracle cannot solve prompt '" + x.last_user() + "'");
    const int c = oracle_compare(*answer, y_a, y_b);
    const double pa = c > 0 ? 1.0 : (c < 0 ? 0.0 : 0.5);
    return combine_orders({pa, 1.0 - pa}, {1.0 - pa, pa});
  }

  std::string identity() const override { return "oracle"; }
};

/// (x, winner, loser) with the verdict recorded in meta.
inline PreferenceTriplet to_pseudo_triplet(const JudgeVerdict& v, const Dialogue& x, const std::string& y_a,
                                           const std::string& y_b) {
  if (y_a == y_b) throw DegeneratePairError("pseudo-triplet needs two distinct responses");
  PreferenceTriplet t;
  t.prompt = x;
  t.chosen = v.winner == Winner::a ? y_a : y_b;
  t.rejected = v.winner == Winner::a ? y_b : y_a;
  t.meta = {{"score_a", v.score_a},
            {"score_b", v.score_b},
            {"winner", to_string(v.winner)},
            {"tie_broken_by", to_string(v.tie_broken_by)}};
  return t;
}

}  // namespace selfjudge
