#include <gtest/gtest.h>

#include "selfjudge/eval.hpp"
#include "selfjudge/toy_model.hpp"

using namespace selfjudge;

namespace {

// Picks a side from a hash of the pair, ignoring content quality.
class CoinJudge final : public PairwiseJudge {
 public:
  JudgeVerdict judge(const Dialogue&, std::string_view a, std::string_view b) const override {
    count_judgment();
    const bool pick_a = (hash_text(std::string(a) + "|" + std::string(b)).front() - '0') % 2 == 0;
    return combine_orders({pick_a ? 0.9 : 0.1, pick_a ? 0.1 : 0.9}, {pick_a ? 0.1 : 0.9, pick_a ? 0.9 : 0.1});
  }
  std::string identity() const override { return "coin"; }
};

class TieJudge final : public PairwiseJudge {
 public:
  JudgeVerdict judge(const Dialogue&, std::string_view, std::string_view) const override {
    return combine_orders({0.5, 0.5}, {0.5, 0.5});
  }
  std::string identity() const override { return "tie"; }
};

std::vector<PreferenceTriplet> test_triplets(std::size_t n) {
  std::vector<PreferenceTriplet> out;
  for (const auto& g : make_synthetic_corpus(SyntheticTaskSpec{}, n, synthetic_principles(), 6)) {
    for (auto& t : build_overall_triplets(g.responses, g.prompt)) out.push_back(t);
  }
  return out;
}

}  // namespace

TEST(Repetition, CountsRepeatedFourGrams) {
  EXPECT_DOUBLE_EQ(repetition_4gram("a b c d e f"), 0.0);
  EXPECT_DOUBLE_EQ(repetition_4gram("a b a b a b a b"), 0.6);
  EXPECT_DOUBLE_EQ(repetition_4gram("a b c"), 0.0);
  EXPECT_DOUBLE_EQ(repetition_4gram("x x x x x"), 0.5);
  EXPECT_DOUBLE_EQ(repetition_4gram("  a\tb\n c d  "), 0.0);
}

TEST(Accuracy, OracleIsPerfectAndTiesCountAgainst) {
  const auto ts = test_triplets(40);
  const auto oracle = judge_accuracy(OracleJudge{}, ts);
  EXPECT_DOUBLE_EQ(oracle.percent, 100.0);
  EXPECT_EQ(oracle.count, ts.size());
  const auto ties = judge_accuracy(TieJudge{}, ts);
  EXPECT_DOUBLE_EQ(ties.percent, 0.0);
  EXPECT_EQ(ties.ties, ts.size());
  EXPECT_THROW(judge_accuracy(OracleJudge{}, {}), Error);
}

TEST(Accuracy, CoinFlipJudgeSitsNearChance) {
  const auto ts = test_triplets(400);
  ASSERT_GT(ts.size(), 1000u);
  const auto r = judge_accuracy(CoinJudge{}, ts);
  EXPECT_NEAR(r.percent, 50.0, 5.0);
}

TEST(Accuracy, UnsolvablePromptsCountAsFailures) {
  PreferenceTriplet t;
  t.prompt = Dialogue::from_text("hello");
  t.chosen = "a";
  t.rejected = "b";
  const auto r = judge_accuracy(OracleJudge{}, {t});
  EXPECT_EQ(r.failed, 1u);
  EXPECT_DOUBLE_EQ(r.percent, 0.0);
}

TEST(WinRate, SelfComparisonIsEven) {
  std::vector<Dialogue> ps;
  std::vector<std::optional<std::string>> rs;
  for (const auto& g : make_synthetic_corpus(SyntheticTaskSpec{}, 30, {}, 2)) {
    ps.push_back(g.prompt);
    rs.push_back(g.responses[g.responses.size() / 2].text);
  }
  EXPECT_DOUBLE_EQ(win_rate(ps, rs, rs).percent, 50.0);
}

TEST(WinRate, ScoresWinsTiesAndExclusions) {
  const std::vector<Dialogue> ps{Dialogue::from_text("sort 2 1"), Dialogue::from_text("sort 3 1"),
                                 Dialogue::from_text("max 1 5"), Dialogue::from_text("chat")};
  const std::vector<std::optional<std::string>> a{"1 2", "1", "5", "x"};
  const std::vector<std::optional<std::string>> b{"2 1", "1 3", std::nullopt, "y"};
  const auto r = win_rate(ps, a, b);
  EXPECT_EQ(r.count, 2u);
  EXPECT_EQ(r.excluded, 2u);
  EXPECT_DOUBLE_EQ(r.wins, 1.0);
  EXPECT_DOUBLE_EQ(r.percent, 50.0);
  EXPECT_THROW(win_rate(ps, a, {}), Error);
}

TEST(Responses, StatsAndSharedSeeds) {
  ToyModelConfig mc;
  mc.layers = 1;
  mc.hidden = 16;
  mc.heads = 2;
  mc.context = 128;
  const ToyModel m(mc);
  const auto chat = load_template_set("synthetic").chat;
  std::vector<Dialogue> ps;
  for (const auto& g : make_synthetic_corpus(SyntheticTaskSpec{}, 5, {}, 2)) ps.push_back(g.prompt);
  SampleConfig sc;
  sc.max_new_tokens = 10;
  const auto a = respond_all(ps, sampling_responder(m, chat, sc, 4));
  const auto b = respond_all(ps, sampling_responder(m, chat, sc, 4));
  EXPECT_EQ(a, b);
  const auto s = response_stats(ps, a);
  EXPECT_EQ(s.count, 5u);
  EXPECT_LE(s.mean_length, 40.0);

  const std::vector<std::optional<std::string>> exact{*solve_prompt(ps[0].last_user()), "zz", std::nullopt, "q", "q"};
  const auto e = response_stats(ps, exact);
  EXPECT_EQ(e.count, 4u);
  EXPECT_DOUBLE_EQ(e.accuracy, 25.0);
}

TEST(Report, SerializesPresentSections) {
  EvalReport r;
  r.seed = 7;
  r.win_rate = WinRateResult{62.5, 5.0, 8, 0};
  const auto j = r.to_json();
  EXPECT_EQ(j["seed"], 7);
  EXPECT_TRUE(j.contains("win_rate"));
  EXPECT_FALSE(j.contains("judge_accuracy"));
  EXPECT_NE(r.to_text().find("62.50%"), std::string::npos);
}
