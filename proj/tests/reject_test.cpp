#include <gtest/gtest.h>

#include <random>

#include "selfjudge/reject.hpp"
#include "selfjudge/toy_model.hpp"

using namespace selfjudge;

namespace {

const Dialogue kSort = Dialogue::from_text("sort 4 2 7 1");

std::vector<std::string> distinct_responses(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    for (int k = 0; k < 4; ++k) s += std::to_string(rng() % 10) + " ";
    out.push_back(s + "#" + std::to_string(i));
  }
  return out;
}

}  // namespace

TEST(Tournament, UsesExactlyNMinusOneJudgments) {
  for (std::size_t n = 1; n <= 17; ++n) {
    OracleJudge j;
    const auto tree = run_tournament(distinct_responses(n, n), kSort, j);
    EXPECT_EQ(tree.matches.size(), n - 1) << n;
    EXPECT_EQ(j.judgments(), n - 1) << n;
    EXPECT_FALSE(tree.degenerate);
  }
}

TEST(Tournament, OddLeafAdvancesOnABye) {
  OracleJudge j;
  const auto tree = run_tournament(distinct_responses(5, 1), kSort, j);
  ASSERT_EQ(tree.byes.size(), 2u);
  EXPECT_EQ(tree.byes[0], (std::pair<std::size_t, std::size_t>{0, 4}));
  EXPECT_EQ(tree.byes[1], (std::pair<std::size_t, std::size_t>{1, 4}));
  EXPECT_EQ(tree.matches[0].left, 0u);
  EXPECT_EQ(tree.matches[0].right, 1u);
  EXPECT_EQ(tree.matches.back().round, 2u);
  EXPECT_EQ(tree.to_json()["matches"].size(), 4u);
}

TEST(Tournament, OracleJudgeCrownsTheOracleBest) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto leaves = distinct_responses(1 + rng() % 9, rng());
    if (rng() % 2) leaves[rng() % leaves.size()] = "1 2 4 7";
    OracleJudge j;
    const auto tree = run_tournament(leaves, kSort, j);
    for (const auto& other : leaves) EXPECT_GE(oracle_compare("1 2 4 7", leaves[tree.champion], other), 0);
  }
}

TEST(Tournament, IdenticalLeavesNeedNoJudgment) {
  OracleJudge j;
  const auto tree = run_tournament({"x", "x", "x", "x"}, kSort, j);
  EXPECT_TRUE(tree.degenerate);
  EXPECT_TRUE(tree.matches.empty());
  EXPECT_EQ(j.judgments(), 0u);
  EXPECT_EQ(tree.champion, 0u);
  EXPECT_THROW(run_tournament({}, kSort, j), ConfigError);
}

TEST(BestOfNTest, SamplesNAndJudgesNMinusOne) {
  ToyModelConfig mc;
  mc.layers = 1;
  mc.hidden = 16;
  mc.heads = 2;
  mc.context = 128;
  const ToyModel m(mc);
  const auto chat = load_template_set("synthetic").chat;
  OracleJudge j;
  SampleConfig sc;
  sc.max_new_tokens = 6;
  const auto a = best_of_n(m, chat, kSort, 6, sc, j, 9);
  EXPECT_EQ(a.generations, 6u);
  EXPECT_EQ(a.tree.leaves.size(), 6u);
  EXPECT_EQ(a.judgments, a.tree.degenerate ? 0u : 5u);
  EXPECT_EQ(a.best, a.tree.leaves[a.tree.champion]);
  const auto b = best_of_n(m, chat, kSort, 6, sc, j, 9);
  EXPECT_EQ(a.tree.leaves, b.tree.leaves);
  for (std::size_t i = 0; i < a.tree.leaves.size(); ++i) {
    EXPECT_EQ(a.tree.leaves[i], generate_text(m, render_generation_prompt(kSort, chat), sc, derive_seed(9, i)));
  }
  sc.temperature = 0.0;
  const auto g = best_of_n(m, chat, kSort, 6, sc, j, 9);
  EXPECT_EQ(g.generations, 1u);
  EXPECT_EQ(g.judgments, 0u);
  EXPECT_THROW(best_of_n(m, chat, kSort, 0, sc, j, 9), ConfigError);
}
