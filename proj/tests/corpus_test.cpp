#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "selfjudge/corpus.hpp"

using namespace selfjudge;

namespace {

PrincipleRatedResponse rated(std::string text, std::map<std::string, double> scores) {
  PrincipleRatedResponse r;
  r.text = std::move(text);
  r.scores = std::move(scores);
  return r;
}

}  // namespace

TEST(ParseDialogue, TwoTurns) {
  const auto d = parse_dialogue("Human: hi\n\nAssistant: hello");
  ASSERT_EQ(d.turns.size(), 2u);
  EXPECT_EQ(d.turns[0], (DialogueTurn{Role::user, "hi"}));
  EXPECT_EQ(d.turns[1], (DialogueTurn{Role::assistant, "hello"}));
  EXPECT_FALSE(d.system);
}

TEST(ParseDialogue, RedundantHeadersAreStripped) {
  const auto d = parse_dialogue("Human: Assistant: hello");
  ASSERT_EQ(d.turns.size(), 1u);
  EXPECT_EQ(d.turns[0], (DialogueTurn{Role::user, "hello"}));

  const auto e = parse_dialogue("Human: q\n\nAssistant: Human: Assistant: a");
  ASSERT_EQ(e.turns.size(), 2u);
  EXPECT_EQ(e.turns[1], (DialogueTurn{Role::assistant, "a"}));
}

TEST(ParseDialogue, EmptyAndHeaderlessInputFailWithOffset) {
  EXPECT_THROW(parse_dialogue(""), ParseError);
  try {
    parse_dialogue("  hello there");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 2u);
  }
}

TEST(ParseDialogue, InlineHeaderWordsStayInContent) {
  const auto d = parse_dialogue("Human: what does Assistant: mean?\n\nAssistant: a label");
  ASSERT_EQ(d.turns.size(), 2u);
  EXPECT_EQ(d.turns[0].content, "what does Assistant: mean?");
}

TEST(ParseDialogue, SameRoleTurnsMerge) {
  const auto d = parse_dialogue("Human: a\n\nHuman: b\n\nAssistant: c");
  ASSERT_EQ(d.turns.size(), 2u);
  EXPECT_EQ(d.turns[0].content, "a\n\nb");
}

TEST(ParseDialogue, ReserializedDialogueParsesIdentically) {
  for (const char* raw : {"Human: hi\n\nAssistant: hello",
                          "\n\nHuman: Assistant: x\n\nAssistant: y\n\nHuman: z",
                          "System: be brief\n\nHuman: q\n\nAssistant: a\nsecond line",
                          "Human: a\n\nHuman: b"}) {
    const auto once = parse_dialogue(raw);
    EXPECT_EQ(parse_dialogue(serialize_dialogue(once)), once) << raw;
  }
}

TEST(ParseDialogue, RolloutSplitsAtLastAssistantTurn) {
  const auto d = parse_dialogue("Human: a\n\nAssistant: b\n\nHuman: c\n\nAssistant: d");
  const auto [prompt, response] = split_rollout(d);
  EXPECT_EQ(response, "d");
  ASSERT_EQ(prompt.turns.size(), 3u);
  EXPECT_EQ(prompt.turns.back(), (DialogueTurn{Role::user, "c"}));
  EXPECT_THROW(split_rollout(parse_dialogue("Human: only")), ParseError);
}

TEST(OverallTriplets, StrictDominance) {
  const auto t = build_overall_triplets({rated("r1", {{"h", 4}, {"k", 4}}), rated("r2", {{"h", 2}, {"k", 2}})},
                                        Dialogue::from_text("x"));
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].chosen, "r1");
  EXPECT_EQ(t[0].rejected, "r2");
  EXPECT_FALSE(t[0].principle);
}

TEST(OverallTriplets, TieGoesToTheLongerResponse) {
  const std::string long40(40, 'l'), short20(20, 's');
  const auto t = build_overall_triplets({rated(short20, {{"h", 3}, {"k", 3}}), rated(long40, {{"h", 3}, {"k", 3}})},
                                        Dialogue::from_text("x"));
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].chosen, long40);
}

TEST(OverallTriplets, FewerThanTwoResponsesGiveNothing) {
  EXPECT_TRUE(build_overall_triplets({rated("r", {{"h", 5}})}, Dialogue::from_text("x")).empty());
  EXPECT_TRUE(build_overall_triplets({}, Dialogue::from_text("x")).empty());
}

TEST(OverallTriplets, PairingModesAndCap) {
  std::vector<PrincipleRatedResponse> rs{rated("a", {{"h", 9}}), rated("b", {{"h", 7}}),
                                         rated("c", {{"h", 5}}), rated("d", {{"h", 1}})};
  const Dialogue x = Dialogue::from_text("x");
  EXPECT_EQ(build_overall_triplets(rs, x).size(), 3u);
  OverallTripletOptions capped;
  capped.max_pairs = 2;
  const auto c = build_overall_triplets(rs, x, capped);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].rejected, "b");
  EXPECT_EQ(c[1].rejected, "c");
  OverallTripletOptions one;
  one.pairing = OverallPairing::one_sampled;
  std::set<std::string> seen;
  for (std::uint64_t s = 0; s < 64; ++s) {
    one.seed = s;
    const auto t = build_overall_triplets(rs, x, one);
    ASSERT_EQ(t.size(), 1u);
    seen.insert(t[0].rejected);
  }
  EXPECT_EQ(seen, (std::set<std::string>{"b", "c", "d"}));
}

TEST(OverallTriplets, RankConsistencyOnRandomGroups) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<PrincipleRatedResponse> rs;
    const auto n = 2 + rng() % 5;
    for (std::size_t i = 0; i < n; ++i) {
      rs.push_back(rated(std::string(1 + rng() % 4, static_cast<char>('a' + i)),
                         {{"p", 1.0 + static_cast<double>(rng() % 3)}, {"q", 1.0 + static_cast<double>(rng() % 3)}}));
    }
    for (const auto& t : build_overall_triplets(rs, Dialogue::from_text("x"))) {
      auto mean = [&](const std::string& text) {
        for (const auto& r : rs) {
          if (r.text == text) return (r.scores.at("p") + r.scores.at("q")) / 2;
        }
        return -1.0;
      };
      EXPECT_NE(t.chosen, t.rejected);
      EXPECT_GE(mean(t.chosen), mean(t.rejected));
      if (mean(t.chosen) == mean(t.rejected)) EXPECT_GT(t.chosen.size(), t.rejected.size());
    }
  }
}

TEST(OverallTriplets, ScaleAndPrincipleSetAreChecked) {
  OverallTripletOptions opt;
  EXPECT_THROW(build_overall_triplets({rated("a", {{"h", 11}}), rated("b", {{"h", 2}})}, Dialogue::from_text("x"), opt),
               ConfigError);
  EXPECT_THROW(build_overall_triplets({rated("a", {{"h", 3}}), rated("b", {{"k", 2}})}, Dialogue::from_text("x")),
               ConfigError);
}

TEST(PrincipleTriplets, SeededDrawAmongStrictlyInferior) {
  std::vector<PrincipleRatedResponse> rs{rated("r1", {{"p", 5}}), rated("r2", {{"p", 3}}), rated("r3", {{"p", 3}})};
  rs[0].rationales["p"] = "best";
  rs[1].rationales["p"] = "meh two";
  rs[2].rationales["p"] = "meh three";
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    const auto t = build_principle_triplets(rs, Dialogue::from_text("x"), "p", seed);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t[0].chosen, "r1");
    // The draw is one mt19937_64 output reduced modulo the two candidates.
    std::mt19937_64 rng(seed);
    const std::string expected = rng() % 2 == 0 ? "r2" : "r3";
    EXPECT_EQ(t[0].rejected, expected);
    EXPECT_EQ(t[0].principle, "p");
    EXPECT_EQ(t[0].rationale_chosen, "best");
    EXPECT_EQ(t[0].rationale_rejected, expected == "r2" ? "meh two" : "meh three");
    EXPECT_EQ(build_principle_triplets(rs, Dialogue::from_text("x"), "p", seed)[0].rejected, t[0].rejected);
    seen.insert(t[0].rejected);
  }
  EXPECT_EQ(seen.size(), 2u);
}

TEST(PrincipleTriplets, NoStrictInferiorGivesNothing) {
  EXPECT_TRUE(
      build_principle_triplets({rated("r1", {{"p", 5}}), rated("r2", {{"p", 5}})}, Dialogue::from_text("x"), "p", 1)
          .empty());
  const auto t =
      build_principle_triplets({rated("r1", {{"p", 5}}), rated("r2", {{"p", 1}})}, Dialogue::from_text("x"), "p", 1);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].rejected, "r2");
}

TEST(PrincipleTriplets, NeverPairsEqualScores) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<PrincipleRatedResponse> rs;
    const auto n = 2 + rng() % 5;
    for (std::size_t i = 0; i < n; ++i) {
      rs.push_back(rated(std::string(1 + i, 'a'), {{"p", static_cast<double>(1 + rng() % 3)}}));
    }
    for (const auto& t : build_principle_triplets(rs, Dialogue::from_text("x"), "p", rng())) {
      double sc = 0, sr = 0;
      for (const auto& r : rs) {
        if (r.text == t.chosen) sc = r.scores.at("p");
        if (r.text == t.rejected) sr = r.scores.at("p");
      }
      EXPECT_GT(sc, sr);
    }
  }
}

TEST(ComparativeFilter, Examples) {
  EXPECT_TRUE(filter_comparative_rationale("The answer is accurate and complete."));
  EXPECT_FALSE(filter_comparative_rationale("Better than Response B because it is sorted."));
  EXPECT_FALSE(filter_comparative_rationale("Compared to the other response, it is short."));
  EXPECT_TRUE(filter_comparative_rationale(""));
  EXPECT_TRUE(filter_comparative_rationale("A response about sorting."));
  EXPECT_FALSE(filter_comparative_rationale("worse than x", {"worse than"}));
  EXPECT_TRUE(filter_comparative_rationale("Compared to nothing", {"worse than"}));
}

TEST(ComparativeFilter, DropsResponsesWithComparativeRationale) {
  PromptGroup g;
  g.responses = {rated("a", {{"p", 2}}), rated("b", {{"p", 1}})};
  g.responses[0].rationales["p"] = "Fine.";
  g.responses[1].rationales["p"] = "Unlike Response A, wrong.";
  EXPECT_EQ(drop_comparative_responses(g), 1u);
  ASSERT_EQ(g.responses.size(), 1u);
  EXPECT_EQ(g.responses[0].text, "a");
}

TEST(SplitDataset, FloorOfFractionAndDeterminism) {
  std::vector<PromptGroup> groups(100);
  for (std::size_t i = 0; i < groups.size(); ++i) groups[i].prompt = Dialogue::from_text("p" + std::to_string(i));
  const auto a = split_dataset(groups, 0.1, 3);
  EXPECT_EQ(a.test.size(), 10u);
  EXPECT_EQ(a.train.size(), 90u);
  const auto b = split_dataset(groups, 0.1, 3);
  ASSERT_EQ(a.test.size(), b.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test[i].prompt, b.test[i].prompt);
  EXPECT_EQ(split_dataset(std::vector<PromptGroup>(groups.begin(), groups.begin() + 1), 0.1, 3).test.size(), 0u);
  EXPECT_THROW(split_dataset(groups, 0.0, 1), ConfigError);
  EXPECT_THROW(split_dataset(groups, 1.0, 1), ConfigError);
}

TEST(SplitDataset, TripletsSharingAPromptStayTogether) {
  std::vector<PreferenceTriplet> ts;
  for (int p = 0; p < 50; ++p) {
    for (int k = 0; k < 3; ++k) {
      PreferenceTriplet t;
      t.prompt = Dialogue::from_text("prompt " + std::to_string(p));
      t.chosen = "c" + std::to_string(k);
      t.rejected = "r";
      ts.push_back(t);
    }
  }
  const auto s = split_dataset(ts, 0.2, 9);
  EXPECT_EQ(s.test.size(), 30u);
  std::set<std::string> train_keys, test_keys;
  for (const auto& t : s.train) train_keys.insert(t.prompt.key());
  for (const auto& t : s.test) test_keys.insert(t.prompt.key());
  for (const auto& k : test_keys) EXPECT_FALSE(train_keys.count(k));
  EXPECT_EQ(test_keys.size(), 10u);
}

TEST(Jsonl, TripletsAndGroupsRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "selfjudge_corpus_jsonl";
  std::filesystem::remove_all(dir);
  PreferenceTriplet t;
  t.prompt = parse_dialogue("System: s\n\nHuman: a\n\nAssistant: b\n\nHuman: c");
  t.chosen = "yes";
  t.rejected = "no";
  t.principle = "honesty";
  t.rationale_chosen = "good";
  t.meta = {{"k", 1}};
  write_jsonl(dir / "t.jsonl", std::vector<PreferenceTriplet>{t},
              [](const PreferenceTriplet& x) { return to_json(x); });
  const auto back = read_jsonl(dir / "t.jsonl", triplet_from_json);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].prompt, t.prompt);
  EXPECT_EQ(back[0].principle, t.principle);
  EXPECT_EQ(back[0].rationale_chosen, t.rationale_chosen);
  EXPECT_FALSE(back[0].rationale_rejected);
  EXPECT_EQ(back[0].meta, t.meta);

  PromptGroup g;
  g.id = "g1";
  g.prompt = Dialogue::from_text("sort 2 1");
  g.answer = "1 2";
  g.responses = {rated("1 2", {{"p", 10}})};
  g.responses[0].rationales["p"] = "ok";
  write_jsonl(dir / "g.jsonl", std::vector<PromptGroup>{g}, [](const PromptGroup& x) { return to_json(x); });
  const auto gb = read_jsonl(dir / "g.jsonl", prompt_group_from_json);
  ASSERT_EQ(gb.size(), 1u);
  EXPECT_EQ(to_json(gb[0]), to_json(g));
  write_file(dir / "bad.jsonl", "{\"prompt\": \"x\"}\nnot json\n");
  EXPECT_THROW(read_jsonl(dir / "bad.jsonl", triplet_from_json), ParseError);
  std::filesystem::remove_all(dir);
}
