#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "selfjudge/jsft.hpp"
#include "selfjudge/synthetic.hpp"
#include "selfjudge/toy_model.hpp"

using namespace selfjudge;

namespace {

const TemplateSet& uf() {
  static const TemplateSet ts = load_template_set("uf");
  return ts;
}

PreferenceTriplet triplet(std::string x, std::string w, std::string l) {
  PreferenceTriplet t;
  t.prompt = Dialogue::from_text(std::move(x));
  t.chosen = std::move(w);
  t.rejected = std::move(l);
  return t;
}

std::string masked_text(const TrainingInstance& inst, const CharTokenizer& tok) {
  return tok.decode(inst.masked_tokens());
}

std::string unmasked_text(const TrainingInstance& inst, const CharTokenizer& tok) {
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < inst.token_ids.size() && !inst.loss_mask[i]; ++i) ids.push_back(inst.token_ids[i]);
  return tok.decode(ids);
}

}  // namespace

TEST(SftInstances, MaskCoversChosenResponseAndEos) {
  CharTokenizer tok;
  BuildStats st;
  const auto out = build_sft_instances({triplet("sort 2 1", "1 2", "2 1")}, uf().chat, tok, 2048, st);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].task_tag, TaskTag::sft);
  EXPECT_EQ(out[0].token_ids.size(), out[0].loss_mask.size());
  EXPECT_EQ(masked_text(out[0], tok), "1 2</s>");
  EXPECT_EQ(tok.decode(out[0].token_ids),
            "<|system|>\n" + uf().chat.system_message_default + "\n<|user|>\nsort 2 1\n<|assistant|>\n1 2</s>");
}

TEST(SftInstances, EveryAssistantTurnIsMaskedIn) {
  CharTokenizer tok;
  PreferenceTriplet t;
  t.prompt = parse_dialogue("Human: q1\n\nAssistant: a1\n\nHuman: q2");
  t.chosen = "a2";
  t.rejected = "bad";
  BuildStats st;
  const auto out = build_sft_instances({t}, uf().chat, tok, 2048, st);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(masked_text(out[0], tok), "a1</s>a2</s>");
}

TEST(SftInstances, DuplicatesAndOverlongAreCounted) {
  CharTokenizer tok;
  BuildStats st;
  const auto out = build_sft_instances({triplet("x", "y", "z"), triplet("x", "y", "w"), triplet("q", std::string(400, 'r'), "s")},
                                       uf().chat, tok, 300, st);
  EXPECT_EQ(out.size(), 1u);
  EXPECT_EQ(st.duplicates, 1u);
  EXPECT_EQ(st.dropped_overlong, 1u);
}

TEST(JudgeInstances, TwoOrdersPerPlainTriplet) {
  CharTokenizer tok;
  BuildStats st;
  JsftConfig cfg;
  const auto t = triplet("Name a prime.", "seven", "eight");
  const auto out = build_judge_instances({t}, uf(), tok, cfg, st);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].meta.label, "A");
  EXPECT_EQ(out[1].meta.label, "B");
  EXPECT_EQ(out[0].meta.order, "original");
  EXPECT_EQ(out[1].meta.order, "swapped");
  EXPECT_EQ(masked_text(out[0], tok), "A</s>");
  EXPECT_EQ(masked_text(out[1], tok), "B</s>");
  const auto original = uf().render(JudgmentKind::plain, t.prompt, "seven", "eight", std::nullopt, tok);
  const auto swapped = uf().render(JudgmentKind::plain, t.prompt, "eight", "seven", std::nullopt, tok);
  EXPECT_EQ(unmasked_text(out[0], tok), original.prefix());
  EXPECT_EQ(unmasked_text(out[1], tok), swapped.prefix());
  EXPECT_EQ(tok.decode(out[1].token_ids), swapped.full_text("B") + "</s>");
}

TEST(JudgeInstances, PrincipledGivesTwoPerPrinciple) {
  CharTokenizer tok;
  BuildStats st;
  JsftConfig cfg;
  cfg.include_principles = true;
  std::vector<PreferenceTriplet> ts;
  for (const auto& p : uf().principles()) {
    auto t = triplet("x", "good", "bad");
    t.principle = p;
    ts.push_back(t);
  }
  const auto out = build_judge_instances(ts, uf(), tok, cfg, st);
  ASSERT_EQ(out.size(), 8u);
  std::size_t a = 0;
  for (const auto& inst : out) {
    a += inst.meta.label == "A";
    ASSERT_TRUE(inst.meta.principle);
    EXPECT_NE(unmasked_text(inst, tok).find("principle of '" + *inst.meta.principle + "'"), std::string::npos);
  }
  EXPECT_EQ(a, 4u);
}

TEST(JudgeInstances, RationaleTargetsFollowTheResponses) {
  CharTokenizer tok;
  BuildStats st;
  JsftConfig cfg;
  cfg.include_principles = cfg.include_rationale = true;
  auto t = triplet("x", "good", "bad");
  t.principle = "honesty";
  t.rationale_chosen = "RC";
  t.rationale_rejected = "RR";
  auto missing = t;
  missing.rationale_rejected.reset();
  auto plain = triplet("y", "g", "b");
  const auto out = build_judge_instances({t, missing, plain}, uf(), tok, cfg, st);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(st.skipped_missing_rationale, 1u);
  EXPECT_EQ(st.routed_to_plain, 1u);
  EXPECT_EQ(masked_text(out[0], tok), "A\n\nEvaluation of Response A: RC\nEvaluation of Response B: RR</s>");
  EXPECT_EQ(masked_text(out[1], tok), "B\n\nEvaluation of Response A: RR\nEvaluation of Response B: RC</s>");
  EXPECT_TRUE(unmasked_text(out[0], tok).ends_with("Decision: Response "));
  EXPECT_EQ(masked_text(out[2], tok), "A</s>");
}

TEST(JsftConfig, RationaleRequiresPrinciples) {
  JsftConfig cfg;
  cfg.include_rationale = true;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.include_principles = true;
  EXPECT_NO_THROW(cfg.validate());
  cfg.max_seq_len = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Augment, CardinalityAndDeterminism) {
  CharTokenizer tok;
  BuildStats st;
  std::vector<PreferenceTriplet> ts;
  for (int i = 0; i < 10; ++i) ts.push_back(triplet("p" + std::to_string(i), "w", "l"));
  const auto sft = build_sft_instances(ts, uf().chat, tok, 2048, st);
  const auto judge = build_judge_instances({ts.begin(), ts.begin() + 3}, uf(), tok, JsftConfig{}, st);
  ASSERT_EQ(sft.size(), 10u);
  ASSERT_EQ(judge.size(), 6u);
  const auto a = augment(sft, judge, 4), b = augment(sft, judge, 4);
  ASSERT_EQ(a.size(), 16u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(to_json(a[i]).dump(), to_json(b[i]).dump());
  EXPECT_EQ(augment({}, judge, 4).size(), 6u);
}

TEST(Augment, SerializedDatasetIsByteStableAndRoundTrips) {
  CharTokenizer tok;
  SyntheticTaskSpec spec;
  auto build = [&] {
    std::vector<PreferenceTriplet> ts;
    for (const auto& g : make_synthetic_corpus(spec, 20, synthetic_principles(), 3)) {
      for (auto& t : build_overall_triplets(g.responses, g.prompt)) ts.push_back(t);
    }
    BuildStats st;
    const auto sets = load_template_set("synthetic");
    std::string out;
    for (const auto& inst : augment(build_sft_instances(ts, sets.chat, tok, 512, st),
                                    build_judge_instances(ts, sets, tok, JsftConfig{}, st), 9)) {
      out += to_json(inst).dump() + "\n";
    }
    return out;
  };
  const auto first = build();
  EXPECT_EQ(first, build());
  const auto line = split(first, '\n').front();
  EXPECT_EQ(to_json(instance_from_json(nlohmann::json::parse(line))).dump(), line);
}

TEST(Optim, WarmupAndSchedules) {
  OptimConfig c{1.0, Schedule::cosine, 0.1};
  EXPECT_DOUBLE_EQ(c.lr_at(0, 100), 0.1);
  EXPECT_DOUBLE_EQ(c.lr_at(9, 100), 1.0);
  EXPECT_DOUBLE_EQ(c.lr_at(10, 100), 1.0);
  EXPECT_NEAR(c.lr_at(55, 100), 0.5 * (1 + std::cos(std::numbers::pi * 0.5)), 1e-12);
  c.schedule = Schedule::constant;
  EXPECT_DOUBLE_EQ(c.lr_at(99, 100), 1.0);
  c.schedule = Schedule::linear;
  c.warmup_ratio = 0.0;
  EXPECT_DOUBLE_EQ(c.lr_at(50, 100), 0.5);
}

TEST(Optim, AdamFirstStepMovesByLearningRateAndClips) {
  OptimConfig c{0.01, Schedule::constant, 0.0};
  c.eps = 0.0;
  AdamW opt(3, c);
  std::vector<float> p{1.0f, 1.0f, 1.0f}, g{30.0f, -40.0f, 0.0f};
  const double norm = opt.step(p, g, 0.01);
  EXPECT_DOUBLE_EQ(norm, 50.0);
  // Bias-corrected first step is lr·sign(g) regardless of clipping.
  EXPECT_NEAR(p[0], 0.99f, 1e-6);
  EXPECT_NEAR(p[1], 1.01f, 1e-6);
  std::vector<float> bad{std::numeric_limits<float>::quiet_NaN(), 0, 0};
  EXPECT_THROW(opt.step(p, bad, 0.01), TrainingError);
}

TEST(TrainJsft, ZeroEpochsLeaveTheModelUntouched) {
  ToyModelConfig mc;
  mc.layers = 1;
  mc.hidden = 16;
  mc.heads = 2;
  mc.context = 128;
  ToyModel model(mc);
  const auto before = model.identity();
  CharTokenizer tok;
  BuildStats st;
  JsftConfig cfg;
  cfg.epochs = 0;
  const auto data = build_sft_instances({triplet("a", "b", "c")}, uf().chat, tok, 2048, st);
  const auto rep = train_jsft(model, data, cfg);
  EXPECT_TRUE(rep.steps.empty());
  EXPECT_EQ(model.identity(), before);
}

TEST(TrainJsft, LossFallsOnASmallSyntheticCorpus) {
  ToyModelConfig mc;
  mc.layers = 1;
  mc.hidden = 32;
  mc.heads = 2;
  mc.context = 192;
  mc.init_seed = 2;
  ToyModel model(mc);
  const auto sets = load_template_set("synthetic");
  std::vector<PreferenceTriplet> ts;
  for (const auto& g : make_synthetic_corpus(SyntheticTaskSpec{}, 60, synthetic_principles(), 5)) {
    OverallTripletOptions o;
    o.max_pairs = 1;
    for (auto& t : build_overall_triplets(g.responses, g.prompt, o)) ts.push_back(t);
  }
  BuildStats st;
  JsftConfig cfg;
  cfg.epochs = 3;
  cfg.max_seq_len = 192;
  cfg.batch_size = 16;
  cfg.optim.learning_rate = 3e-3;
  const auto data = augment(build_sft_instances(ts, sets.chat, model.tokenizer(), 192, st),
                            build_judge_instances(ts, sets, model.tokenizer(), cfg, st), 1);
  std::size_t logged = 0;
  const auto rep = train_jsft(model, data, cfg, [&](const StepLog&) { ++logged; });
  ASSERT_EQ(rep.epoch_mean_loss.size(), 3u);
  EXPECT_EQ(logged, rep.steps.size());
  EXPECT_LT(rep.epoch_mean_loss.back(), rep.steps.front().loss);
  EXPECT_LT(rep.epoch_mean_loss.back(), rep.epoch_mean_loss.front());
}

TEST(TrainJsft, NonFiniteLossAbortsWithBatchAndRate) {
  ToyModelConfig mc;
  mc.layers = 1;
  mc.hidden = 16;
  mc.heads = 2;
  mc.context = 512;
  ToyModel model(mc);
  for (auto& w : model.parameters()) w = std::numeric_limits<float>::quiet_NaN();
  CharTokenizer tok;
  BuildStats st;
  JsftConfig cfg;
  const auto data = build_sft_instances({triplet("a", "b", "c")}, uf().chat, tok, 2048, st);
  try {
    train_jsft(model, data, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos);
  }
}
