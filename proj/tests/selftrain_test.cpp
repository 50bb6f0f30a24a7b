#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "selfjudge/selftrain.hpp"
#include "selfjudge/synthetic.hpp"
#include "selfjudge/toy_model.hpp"

using namespace selfjudge;

namespace {

ToyModel tiny_model(std::uint64_t seed = 1) {
  ToyModelConfig mc;
  mc.layers = 1;
  mc.hidden = 16;
  mc.heads = 2;
  mc.context = 256;
  mc.init_seed = seed;
  return ToyModel(mc);
}

const TemplateSet& synth() {
  static const TemplateSet ts = load_template_set("synthetic");
  return ts;
}

std::vector<Dialogue> prompts(std::size_t n) {
  std::vector<Dialogue> out;
  for (const auto& g : make_synthetic_corpus(SyntheticTaskSpec{}, n, {}, 21)) out.push_back(g.prompt);
  return out;
}

SelfTrainSetup setup() {
  SelfTrainSetup s;
  s.templates = &synth();
  s.sample.max_new_tokens = 8;
  s.keep_triplets = true;
  return s;
}

DpoConfig small_dpo() {
  DpoConfig c;
  c.epochs = 1;
  c.batch_size = 4;
  c.optim.learning_rate = 1e-3;
  c.seed = 3;
  return c;
}

// softplus(−z) evaluated by a convergent series, independent of the library formula.
long double log1p_exp_neg(long double z) {
  const long double u = std::exp(-z);  // ln(1 + u) for 0 < u < 1
  long double sum = 0, term = u;
  for (int k = 1; k < 200; ++k, term *= -u) sum += term / k;
  return sum;
}

}  // namespace

TEST(DpoLoss, ZeroMarginIsLogTwo) {
  const auto d = dpo_loss(-3.0, -3.0, -7.0, -7.0, 0.1);
  EXPECT_NEAR(d.loss, std::numbers::ln2, 1e-12);
  EXPECT_DOUBLE_EQ(d.margin, 0.0);
  EXPECT_NEAR(d.d_policy_w, -0.05, 1e-12);
  EXPECT_NEAR(d.d_policy_l, 0.05, 1e-12);
}

TEST(DpoLoss, KnownMarginMatchesSeriesEvaluation) {
  // β·m = 0.1 · 2 = 0.2
  const auto d = dpo_loss(-10.0, -11.0, -14.0, -13.0, 0.1);
  EXPECT_DOUBLE_EQ(d.margin, 2.0);
  EXPECT_NEAR(d.loss, static_cast<double>(log1p_exp_neg(0.2L)), 1e-12);
  EXPECT_NEAR(d.loss, 0.598139, 1e-6);
}

TEST(DpoLoss, GradientMatchesFiniteDifferences) {
  const double lw = -4.0, rw = -5.5, ll = -6.0, rl = -5.0, beta = 0.7, h = 1e-6;
  const auto d = dpo_loss(lw, rw, ll, rl, beta);
  const double fd_w = (dpo_loss(lw + h, rw, ll, rl, beta).loss - dpo_loss(lw - h, rw, ll, rl, beta).loss) / (2 * h);
  const double fd_l = (dpo_loss(lw, rw, ll + h, rl, beta).loss - dpo_loss(lw, rw, ll - h, rl, beta).loss) / (2 * h);
  EXPECT_NEAR(d.d_policy_w, fd_w, 1e-7);
  EXPECT_NEAR(d.d_policy_l, fd_l, 1e-7);
}

TEST(DpoLoss, DecreasesWithMarginAndStaysFinite) {
  double prev = std::numeric_limits<double>::infinity();
  for (double m = -50.0; m <= 50.0; m += 0.5) {
    const double l = dpo_loss(m, 0.0, 0.0, 0.0, 0.5).loss;
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_NEAR(dpo_loss(-1e4, 0, 0, 0, 0.1).loss, 1e3, 1e-9);
  EXPECT_GE(dpo_loss(1e4, 0, 0, 0, 0.1).loss, 0.0);
}

TEST(DpoLoss, RejectsBadInputs) {
  try {
    dpo_loss(0, std::numeric_limits<double>::quiet_NaN(), 0, 0, 0.1);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("logp_ref_w"), std::string::npos);
  }
  EXPECT_THROW(dpo_loss(0, 0, -std::numeric_limits<double>::infinity(), 0, 0.1), TrainingError);
  EXPECT_THROW(dpo_loss(0, 0, 0, 0, 0.0), ConfigError);
}

TEST(DpoUpdaterTest, FreshStepIsLogTwoAndReducesTheLoss) {
  auto policy = tiny_model();
  const auto reference = policy.clone();
  DpoConfig cfg = small_dpo();
  cfg.optim.learning_rate = 1e-2;
  DpoUpdater up(policy, *reference, synth().chat, cfg);
  PreferenceTriplet t;
  t.prompt = Dialogue::from_text("sort 3 1 2");
  t.chosen = "1 2 3";
  t.rejected = "3 3";
  const auto first = up.step({t}, 1e-2);
  EXPECT_NEAR(first.loss, std::numbers::ln2, 1e-6);
  EXPECT_NEAR(first.margin_mean, 0.0, 1e-6);
  double last = first.loss;
  for (int i = 0; i < 5; ++i) last = up.step({t}, 1e-2).loss;
  EXPECT_LT(last, first.loss);
  EXPECT_NE(policy.identity(), reference->identity());
}

TEST(SelfTraining, ReferenceStaysFrozenAndJudgesWithIt) {
  const auto init = tiny_model();
  const auto ps = prompts(8);
  const auto res = run_self_training(init, ps, small_dpo(), setup());
  ASSERT_EQ(res.steps.size(), 2u);
  EXPECT_EQ(res.reference_hash_before, init.identity());
  EXPECT_EQ(res.reference_hash_after, init.identity());
  for (const auto& s : res.steps) {
    EXPECT_EQ(s.judge_hash, init.identity());
    EXPECT_EQ(s.pairs + s.skipped, 4u);
  }
  EXPECT_NE(res.policy->identity(), init.identity());
  ASSERT_FALSE(res.triplets.empty());
  EXPECT_EQ(res.triplets.front().meta["judge_source"], "reference");
  EXPECT_NE(res.triplets.front().chosen, res.triplets.front().rejected);
}

TEST(SelfTraining, PolicyJudgeFollowsTheUpdatedWeights) {
  const auto init = tiny_model();
  auto cfg = small_dpo();
  cfg.judge_source = JudgeSource::policy;
  std::vector<std::string> judge_hashes;
  auto s = setup();
  s.on_step = [&](const SelfTrainStep& st) { judge_hashes.push_back(st.judge_hash); };
  const auto res = run_self_training(init, prompts(8), cfg, s);
  ASSERT_EQ(judge_hashes.size(), 2u);
  EXPECT_EQ(judge_hashes[0], init.identity());
  EXPECT_NE(judge_hashes[1], init.identity());
  EXPECT_EQ(res.reference_hash_after, init.identity());
}

TEST(SelfTraining, SeededRunsAreReproducible) {
  const auto init = tiny_model();
  const auto a = run_self_training(init, prompts(6), small_dpo(), setup());
  const auto b = run_self_training(init, prompts(6), small_dpo(), setup());
  EXPECT_EQ(a.policy->identity(), b.policy->identity());
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].to_json(), b.steps[i].to_json());
}

TEST(SelfTraining, OfflineModeAndMissingTemplatesAreRejected) {
  const auto init = tiny_model();
  auto cfg = small_dpo();
  cfg.mode = DpoMode::offline;
  EXPECT_THROW(run_self_training(init, prompts(2), cfg, setup()), ConfigError);
  EXPECT_THROW(run_self_training(init, prompts(2), small_dpo(), SelfTrainSetup{}), ConfigError);
  EXPECT_EQ(dpo_mode_from_string("offline"), DpoMode::offline);
  EXPECT_EQ(judge_source_from_string("policy"), JudgeSource::policy);
  EXPECT_THROW(judge_source_from_string("oracle"), ConfigError);
}

TEST(OfflineDpo, StartsAtLogTwoAndSkipsEqualPairs) {
  const auto init = tiny_model();
  std::vector<PreferenceTriplet> ts;
  for (const auto& g : make_synthetic_corpus(SyntheticTaskSpec{}, 6, synthetic_principles(), 4)) {
    OverallTripletOptions o;
    o.max_pairs = 1;
    for (auto& t : build_overall_triplets(g.responses, g.prompt, o)) ts.push_back(t);
  }
  ts.push_back(ts.front());
  ts.back().rejected = ts.back().chosen;
  auto cfg = small_dpo();
  cfg.batch_size = ts.size();
  cfg.epochs = 2;
  const auto res = run_offline_dpo(init, ts, cfg, synth().chat);
  ASSERT_EQ(res.steps.size(), 2u);
  EXPECT_NEAR(res.steps[0].loss, std::numbers::ln2, 1e-6);
  EXPECT_EQ(res.steps[0].degenerate, 1u);
  EXPECT_LT(res.steps[1].loss, res.steps[0].loss);
  EXPECT_EQ(res.reference_hash_after, init.identity());
}

TEST(Rounds, EachRoundStartsFromThePreviousPolicy) {
  const auto init = tiny_model();
  std::vector<std::size_t> evaluated;
  const auto rounds = iterate(init, 2, prompts(4), small_dpo(), setup(),
                              [&](const TrainableModel&, std::size_t k) {
                                evaluated.push_back(k);
                                return nlohmann::json{{"round", k}};
                              });
  ASSERT_EQ(rounds.size(), 2u);
  EXPECT_EQ(rounds[0].reference_hash, init.identity());
  EXPECT_EQ(rounds[1].reference_hash, rounds[0].policy->identity());
  EXPECT_EQ(rounds[1].steps.front().iteration, 1u);
  EXPECT_EQ(evaluated, (std::vector<std::size_t>{0, 1}));
  EXPECT_THROW(iterate(init, 0, prompts(4), small_dpo(), setup()), ConfigError);
}
