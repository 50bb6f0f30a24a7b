#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "selfjudge/chat_template.hpp"
#include "selfjudge/corpus.hpp"
#include "selfjudge/error.hpp"
#include "selfjudge/judge.hpp"
#include "selfjudge/model.hpp"
#include "selfjudge/optim.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

// ---------------------------------------------------------------------------
// DPO objective

struct DpoLoss {
  double loss = 0.0;
  double margin = 0.0;        // (lp_w − lr_w) − (lp_l − lr_l)
  double d_policy_w = 0.0;    // ∂loss/∂lp_w
  double d_policy_l = 0.0;    // ∂loss/∂lp_l
};

/// −log σ(β·[(lp_w − lr_w) − (lp_l − lr_l)]) and its policy-side gradient.
inline DpoLoss dpo_loss(double logp_policy_w, double logp_ref_w, double logp_policy_l, double logp_ref_l,
                        double beta) {
  const std::pair<const char*, double> terms[] = {{"logp_policy_w", logp_policy_w},
                                                  {"logp_ref_w", logp_ref_w},
                                                  {"logp_policy_l", logp_policy_l},
                                                  {"logp_ref_l", logp_ref_l},
                                                  {"beta", beta}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw TrainingError(std::string("dpo_loss: non-finite ") + name);
  }
  if (!(beta > 0.0)) throw ConfigError("dpo beta must be positive");
  DpoLoss out;
  out.margin = (logp_policy_w - logp_ref_w) - (logp_policy_l - logp_ref_l);
  const double z = -beta * out.margin;
  out.loss = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));  // softplus(z)
  const double sig = 1.0 / (1.0 + std::exp(-z));                      // σ(−βm)
  out.d_policy_w = -beta * sig;
  out.d_policy_l = beta * sig;
  return out;
}

// ---------------------------------------------------------------------------
// Configuration and logs

enum class JudgeSource { reference, policy };
enum class DpoMode { onpolicy, offline };

inline std::string_view to_string(JudgeSource s) { return s == JudgeSource::reference ? "reference" : "policy"; }
inline JudgeSource judge_source_from_string(std::string_view s) {
  if (s == "reference") return JudgeSource::reference;
  if (s == "policy") return JudgeSource::policy;
  throw ConfigError("unknown judge source '" + std::string(s) + "'");
}
inline std::string_view to_string(DpoMode m) { return m == DpoMode::onpolicy ? "onpolicy" : "offline"; }
inline DpoMode dpo_mode_from_string(std::string_view s) {
  if (s == "onpolicy") return DpoMode::onpolicy;
  if (s == "offline") return DpoMode::offline;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

struct DpoConfig {
  double beta = 0.1;
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  OptimConfig optim{5e-6, Schedule::constant, 0.1};
  JudgeSource judge_source = JudgeSource::reference;
  DpoMode mode = DpoMode::onpolicy;
  bool skip_degenerate = true;  // identical samples and exact judge ties
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta > 0.0)) throw ConfigError("dpo beta must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    optim.validate();
  }
};

struct SelfTrainStep {
  std::size_t iteration = 0;
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;         // mean over used pairs; NaN when the step was skipped
  double margin_mean = 0.0;  // mean |margin| over used pairs (before the update)
  std::size_t pairs = 0;     // pseudo-triplets used
  std::size_t skipped = 0;   // degenerate + ties + failed judgments
  std::size_t degenerate = 0;
  std::size_t ties = 0;
  std::size_t judge_failures = 0;
  double lr = 0.0;
  std::string judge_hash;
  std::string reference_hash;

  nlohmann::json to_json() const {
    return {{"iteration", iteration},
            {"step", step},
            {"epoch", epoch},
            {"loss", std::isfinite(loss) ? nlohmann::json(loss) : nlohmann::json(nullptr)},
            {"margin_mean", margin_mean},
            {"pairs", pairs},
            {"skipped", skipped},
            {"degenerate", degenerate},
            {"ties", ties},
            {"judge_failures", judge_failures},
            {"lr", lr},
            {"judge_hash", judge_hash},
            {"reference_hash", reference_hash}};
  }
};

// ---------------------------------------------------------------------------
// Sampling

struct SampledPair {
  std::string y_a;
  std::string y_b;
  bool degenerate = false;  // identical, or empty after one resample
};

/// Two independent samples from the policy; an empty sample is redrawn once.
inline SampledPair sample_pair(const LanguageModel& policy, const ChatTemplate& chat, const Dialogue& x,
                               const SampleConfig& sc, std::uint64_t seed) {
  const auto prompt = render_generation_prompt(x, chat);
  SampledPair p;
  for (int k = 0; k < 2; ++k) {
    auto& y = k == 0 ? p.y_a : p.y_b;
    y = generate_text(policy, prompt, sc, derive_seed(seed, static_cast<std::uint64_t>(k)));
    if (y.empty()) y = generate_text(policy, prompt, sc, derive_seed(seed, static_cast<std::uint64_t>(k) + 2));
  }
  p.degenerate = p.y_a.empty() || p.y_b.empty() || p.y_a == p.y_b;
  return p;
}

// ---------------------------------------------------------------------------
// Update

/// One DPO optimizer step over pseudo-triplets. Reference log-likelihoods are
/// read from the frozen model; the response target includes eos.
class DpoUpdater {
 public:
  DpoUpdater(TrainableModel& policy, const LanguageModel& reference, const ChatTemplate& chat,
             const DpoConfig& cfg)
      : policy_(policy),
        reference_(reference),
        chat_(chat),
        cfg_(cfg),
        opt_(policy.parameters().size(), cfg.optim),
        grad_(policy.parameters().size()),
        scratch_w_(grad_.size()),
        scratch_l_(grad_.size()) {
    cfg_.validate();
  }

  struct Result {
    double loss = 0.0;
    double margin_mean = 0.0;
  };

  /// Applies one step with learning rate `lr`; returns pre-update statistics.
  Result step(const std::vector<PreferenceTriplet>& triplets, double lr) {
    if (triplets.empty()) throw TrainingError("dpo step over an empty batch");
    std::fill(grad_.begin(), grad_.end(), 0.0f);
    Result r;
    const auto& tok = policy_.tokenizer();
    const double n = static_cast<double>(triplets.size());
    for (const auto& t : triplets) {
      const auto prompt = tok.encode(render_generation_prompt(t.prompt, chat_));
      const auto w = with_target(prompt, tok.encode(t.chosen + chat_.eos_marker));
      const auto l = with_target(prompt, tok.encode(t.rejected + chat_.eos_marker));
      const double ref_w = logprob(reference_, w.tokens, prompt.size());
      const double ref_l = logprob(reference_, l.tokens, prompt.size());
      std::fill(scratch_w_.begin(), scratch_w_.end(), 0.0f);
      std::fill(scratch_l_.begin(), scratch_l_.end(), 0.0f);
      const double pol_w = -policy_.accumulate_gradient(std::span(&w, 1), scratch_w_);
      const double pol_l = -policy_.accumulate_gradient(std::span(&l, 1), scratch_l_);
      const auto d = dpo_loss(pol_w, ref_w, pol_l, ref_l, cfg_.beta);
      r.loss += d.loss / n;
      r.margin_mean += std::abs(d.margin) / n;
      // scratch holds ∇(−lp); ∂loss/∂θ = d_w·∇lp_w + d_l·∇lp_l.
      const auto cw = static_cast<float>(-d.d_policy_w / n), cl = static_cast<float>(-d.d_policy_l / n);
      for (std::size_t i = 0; i < grad_.size(); ++i) grad_[i] += cw * scratch_w_[i] + cl * scratch_l_[i];
    }
    if (!std::isfinite(r.loss)) throw TrainingError("non-finite dpo loss");
    opt_.step(policy_.parameters(), grad_, lr);
    return r;
  }

 private:
  static WeightedSequence with_target(const std::vector<TokenId>& prompt, const std::vector<TokenId>& target) {
    WeightedSequence s;
    s.tokens = prompt;
    s.tokens.insert(s.tokens.end(), target.begin(), target.end());
    s.weights.assign(s.tokens.size(), 0.0f);
    std::fill(s.weights.begin() + static_cast<std::ptrdiff_t>(prompt.size()), s.weights.end(), 1.0f);
    return s;
  }

  static double logprob(const LanguageModel& m, const std::vector<TokenId>& tokens, std::size_t from) {
    if (tokens.size() > m.context_length()) throw TrainingError("dpo sequence exceeds the model context");
    const auto lps = m.token_logprobs(tokens, from);
    return std::accumulate(lps.begin(), lps.end(), 0.0);
  }

  TrainableModel& policy_;
  const LanguageModel& reference_;
  const ChatTemplate& chat_;
  DpoConfig cfg_;
  AdamW opt_;
  std::vector<float> grad_, scratch_w_, scratch_l_;
};

// ---------------------------------------------------------------------------
// Runs

struct SelfTrainResult {
  std::unique_ptr<TrainableModel> policy;
  std::string reference_hash_before;
  std::string reference_hash_after;
  std::vector<SelfTrainStep> steps;
  std::vector<PreferenceTriplet> triplets;  // pseudo-triplets with provenance in meta
};

using SelfTrainCallback = std::function<void(const SelfTrainStep&)>;

struct SelfTrainSetup {
  const TemplateSet* templates = nullptr;
  JudgeConfig judge;
  SampleConfig sample;
  std::size_t iteration = 0;
  bool keep_triplets = false;
  SelfTrainCallback on_step;
};

/// On-policy self-training: π_θ and π_ref start as copies of `init`; every
/// step samples pairs from π_θ, judges them (with π_ref or π_θ), and applies
/// one DPO update. π_ref is never written.
inline SelfTrainResult run_self_training(const TrainableModel& init, const std::vector<Dialogue>& prompts,
                                         const DpoConfig& dpo, const SelfTrainSetup& setup) {
  dpo.validate();
  setup.sample.validate();
  if (!setup.templates) throw ConfigError("self-training needs a template set");
  if (dpo.mode != DpoMode::onpolicy) throw ConfigError("run_self_training is on-policy; use run_offline_dpo");
  SelfTrainResult res;
  res.policy = init.clone();
  const std::unique_ptr<const TrainableModel> reference = init.clone();
  res.reference_hash_before = reference->identity();
  const auto& chat = setup.templates->chat;
  const LanguageModel& judge_model =
      dpo.judge_source == JudgeSource::reference ? static_cast<const LanguageModel&>(*reference) : *res.policy;
  ModelJudge judge(judge_model, *setup.templates, setup.judge);
  DpoUpdater updater(*res.policy, *reference, chat, dpo);

  const std::size_t per_epoch = (prompts.size() + dpo.batch_size - 1) / dpo.batch_size;
  const std::size_t total = per_epoch * dpo.epochs;
  std::vector<std::size_t> order(prompts.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < dpo.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    seeded_shuffle(order, derive_seed(dpo.seed, 0x5e1f, epoch));
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      SelfTrainStep log;
      log.iteration = setup.iteration;
      log.step = step;
      log.epoch = epoch;
      log.lr = dpo.optim.lr_at(step, total);
      log.judge_hash = judge.identity();
      log.reference_hash = res.reference_hash_before;
      std::vector<PreferenceTriplet> batch;
      const std::size_t lo = b * dpo.batch_size, hi = std::min(prompts.size(), lo + dpo.batch_size);
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& x = prompts[order[k]];
        const auto pair = sample_pair(*res.policy, chat, x, setup.sample, derive_seed(dpo.seed, step, order[k]));
        if (pair.degenerate) {
          ++log.degenerate;
          if (dpo.skip_degenerate || pair.y_a == pair.y_b) continue;
        }
        JudgeVerdict v;
        try {
          v = judge.judge(x, pair.y_a, pair.y_b);
        } catch (const VerdictError&) {
          ++log.judge_failures;
          continue;
        }
        if (v.tie()) {
          ++log.ties;
          if (dpo.skip_degenerate) continue;
        }
        auto t = to_pseudo_triplet(v, x, pair.y_a, pair.y_b);
        t.meta["judge_source"] = to_string(dpo.judge_source);
        t.meta["judge_hash"] = log.judge_hash;
        t.meta["step"] = step;
        batch.push_back(std::move(t));
      }
      log.skipped = log.degenerate + log.ties + log.judge_failures;
      log.pairs = batch.size();
      if (batch.empty()) {
        log.loss = std::nan("");
      } else {
        const auto r = updater.step(batch, log.lr);
        log.loss = r.loss;
        log.margin_mean = r.margin_mean;
      }
      if (setup.keep_triplets) {
        for (auto& t : batch) res.triplets.push_back(std::move(t));
      }
      res.steps.push_back(log);
      if (setup.on_step) setup.on_step(log);
    }
  }
  res.reference_hash_after = reference->identity();
  if (res.reference_hash_after != res.reference_hash_before) {
    throw TrainingError("reference parameters changed during self-training");
  }
  return res;
}

/// DPO over static pre-labeled triplets (no sampling, no judging).
inline SelfTrainResult run_offline_dpo(const TrainableModel& init, const std::vector<PreferenceTriplet>& triplets,
                                       const DpoConfig& dpo, const ChatTemplate& chat,
                                       const SelfTrainCallback& on_step = {}) {
  dpo.validate();
  SelfTrainResult res;
  res.policy = init.clone();
  const std::unique_ptr<const TrainableModel> reference = init.clone();
  res.reference_hash_before = reference->identity();
  DpoUpdater updater(*res.policy, *reference, chat, dpo);
  std::vector<std::size_t> order(triplets.size());
  const std::size_t per_epoch = (triplets.size() + dpo.batch_size - 1) / dpo.batch_size;
  const std::size_t total = per_epoch * dpo.epochs;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < dpo.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    seeded_shuffle(order, derive_seed(dpo.seed, 0x0ff1, epoch));
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      std::vector<PreferenceTriplet> batch;
      SelfTrainStep log;
      log.step = step;
      log.epoch = epoch;
      log.lr = dpo.optim.lr_at(step, total);
      log.reference_hash = res.reference_hash_before;
      const std::size_t lo = b * dpo.batch_size, hi = std::min(triplets.size(), lo + dpo.batch_size);
      for (std::size_t k = lo; k < hi; ++k) {
        if (triplets[order[k]].chosen == triplets[order[k]].rejected) {
          ++log.degenerate;
          continue;
        }
        batch.push_back(triplets[order[k]]);
      }
      log.skipped = log.degenerate;
      log.pairs = batch.size();
      if (batch.empty()) {
        log.loss = std::nan("");
      } else {
        const auto r = updater.step(batch, log.lr);
        log.loss = r.loss;
        log.margin_mean = r.margin_mean;
      }
      res.steps.push_back(log);
      if (on_step) on_step(log);
    }
  }
  res.reference_hash_after = reference->identity();
  return res;
}

struct RoundResult {
  std::unique_ptr<TrainableModel> policy;
  std::string reference_hash;
  std::vector<SelfTrainStep> steps;
  nlohmann::json metrics;  // caller-provided per-round evaluation
};

using RoundEval = std::function<nlohmann::json(const TrainableModel& policy, std::size_t round)>;

/// Round k starts both π_θ and π_ref from round k−1's final policy.
inline std::vector<RoundResult> iterate(const TrainableModel& init, std::size_t rounds,
                                        const std::vector<Dialogue>& prompts, const DpoConfig& dpo,
                                        SelfTrainSetup setup, const RoundEval& round_eval = {}) {
  if (rounds == 0) throw ConfigError("rounds must be >= 1");
  std::vector<RoundResult> out;
  const TrainableModel* current = &init;
  for (std::size_t k = 0; k < rounds; ++k) {
    DpoConfig round_cfg = dpo;
    round_cfg.seed = derive_seed(dpo.seed, 0x7a11, k);
    if (k == 0) round_cfg.seed = dpo.seed;
    setup.iteration = k;
    SelfTrainResult r;
    try {
      r = run_self_training(*current, prompts, round_cfg, setup);
    } catch (const Error& e) {
      throw TrainingError("round " + std::to_string(k) + ": " + e.what());
    }
    RoundResult rr;
    rr.reference_hash = r.reference_hash_before;
    rr.steps = std::move(r.steps);
    rr.policy = std::move(r.policy);
    if (round_eval) rr.metrics = round_eval(*rr.policy, k);
    out.push_back(std::move(rr));
    current = out.back().policy.get();
  }
  return out;
}

}  // namespace selfjudge
