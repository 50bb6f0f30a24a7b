#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfjudge/chat_template.hpp"
#include "selfjudge/corpus.hpp"
#include "selfjudge/error.hpp"
#include "selfjudge/model.hpp"
#include "selfjudge/optim.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

enum class TaskTag { sft, judge };

inline std::string_view to_string(TaskTag t) { return t == TaskTag::sft ? "sft" : "judge"; }

struct InstanceMeta {
  std::string source;     // id of the originating triplet
  std::string order;      // "original" / "swapped" for judge instances
  std::optional<std::string> principle;
  std::string label;      // judge label ("A" / "B")
};

struct TrainingInstance {
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> loss_mask;
  TaskTag task_tag = TaskTag::sft;
  InstanceMeta meta;

  std::size_t masked_count() const {
    std::size_t n = 0;
    for (auto m : loss_mask) n += m;
    return n;
  }

  /// Tokens at masked-in positions, in order.
  std::vector<TokenId> masked_tokens() const {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
      if (loss_mask[i]) out.push_back(token_ids[i]);
    }
    return out;
  }
};

struct JsftConfig {
  bool include_principles = false;
  bool include_rationale = false;
  std::size_t max_seq_len = 2048;
  std::uint64_t shuffle_seed = 0;
  std::size_t epochs = 1;
  std::size_t batch_size = 128;
  OptimConfig optim{2e-5, Schedule::cosine, 0.03};

  void validate() const {
    if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
    if (include_rationale && !include_principles) {
      throw ConfigError("rationale training requires principle-aware judgment");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    optim.validate();
  }
};

struct BuildStats {
  std::size_t dropped_overlong = 0;
  std::size_t skipped_missing_rationale = 0;
  std::size_t duplicates = 0;
  std::size_t routed_to_plain = 0;

  nlohmann::json to_json() const {
    return {{"dropped_overlong", dropped_overlong},
            {"skipped_missing_rationale", skipped_missing_rationale},
            {"duplicates", duplicates},
            {"routed_to_plain", routed_to_plain}};
  }
};

namespace detail {

inline void append(TrainingInstance& inst, const CharTokenizer& tok, std::string_view text, bool target) {
  const auto ids = tok.encode(text);
  inst.token_ids.insert(inst.token_ids.end(), ids.begin(), ids.end());
  inst.loss_mask.insert(inst.loss_mask.end(), ids.size(), target ? 1 : 0);
}

}  // namespace detail

/// One instance per distinct (prompt, chosen); the mask covers every assistant
/// turn's content plus its eos.
inline std::vector<TrainingInstance> build_sft_instances(const std::vector<PreferenceTriplet>& triplets,
                                                         const ChatTemplate& chat,
                                                         const CharTokenizer& tok,
                                                         std::size_t max_seq_len, BuildStats& stats) {
  std::vector<TrainingInstance> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    if (!seen.insert(t.prompt.key() + '\x1d' + t.chosen).second) {
      ++stats.duplicates;
      continue;
    }
    Dialogue d = t.prompt;
    d.turns.push_back({Role::assistant, t.chosen});
    TrainingInstance inst;
    inst.task_tag = TaskTag::sft;
    inst.meta.source = "t" + std::to_string(i);
    for (const auto& seg : render_dialogue_segments(d, chat)) detail::append(inst, tok, seg.text, seg.target);
    if (inst.token_ids.size() > max_seq_len) {
      ++stats.dropped_overlong;
      continue;
    }
    out.push_back(std::move(inst));
  }
  return out;
}

/// Two instances per triplet: chosen in slot A (label A) and the swapped
/// order (label B). The mask covers the judge token, the rationale section
/// when present, and eos.
inline std::vector<TrainingInstance> build_judge_instances(const std::vector<PreferenceTriplet>& triplets,
                                                           const TemplateSet& templates,
                                                           const CharTokenizer& tok,
                                                           const JsftConfig& cfg, BuildStats& stats) {
  cfg.validate();
  std::vector<TrainingInstance> out;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    JudgmentKind kind = JudgmentKind::plain;
    if (cfg.include_principles && t.principle) {
      kind = cfg.include_rationale ? JudgmentKind::principled_with_rationale : JudgmentKind::principled;
    } else if (cfg.include_principles) {
      ++stats.routed_to_plain;
    }
    if (kind == JudgmentKind::principled_with_rationale && (!t.rationale_chosen || !t.rationale_rejected)) {
      ++stats.skipped_missing_rationale;
      continue;
    }
    const std::optional<std::string> principle = kind == JudgmentKind::plain ? std::nullopt : t.principle;
    std::vector<TrainingInstance> pair;
    for (bool swapped : {false, true}) {
      const auto& a = swapped ? t.rejected : t.chosen;
      const auto& b = swapped ? t.chosen : t.rejected;
      std::optional<std::string> ra, rb;
      if (kind == JudgmentKind::principled_with_rationale) {
        ra = swapped ? t.rationale_rejected : t.rationale_chosen;
        rb = swapped ? t.rationale_chosen : t.rationale_rejected;
      }
      const auto jp = templates.render(kind, t.prompt, a, b, principle, tok, 0, ra, rb);
      TrainingInstance inst;
      inst.task_tag = TaskTag::judge;
      inst.meta = {"t" + std::to_string(i), swapped ? "swapped" : "original", principle, swapped ? "B" : "A"};
      detail::append(inst, tok, jp.prefix(), false);
      detail::append(inst, tok, inst.meta.label, true);
      if (jp.rationale_target) detail::append(inst, tok, *jp.rationale_target, true);
      detail::append(inst, tok, templates.chat.eos_marker, true);
      pair.push_back(std::move(inst));
    }
    if (pair[0].token_ids.size() > cfg.max_seq_len || pair[1].token_ids.size() > cfg.max_seq_len) {
      stats.dropped_overlong += 2;
      continue;
    }
    for (auto& inst : pair) out.push_back(std::move(inst));
  }
  return out;
}

/// D+ = SFT ∪ judge instances, shuffled by seed.
inline std::vector<TrainingInstance> augment(std::vector<TrainingInstance> sft,
                                             const std::vector<TrainingInstance>& judge,
                                             std::uint64_t seed) {
  sft.insert(sft.end(), judge.begin(), judge.end());
  seeded_shuffle(sft, seed);
  return sft;
}

inline nlohmann::json to_json(const TrainingInstance& inst) {
  nlohmann::json meta = {{"source", inst.meta.source}};
  if (!inst.meta.order.empty()) meta["order"] = inst.meta.order;
  if (inst.meta.principle) meta["principle"] = *inst.meta.principle;
  if (!inst.meta.label.empty()) meta["label"] = inst.meta.label;
  return {{"token_ids", inst.token_ids},
          {"loss_mask", inst.loss_mask},
          {"task_tag", to_string(inst.task_tag)},
          {"meta", meta}};
}

inline TrainingInstance instance_from_json(const nlohmann::json& j) {
  TrainingInstance inst;
  inst.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
  inst.loss_mask = j.at("loss_mask").get<std::vector<std::uint8_t>>();
  inst.task_tag = j.at("task_tag").get<std::string>() == "judge" ? TaskTag::judge : TaskTag::sft;
  const auto& m = j.at("meta");
  inst.meta.source = m.value("source", std::string{});
  inst.meta.order = m.value("order", std::string{});
  if (m.contains("principle")) inst.meta.principle = m.at("principle").get<std::string>();
  inst.meta.label = m.value("label", std::string{});
  if (inst.loss_mask.size() != inst.token_ids.size()) {
    throw ParseError("loss_mask and token_ids differ in length", 0);
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Masked next-token training

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;  // mean NLL over masked-in tokens of the batch
  double lr = 0.0;
  double grad_norm = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"epoch", epoch}, {"loss", loss}, {"lr", lr}, {"grad_norm", grad_norm}};
  }
};

struct TrainReport {
  std::vector<StepLog> steps;
  std::vector<double> epoch_mean_loss;
};

using StepCallback = std::function<void(const StepLog&)>;

/// Runs cfg.epochs passes of masked cross-entropy. The first epoch follows
/// the dataset order; later epochs reshuffle with a seed derived per epoch.
inline TrainReport train_jsft(TrainableModel& model, const std::vector<TrainingInstance>& dataset,
                              const JsftConfig& cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  TrainReport report;
  if (cfg.epochs == 0 || dataset.empty()) return report;
  for (const auto& inst : dataset) {
    if (inst.token_ids.size() > model.context_length()) {
      throw TrainingError("instance of " + std::to_string(inst.token_ids.size()) +
                          " tokens exceeds the model context");
    }
  }
  const std::size_t per_epoch = (dataset.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  AdamW opt(model.parameters().size(), cfg.optim);
  std::vector<float> grad(model.parameters().size());
  std::vector<std::size_t> order(dataset.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (epoch > 0) seeded_shuffle(order, derive_seed(cfg.shuffle_seed, epoch));
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(dataset.size(), lo + cfg.batch_size);
      std::size_t masked = 0;
      for (std::size_t k = lo; k < hi; ++k) masked += dataset[order[k]].masked_count();
      std::vector<WeightedSequence> batch;
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& inst = dataset[order[k]];
        WeightedSequence seq{inst.token_ids, std::vector<float>(inst.token_ids.size(), 0.0f)};
        for (std::size_t t = 1; t < inst.token_ids.size(); ++t) {
          if (inst.loss_mask[t]) seq.weights[t] = 1.0f / static_cast<float>(masked);
        }
        batch.push_back(std::move(seq));
      }
      const double lr = cfg.optim.lr_at(step, total);
      std::fill(grad.begin(), grad.end(), 0.0f);
      const double loss = model.accumulate_gradient(batch, grad);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at batch " + std::to_string(step) + " (lr " +
                            std::to_string(lr) + ")");
      }
      StepLog log{step, epoch, loss, lr, 0.0};
      try {
        log.grad_norm = opt.step(model.parameters(), grad, lr);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at batch " + std::to_string(step) + " (lr " +
                            std::to_string(lr) + ")");
      }
      epoch_loss += loss;
      report.steps.push_back(log);
      if (on_step) on_step(log);
    }
    report.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(per_epoch));
  }
  return report;
}

}  // namespace selfjudge
