#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selfjudge/pipeline.hpp"

using namespace selfjudge;

namespace {

std::filesystem::path default_config_file() {
  std::filesystem::path dir;
  if (const char* env = std::getenv("SELFJUDGE_CONFIG_DIR")) {
    dir = env;
  } else {
#ifdef SELFJUDGE_CONFIG_DIR
    dir = SELFJUDGE_CONFIG_DIR;
#else
    dir = "configs";
#endif
  }
  return dir / "selfjudge.toml";
}

void add_model_options(CLI::App* cmd, ModelOptions& m) {
  cmd->add_option("--layers", m.layers, "Transformer blocks")->capture_default_str();
  cmd->add_option("--hidden", m.hidden, "Hidden width")->capture_default_str();
  cmd->add_option("--heads", m.heads, "Attention heads")->capture_default_str();
  cmd->add_option("--context", m.context, "Context length in tokens")->capture_default_str();
  cmd->add_option("--init-seed", m.init_seed, "Parameter initialization seed")->capture_default_str();
}

void add_judge_options(CLI::App* cmd, JudgeOptions& j) {
  cmd->add_option("--templates", j.templates, "Template set name or directory")->capture_default_str();
  cmd->add_flag("--principles", j.principles, "Judge per principle and aggregate");
  cmd->add_option("--principle-set", j.principle_set, "Principles to use (default: all in the template set)")
      ->delimiter(',');
  cmd->add_flag("--rationale", j.rationale, "Use the rationale judgment template");
  cmd->add_option("--normalization", j.normalization, "two_token or full_vocab")
      ->check(CLI::IsMember({"two_token", "full_vocab"}))
      ->capture_default_str();
}

void add_sample_options(CLI::App* cmd, SampleOptions& s) {
  cmd->add_option("--temperature", s.temperature, "Sampling temperature (0 = greedy)")->capture_default_str();
  cmd->add_option("--top-p", s.top_p, "Nucleus mass")->capture_default_str();
  cmd->add_option("--max-new-tokens", s.max_new_tokens, "Generation cap")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-judge: judge-augmented fine-tuning, self-training and self-rejection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  const auto cfg_file = default_config_file();
  const bool have_default = std::filesystem::exists(cfg_file);
  auto* config_opt = app.set_config("--config", have_default ? cfg_file.string() : "",
                                    "Config file; command-line flags override it");

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic rated corpus");
  c_synth->add_option("--n", synth.n, "Number of prompts")->capture_default_str();
  c_synth->add_option("--kinds", synth.kinds, "Task kinds: sort, reverse, max")->delimiter(',');
  c_synth->add_option("--min-len", synth.min_len)->capture_default_str();
  c_synth->add_option("--max-len", synth.max_len)->capture_default_str();
  c_synth->add_option("--corrupted", synth.corrupted, "Corrupted responses per prompt")->capture_default_str();
  c_synth->add_option("--comparative-rate", synth.comparative_rate, "Share of comparative rationales");
  c_synth->add_option("--withheld-rate", synth.withheld_rate, "Share of prompts without the correct response");
  c_synth->add_option("--corruptions", synth.corruptions, "Corruption modes: drop, swap, off_by_one, insert")
      ->delimiter(',');
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("--out", synth.out, "Output JSONL")->required();

  PreprocessOptions pre;
  auto* c_pre = app.add_subcommand("preprocess", "Split a rated corpus and build preference triplets");
  c_pre->add_option("--in", pre.in, "Prompt-group JSONL")->required();
  c_pre->add_option("--out", pre.out, "Output directory")->required();
  c_pre->add_option("--test-fraction", pre.test_fraction)->capture_default_str();
  c_pre->add_option("--pairing", pre.pairing)
      ->check(CLI::IsMember({"every_inferior", "one_sampled"}))
      ->capture_default_str();
  c_pre->add_option("--max-pairs", pre.max_pairs, "Cap per prompt (0 = none)");
  c_pre->add_flag("--principles", pre.principles, "Also build per-principle triplets");
  c_pre->add_flag("--keep-comparative", pre.keep_comparative, "Keep responses with comparative rationales");
  c_pre->add_option("--seed", pre.seed)->capture_default_str();

  BuildJsftOptions build;
  auto* c_build = app.add_subcommand("build-jsft", "Build the judge-augmented training set");
  c_build->add_option("--triplets", build.triplets, "Overall triplets JSONL")->required();
  c_build->add_option("--principle-triplets", build.principle_triplets, "Per-principle triplets JSONL");
  c_build->add_option("--templates", build.templates)->capture_default_str();
  c_build->add_flag("--principles", build.principles, "Principle-aware judge instances");
  c_build->add_flag("--rationale", build.rationale, "Append rationales to judge targets");
  c_build->add_flag("--judge-only", build.judge_only, "Omit response-generation instances");
  c_build->add_option("--max-seq-len", build.max_seq_len)->capture_default_str();
  c_build->add_option("--seed", build.seed)->capture_default_str();
  c_build->add_option("--out", build.out, "Output JSONL")->required();

  TrainJsftOptions train;
  auto* c_train = app.add_subcommand("train-jsft", "Masked fine-tuning on a JSFT dataset");
  c_train->add_option("--data", train.data, "Dataset JSONL")->required();
  c_train->add_option("--init", train.init, "Starting checkpoint (default: fresh model)");
  add_model_options(c_train, train.model);
  c_train->add_option("--epochs", train.epochs)->capture_default_str();
  c_train->add_option("--batch", train.batch)->capture_default_str();
  c_train->add_option("--lr", train.lr)->capture_default_str();
  c_train->add_option("--schedule", train.schedule)->capture_default_str();
  c_train->add_option("--warmup", train.warmup)->capture_default_str();
  c_train->add_option("--seed", train.seed)->capture_default_str();
  c_train->add_option("--out", train.out, "Checkpoint directory")->required();

  SelfTrainOptions self;
  auto* c_self = app.add_subcommand("self-train", "Self-training with pseudo-preferences (DPO)");
  c_self->add_option("--init", self.init, "Judge-model checkpoint")->required();
  c_self->add_option("--prompts", self.prompts, "Prompt JSONL for on-policy sampling");
  c_self->add_option("--triplets", self.triplets, "Triplet JSONL for offline mode");
  c_self->add_option("--limit", self.limit, "Use the first N prompts (0 = all)");
  c_self->add_option("--mode", self.mode)->check(CLI::IsMember({"onpolicy", "offline"}))->capture_default_str();
  c_self->add_option("--judge-source", self.judge_source)
      ->check(CLI::IsMember({"reference", "policy"}))
      ->capture_default_str();
  c_self->add_option("--rounds", self.rounds)->capture_default_str();
  c_self->add_option("--beta", self.beta)->capture_default_str();
  c_self->add_option("--epochs", self.epochs)->capture_default_str();
  c_self->add_option("--batch", self.batch)->capture_default_str();
  c_self->add_option("--lr", self.lr)->capture_default_str();
  c_self->add_option("--schedule", self.schedule)->capture_default_str();
  c_self->add_option("--warmup", self.warmup)->capture_default_str();
  c_self->add_flag("--keep-degenerate", self.keep_degenerate, "Train on ties and identical pairs too");
  add_judge_options(c_self, self.judge);
  add_sample_options(c_self, self.sample);
  c_self->add_option("--seed", self.seed)->capture_default_str();
  c_self->add_option("--out", self.out, "Output directory")->required();

  JudgeCmdOptions jud;
  auto* c_judge = app.add_subcommand("judge", "Judge triplets with a model");
  c_judge->add_option("--model", jud.model, "Checkpoint")->required();
  c_judge->add_option("--triplets", jud.triplets, "Triplet JSONL (chosen listed first)")->required();
  add_judge_options(c_judge, jud.judge);
  c_judge->add_option("--out", jud.out, "Verdict JSONL")->required();

  BestOfNOptions bon;
  auto* c_bon = app.add_subcommand("best-of-n", "Self-rejection by tournament over N samples");
  c_bon->add_option("--model", bon.model, "Policy checkpoint")->required();
  c_bon->add_option("--judge-model", bon.judge_model, "Judge checkpoint (default: the policy)");
  c_bon->add_option("--prompts", bon.prompts, "Prompt JSONL")->required();
  c_bon->add_option("--limit", bon.limit, "Use the first N prompts (0 = all)");
  c_bon->add_option("--n", bon.n, "Samples per prompt")->capture_default_str();
  add_judge_options(c_bon, bon.judge);
  add_sample_options(c_bon, bon.sample);
  c_bon->add_option("--seed", bon.seed)->capture_default_str();
  c_bon->add_option("--out", bon.out, "Output JSONL")->required();

  EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "Judge accuracy and oracle win rate");
  c_eval->add_option("--model", ev.model, "Checkpoint under evaluation")->required();
  c_eval->add_flag("--judge-acc", ev.judge_acc, "Measure judge accuracy on --test");
  c_eval->add_option("--test", ev.test, "Test triplet JSONL");
  c_eval->add_flag("--win-rate", ev.win_rate, "Oracle win rate against --against");
  c_eval->add_option("--against", ev.against, "Baseline checkpoint");
  c_eval->add_option("--prompts", ev.prompts, "Prompt JSONL");
  c_eval->add_option("--n", ev.n, "Number of prompts (0 = all)");
  c_eval->add_option("--best-of", ev.best_of, "Self-rejection samples for the evaluated model")
      ->capture_default_str();
  c_eval->add_option("--judge-model", ev.judge_model, "Judge checkpoint (default: the evaluated model)");
  add_judge_options(c_eval, ev.judge);
  add_sample_options(c_eval, ev.sample);
  c_eval->add_option("--seed", ev.seed)->capture_default_str();
  c_eval->add_option("--out", ev.out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  RunContext ctx;
  ctx.argv.assign(argv, argv + argc);
  if (config_opt->count() > 0) {
    ctx.config_path = config_opt->results().front();
  } else if (have_default) {
    ctx.config_path = cfg_file.string();
  }
  try {
    if (c_synth->parsed()) {
      ctx.command = "synth";
      std::cout << "prompts " << run_synth(synth, ctx) << "\n";
    } else if (c_pre->parsed()) {
      ctx.command = "preprocess";
      std::cout << run_preprocess(pre, ctx).to_json().dump(2) << "\n";
    } else if (c_build->parsed()) {
      ctx.command = "build-jsft";
      const auto r = run_build_jsft(build, ctx);
      std::cout << "sft " << r.sft << " judge " << r.judge << " " << r.stats.to_json().dump() << "\n";
    } else if (c_train->parsed()) {
      ctx.command = "train-jsft";
      const auto r = run_train_jsft(train, ctx);
      for (std::size_t e = 0; e < r.epoch_mean_loss.size(); ++e) {
        std::cout << "epoch " << e << " mean loss " << r.epoch_mean_loss[e] << "\n";
      }
    } else if (c_self->parsed()) {
      ctx.command = "self-train";
      const auto r = run_self_train(self, ctx);
      for (const auto& c : r.checkpoints) std::cout << "checkpoint " << c << "\n";
    } else if (c_judge->parsed()) {
      ctx.command = "judge";
      std::cout << run_judge(jud, ctx).to_json().dump() << "\n";
    } else if (c_bon->parsed()) {
      ctx.command = "best-of-n";
      std::cout << "judgments " << run_best_of_n(bon, ctx) << "\n";
    } else if (c_eval->parsed()) {
      ctx.command = "eval";
      std::cout << run_eval(ev, ctx).to_text();
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
