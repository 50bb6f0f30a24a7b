#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "selfjudge/chat_template.hpp"
#include "selfjudge/corpus.hpp"
#include "selfjudge/eval.hpp"
#include "selfjudge/jsft.hpp"
#include "selfjudge/judge.hpp"
#include "selfjudge/reject.hpp"
#include "selfjudge/selftrain.hpp"
#include "selfjudge/synthetic.hpp"
#include "selfjudge/toy_model.hpp"

namespace selfjudge {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Run manifests

struct RunContext {
  std::string command;
  std::vector<std::string> argv;
  std::string config_path;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Content hash of a file, or of every regular file under a directory.
inline std::string artifact_hash(const std::filesystem::path& p) {
  if (std::filesystem::is_regular_file(p)) return hash_text(read_file(p));
  if (!std::filesystem::is_directory(p)) return {};
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(p)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Fnv1a h;
  for (const auto& f : files) {
    h.update(std::filesystem::relative(f, p).string());
    h.update(read_file(f));
  }
  return to_hex(h.digest());
}

class ManifestWriter {
 public:
  ManifestWriter(const RunContext& ctx, nlohmann::json options, std::uint64_t seed)
      : ctx_(ctx), options_(std::move(options)), seed_(seed), started_(utc_timestamp()) {}

  void input(const std::string& path) {
    if (!path.empty()) inputs_.push_back({{"path", path}, {"hash", artifact_hash(path)}});
  }
  void output(const std::filesystem::path& path) { outputs_.push_back(path); }
  void checkpoint(const std::string& role, const std::string& path, const std::string& identity) {
    checkpoints_.push_back({{"role", role}, {"path", path}, {"parameter_hash", identity}});
  }
  void metric(const std::string& key, nlohmann::json v) { metrics_[key] = std::move(v); }

  void write(const std::filesystem::path& where) const {
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& o : outputs_) outs.push_back({{"path", o.string()}, {"hash", artifact_hash(o)}});
    const nlohmann::json j = {{"command", ctx_.command},
                              {"argv", ctx_.argv},
                              {"config_path", ctx_.config_path},
                              {"seed", seed_},
                              {"options", options_},
                              {"inputs", inputs_},
                              {"outputs", outs},
                              {"checkpoints", checkpoints_},
                              {"metrics", metrics_},
                              {"started_at", started_},
                              {"finished_at", utc_timestamp()},
                              {"version", kVersion}};
    write_file(where, j.dump(2) + "\n");
  }

 private:
  RunContext ctx_;
  nlohmann::json options_;
  std::uint64_t seed_;
  std::string started_;
  nlohmann::json inputs_ = nlohmann::json::array();
  std::vector<std::filesystem::path> outputs_;
  nlohmann::json checkpoints_ = nlohmann::json::array();
  nlohmann::json metrics_ = nlohmann::json::object();
};

/// Manifest path for an output: inside it when it is a directory, beside it otherwise.
inline std::filesystem::path manifest_path(const std::filesystem::path& out) {
  if (std::filesystem::is_directory(out)) return out / "manifest.json";
  return std::filesystem::path(out.string() + ".manifest.json");
}

// ---------------------------------------------------------------------------
// Shared loaders and option groups

/// Prompts from a JSONL file of prompt groups, triplets, or {"prompt": ...}
/// records, deduplicated in file order.
inline std::vector<Dialogue> load_prompts(const std::string& path, std::size_t limit = 0) {
  const auto dialogues = read_jsonl(path, [](const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("prompt")) throw ConfigError("record without a prompt field");
    return dialogue_from_json(j.at("prompt"));
  });
  std::vector<Dialogue> out;
  std::unordered_set<std::string> seen;
  for (const auto& d : dialogues) {
    if (seen.insert(d.key()).second) out.push_back(d);
    if (limit > 0 && out.size() == limit) break;
  }
  if (out.empty()) throw ConfigError(path + ": no prompts");
  return out;
}

inline std::vector<PreferenceTriplet> load_triplets(const std::string& path) {
  return read_jsonl(path, triplet_from_json);
}

inline std::unique_ptr<ToyModel> load_model(const std::string& dir) {
  if (dir.empty()) throw ConfigError("a model checkpoint is required");
  return ToyModel::load(dir);
}

struct ModelOptions {
  std::size_t layers = 3;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t context = 256;
  std::uint64_t init_seed = 3;

  ToyModelConfig config() const {
    ToyModelConfig c;
    c.layers = layers;
    c.hidden = hidden;
    c.heads = heads;
    c.context = context;
    c.init_seed = init_seed;
    return c;
  }
};

struct SampleOptions {
  double temperature = 1.0;
  double top_p = 0.9;
  std::size_t max_new_tokens = 32;

  SampleConfig config() const {
    SampleConfig sc{temperature, top_p, max_new_tokens};
    sc.validate();
    return sc;
  }
};

struct JudgeOptions {
  std::string templates = "synthetic";
  bool principles = false;
  std::vector<std::string> principle_set;  // empty: every principle in the template set
  bool rationale = false;
  std::string normalization = "two_token";

  JudgeConfig config(const TemplateSet& ts) const {
    JudgeConfig c;
    c.normalization = normalization_from_string(normalization);
    if (rationale && !principles) throw ConfigError("--rationale requires --principles");
    if (principles) {
      c.kind = rationale ? JudgmentKind::principled_with_rationale : JudgmentKind::principled;
      c.principles = principle_set.empty() ? ts.principles() : principle_set;
      for (const auto& p : c.principles) ts.system_for(c.kind, p);
    }
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"templates", templates},
            {"principles", principles},
            {"principle_set", principle_set},
            {"rationale", rationale},
            {"normalization", normalization}};
  }
};

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::size_t n = 2000;
  std::vector<std::string> kinds{"sort"};
  std::size_t min_len = 3;
  std::size_t max_len = 6;
  std::size_t corrupted = 3;
  double comparative_rate = 0.0;
  double withheld_rate = 0.0;
  std::vector<std::string> corruptions;  // empty keeps the defaults; repeats weight a mode
  std::uint64_t seed = 1;
  std::string out;

  SyntheticTaskSpec spec() const {
    SyntheticTaskSpec s;
    s.kinds.clear();
    for (const auto& k : kinds) s.kinds.push_back(task_kind_from_string(k));
    s.min_len = min_len;
    s.max_len = max_len;
    s.corrupted_per_prompt = corrupted;
    s.comparative_rationale_rate = comparative_rate;
    s.withheld_answer_rate = withheld_rate;
    if (!corruptions.empty()) {
      s.corruptions.clear();
      for (const auto& c : corruptions) s.corruptions.push_back(corruption_from_string(c));
    }
    return s;
  }
};

inline std::size_t run_synth(const SynthOptions& o, const RunContext& ctx) {
  if (o.out.empty()) throw ConfigError("--out is required");
  ManifestWriter m(ctx,
                   {{"n", o.n}, {"kinds", o.kinds}, {"min_len", o.min_len}, {"max_len", o.max_len},
                    {"corrupted", o.corrupted}, {"comparative_rate", o.comparative_rate},
                    {"withheld_rate", o.withheld_rate},
                    {"corruptions", o.corruptions}},
                   o.seed);
  const auto groups = make_synthetic_corpus(o.spec(), o.n, synthetic_principles(), o.seed);
  write_jsonl(o.out, groups, [](const PromptGroup& g) { return to_json(g); });
  m.output(o.out);
  m.metric("prompts", groups.size());
  m.write(manifest_path(o.out));
  return groups.size();
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessOptions {
  std::string in;
  std::string out;
  double test_fraction = 0.1;
  std::string pairing = "every_inferior";
  std::size_t max_pairs = 0;
  bool principles = false;
  bool keep_comparative = false;
  std::uint64_t seed = 2;
};

struct PreprocessCounts {
  std::size_t train_prompts = 0, test_prompts = 0;
  std::size_t train_triplets = 0, test_triplets = 0;
  std::size_t train_principle_triplets = 0, test_principle_triplets = 0;
  std::size_t dropped_comparative = 0;

  nlohmann::json to_json() const {
    return {{"train_prompts", train_prompts},
            {"test_prompts", test_prompts},
            {"train_triplets", train_triplets},
            {"test_triplets", test_triplets},
            {"train_principle_triplets", train_principle_triplets},
            {"test_principle_triplets", test_principle_triplets},
            {"dropped_comparative", dropped_comparative}};
  }
};

inline PreprocessCounts run_preprocess(const PreprocessOptions& o, const RunContext& ctx) {
  if (o.in.empty() || o.out.empty()) throw ConfigError("--in and --out are required");
  OverallTripletOptions topt;
  if (o.pairing == "one_sampled") {
    topt.pairing = OverallPairing::one_sampled;
  } else if (o.pairing != "every_inferior") {
    throw ConfigError("unknown pairing '" + o.pairing + "'");
  }
  topt.max_pairs = o.max_pairs;
  ManifestWriter m(ctx,
                   {{"test_fraction", o.test_fraction}, {"pairing", o.pairing}, {"max_pairs", o.max_pairs},
                    {"principles", o.principles}, {"keep_comparative", o.keep_comparative}},
                   o.seed);
  m.input(o.in);
  auto groups = read_jsonl(o.in, prompt_group_from_json);
  PreprocessCounts counts;
  if (!o.keep_comparative) {
    for (auto& g : groups) counts.dropped_comparative += drop_comparative_responses(g);
  }
  const auto split = split_dataset(groups, o.test_fraction, o.seed);
  counts.train_prompts = split.train.size();
  counts.test_prompts = split.test.size();

  const std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir);
  auto emit = [&](const std::string& name, const std::vector<PromptGroup>& side, bool principled,
                  std::size_t& count) {
    std::vector<PreferenceTriplet> ts;
    for (std::size_t gi = 0; gi < side.size(); ++gi) {
      const auto& g = side[gi];
      if (!principled) {
        auto opt = topt;
        opt.seed = derive_seed(o.seed, gi);
        for (auto& t : build_overall_triplets(g.responses, g.prompt, opt)) {
          t.meta["prompt_id"] = g.id;
          ts.push_back(std::move(t));
        }
        continue;
      }
      if (g.responses.empty()) continue;
      std::size_t pi = 0;
      for (const auto& [p, _] : g.responses.front().scores) {
        for (auto& t : build_principle_triplets(g.responses, g.prompt, p, derive_seed(o.seed, gi, ++pi))) {
          t.meta["prompt_id"] = g.id;
          ts.push_back(std::move(t));
        }
      }
    }
    count = ts.size();
    write_jsonl(dir / name, ts, [](const PreferenceTriplet& t) { return to_json(t); });
    m.output(dir / name);
  };
  emit("train.jsonl", split.train, false, counts.train_triplets);
  emit("test.jsonl", split.test, false, counts.test_triplets);
  if (o.principles) {
    emit("train_principle.jsonl", split.train, true, counts.train_principle_triplets);
    emit("test_principle.jsonl", split.test, true, counts.test_principle_triplets);
  }
  write_jsonl(dir / "train_groups.jsonl", split.train, [](const PromptGroup& g) { return to_json(g); });
  write_jsonl(dir / "test_groups.jsonl", split.test, [](const PromptGroup& g) { return to_json(g); });
  m.output(dir / "train_groups.jsonl");
  m.output(dir / "test_groups.jsonl");
  m.metric("counts", counts.to_json());
  m.write(dir / "manifest.json");
  return counts;
}

// ---------------------------------------------------------------------------
// build-jsft

struct BuildJsftOptions {
  std::string triplets;
  std::string principle_triplets;
  std::string templates = "synthetic";
  bool principles = false;
  bool rationale = false;
  bool judge_only = false;
  std::size_t max_seq_len = 256;
  std::uint64_t seed = 7;
  std::string out;
};

struct BuildJsftResult {
  std::size_t sft = 0;
  std::size_t judge = 0;
  BuildStats stats;
};

inline BuildJsftResult run_build_jsft(const BuildJsftOptions& o, const RunContext& ctx) {
  if (o.triplets.empty() || o.out.empty()) throw ConfigError("--triplets and --out are required");
  if (o.principles && o.principle_triplets.empty()) {
    throw ConfigError("--principles needs --principle-triplets");
  }
  JsftConfig cfg;
  cfg.include_principles = o.principles;
  cfg.include_rationale = o.rationale;
  cfg.max_seq_len = o.max_seq_len;
  cfg.validate();
  ManifestWriter m(ctx,
                   {{"templates", o.templates}, {"principles", o.principles}, {"rationale", o.rationale},
                    {"judge_only", o.judge_only}, {"max_seq_len", o.max_seq_len}},
                   o.seed);
  const auto ts = load_template_set(o.templates);
  const CharTokenizer tok;
  m.input(o.triplets);
  const auto overall = load_triplets(o.triplets);
  std::vector<PreferenceTriplet> judged = overall;
  if (o.principles) {
    m.input(o.principle_triplets);
    judged = load_triplets(o.principle_triplets);
  }
  BuildJsftResult r;
  std::vector<TrainingInstance> sft;
  if (!o.judge_only) sft = build_sft_instances(overall, ts.chat, tok, o.max_seq_len, r.stats);
  const auto judge = build_judge_instances(judged, ts, tok, cfg, r.stats);
  r.sft = sft.size();
  r.judge = judge.size();
  const auto data = augment(std::move(sft), judge, o.seed);
  write_jsonl(o.out, data, [](const TrainingInstance& i) { return to_json(i); });
  m.output(o.out);
  m.metric("sft_instances", r.sft);
  m.metric("judge_instances", r.judge);
  m.metric("build_stats", r.stats.to_json());
  m.write(manifest_path(o.out));
  return r;
}

// ---------------------------------------------------------------------------
// train-jsft

struct TrainJsftOptions {
  std::string data;
  std::string init;  // empty: fresh model from `model`
  ModelOptions model;
  std::size_t epochs = 6;
  std::size_t batch = 32;
  double lr = 1.5e-3;
  std::string schedule = "cosine";
  double warmup = 0.03;
  std::uint64_t seed = 5;
  std::string out;
};

inline TrainReport run_train_jsft(const TrainJsftOptions& o, const RunContext& ctx) {
  if (o.data.empty() || o.out.empty()) throw ConfigError("--data and --out are required");
  JsftConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.shuffle_seed = o.seed;
  cfg.optim.learning_rate = o.lr;
  cfg.optim.schedule = schedule_from_string(o.schedule);
  cfg.optim.warmup_ratio = o.warmup;
  cfg.validate();
  const nlohmann::json model_json = o.model.config().to_json();
  ManifestWriter m(ctx,
                   {{"epochs", o.epochs}, {"batch", o.batch}, {"lr", o.lr}, {"schedule", o.schedule},
                    {"warmup", o.warmup}, {"model", model_json}, {"init", o.init}},
                   o.seed);
  m.input(o.data);
  const auto data = read_jsonl(o.data, instance_from_json);
  std::unique_ptr<ToyModel> model = o.init.empty() ? std::make_unique<ToyModel>(o.model.config()) : load_model(o.init);
  if (!o.init.empty()) m.checkpoint("init", o.init, model->identity());
  std::string log;
  const auto report = train_jsft(*model, data, cfg, [&](const StepLog& s) { log += s.to_json().dump() + "\n"; });
  const std::filesystem::path dir(o.out);
  model->save(dir);
  write_file(dir / "train_log.jsonl", log);
  m.output(dir / "train_log.jsonl");
  m.checkpoint("output", o.out, model->identity());
  m.metric("epoch_mean_loss", report.epoch_mean_loss);
  m.write(dir / "manifest.json");
  return report;
}

// ---------------------------------------------------------------------------
// self-train

struct SelfTrainOptions {
  std::string init;
  std::string prompts;
  std::string triplets;  // offline mode
  std::size_t limit = 0;
  std::string mode = "onpolicy";
  std::string judge_source = "reference";
  std::size_t rounds = 1;
  double beta = 0.1;
  std::size_t epochs = 3;
  std::size_t batch = 64;
  double lr = 5e-6;
  std::string schedule = "constant";
  double warmup = 0.1;
  bool keep_degenerate = false;
  JudgeOptions judge;
  SampleOptions sample;
  std::uint64_t seed = 11;
  std::string out;
};

struct SelfTrainSummary {
  std::vector<std::string> checkpoints;
  std::vector<std::string> reference_hashes;
  std::size_t steps = 0;
};

inline SelfTrainSummary run_self_train(const SelfTrainOptions& o, const RunContext& ctx) {
  if (o.init.empty() || o.out.empty()) throw ConfigError("--init and --out are required");
  DpoConfig dpo;
  dpo.beta = o.beta;
  dpo.epochs = o.epochs;
  dpo.batch_size = o.batch;
  dpo.optim.learning_rate = o.lr;
  dpo.optim.schedule = schedule_from_string(o.schedule);
  dpo.optim.warmup_ratio = o.warmup;
  dpo.judge_source = judge_source_from_string(o.judge_source);
  dpo.mode = dpo_mode_from_string(o.mode);
  dpo.skip_degenerate = !o.keep_degenerate;
  dpo.seed = o.seed;
  dpo.validate();
  if (o.rounds == 0) throw ConfigError("--rounds must be >= 1");
  ManifestWriter m(ctx,
                   {{"mode", o.mode}, {"judge_source", o.judge_source}, {"rounds", o.rounds}, {"beta", o.beta},
                    {"epochs", o.epochs}, {"batch", o.batch}, {"lr", o.lr}, {"schedule", o.schedule},
                    {"warmup", o.warmup}, {"keep_degenerate", o.keep_degenerate}, {"limit", o.limit},
                    {"judge", o.judge.to_json()},
                    {"sample", {{"temperature", o.sample.temperature}, {"top_p", o.sample.top_p},
                                {"max_new_tokens", o.sample.max_new_tokens}}}},
                   o.seed);
  const auto init = load_model(o.init);
  m.checkpoint("init", o.init, init->identity());
  const auto ts = load_template_set(o.judge.templates);
  const std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir);
  SelfTrainSummary summary;
  auto dump_steps = [](const std::vector<SelfTrainStep>& steps) {
    std::string s;
    for (const auto& st : steps) s += st.to_json().dump() + "\n";
    return s;
  };

  if (dpo.mode == DpoMode::offline) {
    if (o.triplets.empty()) throw ConfigError("--mode offline needs --triplets");
    if (o.rounds != 1) throw ConfigError("--rounds applies to on-policy self-training only");
    m.input(o.triplets);
    const auto res = run_offline_dpo(*init, load_triplets(o.triplets), dpo, ts.chat);
    res.policy->save(dir);
    write_file(dir / "steps.jsonl", dump_steps(res.steps));
    m.output(dir / "steps.jsonl");
    m.checkpoint("output", o.out, res.policy->identity());
    summary.checkpoints.push_back(o.out);
    summary.reference_hashes.push_back(res.reference_hash_before);
    summary.steps = res.steps.size();
    m.write(dir / "manifest.json");
    return summary;
  }

  if (o.prompts.empty()) throw ConfigError("on-policy self-training needs --prompts");
  m.input(o.prompts);
  const auto prompts = load_prompts(o.prompts, o.limit);
  SelfTrainSetup setup;
  setup.templates = &ts;
  setup.judge = o.judge.config(ts);
  setup.sample = o.sample.config();
  setup.keep_triplets = true;
  std::unique_ptr<TrainableModel> current = init->clone();
  for (std::size_t k = 0; k < o.rounds; ++k) {
    auto cfg = dpo;
    if (k > 0) cfg.seed = derive_seed(dpo.seed, 0x7a11, k);
    setup.iteration = k;
    auto res = run_self_training(*current, prompts, cfg, setup);
    const auto out_dir = o.rounds == 1 ? dir : dir / ("round_" + std::to_string(k + 1));
    res.policy->save(out_dir);
    write_file(out_dir / "steps.jsonl", dump_steps(res.steps));
    write_jsonl(out_dir / "pseudo_triplets.jsonl", res.triplets,
                [](const PreferenceTriplet& t) { return to_json(t); });
    m.output(out_dir / "steps.jsonl");
    m.output(out_dir / "pseudo_triplets.jsonl");
    m.checkpoint("round_" + std::to_string(k + 1), out_dir.string(), res.policy->identity());
    summary.checkpoints.push_back(out_dir.string());
    summary.reference_hashes.push_back(res.reference_hash_before);
    summary.steps += res.steps.size();
    current = std::move(res.policy);
  }
  m.metric("reference_hashes", summary.reference_hashes);
  m.write(dir / "manifest.json");
  return summary;
}

// ---------------------------------------------------------------------------
// judge

struct JudgeCmdOptions {
  std::string model;
  std::string triplets;
  JudgeOptions judge;
  std::string out;
};

inline AccuracyResult run_judge(const JudgeCmdOptions& o, const RunContext& ctx) {
  if (o.triplets.empty() || o.out.empty()) throw ConfigError("--triplets and --out are required");
  ManifestWriter m(ctx, {{"judge", o.judge.to_json()}}, 0);
  const auto model = load_model(o.model);
  m.checkpoint("judge", o.model, model->identity());
  const auto ts = load_template_set(o.judge.templates);
  const ModelJudge judge(*model, ts, o.judge.config(ts));
  m.input(o.triplets);
  const auto triplets = load_triplets(o.triplets);
  std::string lines;
  AccuracyResult acc;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    nlohmann::json j;
    try {
      const auto v = judge.judge(t.prompt, t.chosen, t.rejected);
      j = v.to_json(std::to_string(i));
      acc.correct += !v.tie() && v.winner == Winner::a;
      acc.ties += v.tie();
    } catch (const VerdictError& e) {
      j = {{"prompt_id", std::to_string(i)}, {"error", e.what()}};
      ++acc.failed;
    }
    ++acc.count;
    lines += j.dump() + "\n";
  }
  if (acc.count > 0) acc.percent = 100.0 * static_cast<double>(acc.correct) / static_cast<double>(acc.count);
  write_file(o.out, lines);
  m.output(o.out);
  m.metric("agreement_with_labels", acc.to_json());
  m.write(manifest_path(o.out));
  return acc;
}

// ---------------------------------------------------------------------------
// best-of-n

struct BestOfNOptions {
  std::string model;
  std::string judge_model;  // empty: the policy judges itself
  std::string prompts;
  std::size_t limit = 0;
  std::size_t n = 4;
  JudgeOptions judge;
  SampleOptions sample;
  std::uint64_t seed = 13;
  std::string out;
};

inline std::size_t run_best_of_n(const BestOfNOptions& o, const RunContext& ctx) {
  if (o.prompts.empty() || o.out.empty()) throw ConfigError("--prompts and --out are required");
  ManifestWriter m(ctx, {{"n", o.n}, {"limit", o.limit}, {"judge", o.judge.to_json()}}, o.seed);
  const auto model = load_model(o.model);
  m.checkpoint("policy", o.model, model->identity());
  std::unique_ptr<ToyModel> judge_owned;
  const LanguageModel* judge_model = model.get();
  if (!o.judge_model.empty()) {
    judge_owned = load_model(o.judge_model);
    judge_model = judge_owned.get();
    m.checkpoint("judge", o.judge_model, judge_owned->identity());
  }
  const auto ts = load_template_set(o.judge.templates);
  const ModelJudge judge(*judge_model, ts, o.judge.config(ts));
  m.input(o.prompts);
  const auto prompts = load_prompts(o.prompts, o.limit);
  const auto sc = o.sample.config();
  std::string lines;
  std::size_t judgments = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto r = best_of_n(*model, ts.chat, prompts[i], o.n, sc, judge, derive_seed(o.seed, i));
    judgments += r.judgments;
    lines += nlohmann::json{{"prompt", dialogue_to_json(prompts[i])}, {"best", r.best}, {"tree", r.tree.to_json()}}
                 .dump() +
             "\n";
  }
  write_file(o.out, lines);
  m.output(o.out);
  m.metric("judgments", judgments);
  m.write(manifest_path(o.out));
  return judgments;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string model;
  bool judge_acc = false;
  std::string test;  // triplets for --judge-acc
  bool win_rate = false;
  std::string against;
  std::string prompts;
  std::size_t n = 0;  // prompt limit; 0 = all
  std::size_t best_of = 1;
  std::string judge_model;
  JudgeOptions judge;
  SampleOptions sample;
  std::uint64_t seed = 17;
  std::string out;
};

/// Policy responses for `prompts`: plain samples for best_of == 1, otherwise
/// tournament champions. Prompt i always draws from seed derive_seed(seed, i).
inline std::vector<std::optional<std::string>> policy_responses(const LanguageModel& model, const TemplateSet& ts,
                                                               const std::vector<Dialogue>& prompts,
                                                               const SampleConfig& sc, std::size_t best_of,
                                                               const PairwiseJudge* judge, std::uint64_t seed) {
  if (best_of <= 1) return respond_all(prompts, sampling_responder(model, ts.chat, sc, seed));
  std::vector<std::optional<std::string>> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    try {
      out.push_back(best_of_n(model, ts.chat, prompts[i], best_of, sc, *judge, derive_seed(seed, i)).best);
    } catch (const VerdictError&) {
      out.push_back(std::nullopt);
    }
  }
  return out;
}

inline EvalReport run_eval(const EvalOptions& o, const RunContext& ctx) {
  if (!o.judge_acc && !o.win_rate) throw ConfigError("nothing to evaluate: pass --judge-acc and/or --win-rate");
  if (o.out.empty()) throw ConfigError("--out is required");
  const nlohmann::json opts = {{"judge_acc", o.judge_acc}, {"win_rate", o.win_rate}, {"n", o.n},
                               {"best_of", o.best_of},     {"judge", o.judge.to_json()},
                               {"sample", {{"temperature", o.sample.temperature}, {"top_p", o.sample.top_p},
                                           {"max_new_tokens", o.sample.max_new_tokens}}}};
  ManifestWriter m(ctx, opts, o.seed);
  const auto model = load_model(o.model);
  m.checkpoint("policy", o.model, model->identity());
  const auto ts = load_template_set(o.judge.templates);
  std::unique_ptr<ToyModel> judge_owned;
  const LanguageModel* judge_model = model.get();
  if (!o.judge_model.empty()) {
    judge_owned = load_model(o.judge_model);
    judge_model = judge_owned.get();
    m.checkpoint("judge", o.judge_model, judge_owned->identity());
  }
  const ModelJudge judge(*judge_model, ts, o.judge.config(ts));

  EvalReport report;
  report.seed = o.seed;
  report.config_hash = hash_text(opts.dump());
  if (o.judge_acc) {
    if (o.test.empty()) throw ConfigError("--judge-acc needs --test");
    m.input(o.test);
    report.judge_accuracy = judge_accuracy(judge, load_triplets(o.test));
  }
  if (o.win_rate) {
    if (o.against.empty() || o.prompts.empty()) throw ConfigError("--win-rate needs --against and --prompts");
    m.input(o.prompts);
    const auto prompts = load_prompts(o.prompts, o.n);
    const auto baseline = load_model(o.against);
    m.checkpoint("against", o.against, baseline->identity());
    const auto sc = o.sample.config();
    const auto mine = policy_responses(*model, ts, prompts, sc, o.best_of, &judge, o.seed);
    const auto theirs = respond_all(prompts, sampling_responder(*baseline, ts.chat, sc, o.seed));
    report.win_rate = win_rate(prompts, mine, theirs);
    report.responses = response_stats(prompts, mine);
    report.extra["against_responses"] = response_stats(prompts, theirs).to_json();
  }
  const std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir);
  write_file(dir / "report.json", report.to_json().dump(2) + "\n");
  write_file(dir / "report.txt", report.to_text());
  m.output(dir / "report.json");
  m.output(dir / "report.txt");
  m.write(dir / "manifest.json");
  return report;
}

}  // namespace selfjudge
