#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selfjudge/corpus.hpp"
#include "selfjudge/error.hpp"
#include "selfjudge/kv_config.hpp"
#include "selfjudge/tokenizer.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

struct ChatTemplate {
  std::string system_marker{CharTokenizer::kSystem};
  std::string user_marker{CharTokenizer::kUser};
  std::string assistant_marker{CharTokenizer::kAssistant};
  std::string eos_marker{CharTokenizer::kEos};
  std::string system_message_default;

  void validate() const {
    const std::set<std::string> distinct{system_marker, user_marker, assistant_marker, eos_marker};
    if (system_marker.empty() || user_marker.empty() || assistant_marker.empty() || eos_marker.empty()) {
      throw ConfigError("chat template markers must be non-empty");
    }
    if (distinct.size() != 4) throw ConfigError("chat template markers must be distinct");
  }

  const std::string& marker(Role r) const {
    switch (r) {
      case Role::system: return system_marker;
      case Role::user: return user_marker;
      case Role::assistant: return assistant_marker;
    }
    throw RenderError("unknown role");
  }
};

/// A rendered piece of text; `target` marks assistant content the model learns.
struct Segment {
  std::string text;
  bool target = false;
};

/// Dialogue as segments. Assistant contents and their eos markers are the
/// target segments; everything else is context.
inline std::vector<Segment> render_dialogue_segments(const Dialogue& d, const ChatTemplate& t) {
  std::vector<Segment> out;
  auto context = [&](std::string s) {
    if (!out.empty() && !out.back().target) {
      out.back().text += s;
    } else {
      out.push_back({std::move(s), false});
    }
  };
  context(t.system_marker + "\n" + d.system.value_or(t.system_message_default) + "\n");
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const auto& turn = d.turns[i];
    if (turn.role == Role::system) throw RenderError("system turn inside dialogue body");
    if (i > 0 && d.turns[i - 1].role == Role::assistant) context("\n");
    context(t.marker(turn.role) + "\n");
    if (turn.role == Role::assistant) {
      out.push_back({turn.content + t.eos_marker, true});
    } else {
      context(turn.content + "\n");
    }
  }
  return out;
}

inline std::string render_dialogue(const Dialogue& d, const ChatTemplate& t) {
  std::string out;
  for (const auto& s : render_dialogue_segments(d, t)) out += s.text;
  return out;
}

/// Text the model continues to produce the next assistant turn.
inline std::string render_generation_prompt(const Dialogue& prompt, const ChatTemplate& t) {
  std::string out = render_dialogue(prompt, t);
  if (!prompt.turns.empty() && prompt.turns.back().role == Role::assistant) out += "\n";
  return out + t.assistant_marker + "\n";
}

// ---------------------------------------------------------------------------
// Judgment templates

enum class JudgmentKind { plain, principled, principled_with_rationale };

inline std::string_view to_string(JudgmentKind k) {
  switch (k) {
    case JudgmentKind::plain: return "plain";
    case JudgmentKind::principled: return "principled";
    case JudgmentKind::principled_with_rationale: return "principled_with_rationale";
  }
  return "plain";
}

inline constexpr std::string_view kJudgeSlot = "{judge}";

/// Substitutes `{name}` placeholders in one pass; inserted values are never
/// rescanned and unknown braces are kept verbatim.
inline std::string substitute(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const auto close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(text.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += text[i++];
  }
  return out;
}

struct JudgmentTemplateSpec {
  JudgmentKind kind = JudgmentKind::plain;
  std::string header_text;     // through the assistant marker line
  std::string answer_prefix;   // model-side text right before the judge token
  std::string rationale_section_format;  // text after the judge token (may be empty)

  /// Parses a template file: everything before `{judge}` is the prompt plus
  /// answer prefix, split at the line holding the assistant marker.
  static JudgmentTemplateSpec parse(std::string_view text, JudgmentKind kind,
                                    const ChatTemplate& chat) {
    if (!text.empty() && text.back() == '\n') text.remove_suffix(1);
    const auto slot = text.find(kJudgeSlot);
    if (slot == std::string_view::npos) throw ConfigError("judgment template lacks a {judge} slot");
    if (text.find(kJudgeSlot, slot + 1) != std::string_view::npos) {
      throw ConfigError("judgment template has more than one {judge} slot");
    }
    const std::string marker_line = chat.assistant_marker + "\n";
    const auto m = text.rfind(marker_line, slot);
    if (m == std::string_view::npos) {
      throw ConfigError("judgment template lacks an assistant marker line before {judge}");
    }
    JudgmentTemplateSpec spec;
    spec.kind = kind;
    spec.header_text = std::string(text.substr(0, m + marker_line.size()));
    spec.answer_prefix = std::string(text.substr(m + marker_line.size(), slot - m - marker_line.size()));
    spec.rationale_section_format = std::string(text.substr(slot + kJudgeSlot.size()));
    spec.validate();
    return spec;
  }

  void validate() const {
    if (answer_prefix.empty()) throw ConfigError("judgment answer prefix is empty");
    if (header_text.find("{response_a}") == std::string::npos ||
        header_text.find("{response_b}") == std::string::npos) {
      throw ConfigError("judgment template must contain {response_a} and {response_b}");
    }
    const bool principled = kind != JudgmentKind::plain;
    if (principled && (header_text + answer_prefix).find("{principle}") == std::string::npos) {
      throw ConfigError("principled judgment template lacks a {principle} slot");
    }
    if (kind == JudgmentKind::principled_with_rationale &&
        (rationale_section_format.find("{rationale_a}") == std::string::npos ||
         rationale_section_format.find("{rationale_b}") == std::string::npos)) {
      throw ConfigError("rationale template must contain {rationale_a} and {rationale_b}");
    }
    if (kind != JudgmentKind::principled_with_rationale && !trim(rationale_section_format).empty()) {
      throw ConfigError("only rationale templates may carry text after {judge}");
    }
  }
};

struct JudgmentPrompt {
  std::string header;
  std::string target_prefix;
  std::optional<std::string> rationale_target;
  std::size_t judge_token_offset = 0;  // token index of the judge slot inside the target segment
  std::size_t truncated_turns = 0;     // context turns dropped to fit the length budget

  std::string prefix() const { return header + target_prefix; }

  /// Rendered header ∥ target prefix ∥ label ∥ rationale.
  std::string full_text(std::string_view label) const {
    return prefix() + std::string(label) + rationale_target.value_or("");
  }
};

inline std::pair<std::string, std::string> swap_positions(std::string a, std::string b) {
  return {std::move(b), std::move(a)};
}

/// Prior turns as "User: ...\n\nAssistant: ..." blocks.
inline std::string render_context(const Dialogue& x) {
  std::string out;
  for (const auto& t : x.turns) {
    if (!out.empty()) out += "\n\n";
    out += t.role == Role::user ? "User: " : "Assistant: ";
    out += t.content;
  }
  return out;
}

struct JudgmentInputs {
  std::string system;
  std::optional<std::string> principle;
  std::optional<std::string> rationale_a;
  std::optional<std::string> rationale_b;
};

inline JudgmentPrompt render_judgment_untruncated(const Dialogue& x, std::string_view resp_a,
                                                  std::string_view resp_b,
                                                  const JudgmentTemplateSpec& spec,
                                                  const JudgmentInputs& in,
                                                  const CharTokenizer& tok) {
  const bool principled = spec.kind != JudgmentKind::plain;
  if (principled && !in.principle) throw RenderError("principled judgment requires a principle");
  std::map<std::string, std::string> values{
      {"system", in.system},
      {"prompt", x.is_plain() || x.turns.size() == 1 ? x.last_user() : render_context(x)},
      {"context", render_context(x)},
      {"response_a", std::string(resp_a)},
      {"response_b", std::string(resp_b)},
  };
  if (in.principle) values["principle"] = *in.principle;
  JudgmentPrompt jp;
  jp.header = substitute(spec.header_text, values);
  jp.target_prefix = substitute(spec.answer_prefix, values);
  if (spec.kind == JudgmentKind::principled_with_rationale && in.rationale_a && in.rationale_b) {
    values["rationale_a"] = *in.rationale_a;
    values["rationale_b"] = *in.rationale_b;
    jp.rationale_target = substitute(spec.rationale_section_format, values);
  }
  jp.judge_token_offset = tok.encode(jp.target_prefix).size();
  return jp;
}

/// Renders a judgment prompt. With a token budget, the oldest context turns
/// are dropped (two at a time) until label, rationale and eos fit.
inline JudgmentPrompt render_judgment(const Dialogue& x, std::string_view resp_a,
                                      std::string_view resp_b, const JudgmentTemplateSpec& spec,
                                      const JudgmentInputs& in, const CharTokenizer& tok,
                                      std::size_t max_tokens = 0) {
  Dialogue ctx = x;
  std::size_t dropped = 0;
  while (true) {
    auto jp = render_judgment_untruncated(ctx, resp_a, resp_b, spec, in, tok);
    jp.truncated_turns = dropped;
    if (max_tokens == 0) return jp;
    const std::size_t need = tok.encode(jp.prefix()).size() + 2 +
                             (jp.rationale_target ? tok.encode(*jp.rationale_target).size() : 0);
    if (need <= max_tokens) return jp;
    if (ctx.turns.size() <= 1) {
      throw LengthError("judgment prompt needs " + std::to_string(need) + " tokens; budget is " +
                        std::to_string(max_tokens));
    }
    const std::size_t n = std::min<std::size_t>(2, ctx.turns.size() - 1);
    ctx.turns.erase(ctx.turns.begin(), ctx.turns.begin() + static_cast<std::ptrdiff_t>(n));
    dropped += n;
  }
}

// ---------------------------------------------------------------------------
// Template sets (a directory with a manifest)

/// Dialogue template, default system message, judgment specs and
/// per-principle system messages loaded from one template directory.
///
/// manifest.txt keys: name, default_system, plain, principled,
/// principled_with_rationale, principle.<name> (system message file), and
/// optional marker.system / marker.user / marker.assistant / marker.eos.
struct TemplateSet {
  std::string name;
  ChatTemplate chat;
  std::map<JudgmentKind, JudgmentTemplateSpec> specs;
  std::map<std::string, std::string> principle_system;

  static TemplateSet load(const std::filesystem::path& dir) {
    const auto manifest = KvConfig::load(dir / "manifest.txt");
    auto text_of = [&](const std::string& key) {
      auto file = manifest.get(key);
      if (!file) throw ConfigError(dir.string() + "/manifest.txt lacks '" + key + "'");
      std::string s = read_file(dir / *file);
      if (!s.empty() && s.back() == '\n') s.pop_back();
      return s;
    };
    TemplateSet ts;
    ts.name = manifest.get_or("name", dir.filename().string());
    ts.chat.system_marker = manifest.get_or("marker.system", ts.chat.system_marker);
    ts.chat.user_marker = manifest.get_or("marker.user", ts.chat.user_marker);
    ts.chat.assistant_marker = manifest.get_or("marker.assistant", ts.chat.assistant_marker);
    ts.chat.eos_marker = manifest.get_or("marker.eos", ts.chat.eos_marker);
    ts.chat.system_message_default = text_of("default_system");
    ts.chat.validate();
    for (auto kind : {JudgmentKind::plain, JudgmentKind::principled,
                      JudgmentKind::principled_with_rationale}) {
      const std::string key(to_string(kind));
      if (manifest.has(key)) {
        ts.specs.emplace(kind, JudgmentTemplateSpec::parse(text_of(key), kind, ts.chat));
      }
    }
    if (!ts.specs.count(JudgmentKind::plain)) {
      throw ConfigError(dir.string() + ": a plain judgment template is required");
    }
    for (const auto& [k, _] : manifest.values()) {
      if (starts_with(k, "principle.")) ts.principle_system[k.substr(10)] = text_of(k);
    }
    return ts;
  }

  std::vector<std::string> principles() const {
    std::vector<std::string> out;
    for (const auto& [p, _] : principle_system) out.push_back(p);
    return out;
  }

  const JudgmentTemplateSpec& spec(JudgmentKind kind) const {
    auto it = specs.find(kind);
    if (it == specs.end()) {
      throw ConfigError("template set '" + name + "' has no " + std::string(to_string(kind)) + " template");
    }
    return it->second;
  }

  /// Plain kind always uses the default system message; principled kinds use
  /// the principle's own message.
  std::string system_for(JudgmentKind kind, const std::optional<std::string>& principle) const {
    if (kind == JudgmentKind::plain) return chat.system_message_default;
    if (!principle) throw RenderError("principled judgment requires a principle");
    auto it = principle_system.find(*principle);
    if (it == principle_system.end()) {
      throw ConfigError("no system message for principle '" + *principle + "'");
    }
    return it->second;
  }

  JudgmentPrompt render(JudgmentKind kind, const Dialogue& x, std::string_view resp_a,
                        std::string_view resp_b, const std::optional<std::string>& principle,
                        const CharTokenizer& tok, std::size_t max_tokens = 0,
                        std::optional<std::string> rationale_a = std::nullopt,
                        std::optional<std::string> rationale_b = std::nullopt) const {
    JudgmentInputs in{system_for(kind, principle), principle, std::move(rationale_a),
                      std::move(rationale_b)};
    return render_judgment(x, resp_a, resp_b, spec(kind), in, tok, max_tokens);
  }
};

inline std::filesystem::path default_template_root() {
  if (const char* env = std::getenv("SELFJUDGE_TEMPLATE_DIR")) return env;
#ifdef SELFJUDGE_TEMPLATE_DIR
  return SELFJUDGE_TEMPLATE_DIR;
#else
  return "templates";
#endif
}

/// Resolves a template set by directory path or by name under the default root.
inline TemplateSet load_template_set(const std::string& name_or_dir) {
  const std::filesystem::path p(name_or_dir);
  if (std::filesystem::exists(p / "manifest.txt")) return TemplateSet::load(p);
  const auto under_root = default_template_root() / p;
  if (std::filesystem::exists(under_root / "manifest.txt")) return TemplateSet::load(under_root);
  throw IoError("template set not found: " + name_or_dir);
}

}  // namespace selfjudge
