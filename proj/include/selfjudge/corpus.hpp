#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "selfjudge/error.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

enum class Role { user, assistant, system };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::system: return "system";
  }
  return "user";
}

inline Role role_from_string(std::string_view s) {
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  if (s == "system") return Role::system;
  throw ParseError("unknown role '" + std::string(s) + "'", 0);
}

struct DialogueTurn {
  Role role = Role::user;
  std::string content;
  bool operator==(const DialogueTurn&) const = default;
};

struct Dialogue {
  std::vector<DialogueTurn> turns;
  std::optional<std::string> system;

  bool operator==(const Dialogue&) const = default;

  static Dialogue from_text(std::string text) {
    Dialogue d;
    d.turns.push_back({Role::user, std::move(text)});
    return d;
  }

  bool is_plain() const noexcept {
    return !system && turns.size() == 1 && turns.front().role == Role::user;
  }

  /// Content of the final user turn (the instruction being answered).
  const std::string& last_user() const {
    for (auto it = turns.rbegin(); it != turns.rend(); ++it) {
      if (it->role == Role::user) return it->content;
    }
    throw Error("dialogue has no user turn");
  }

  /// Stable key for grouping records by prompt.
  std::string key() const {
    std::string k = system.value_or("");
    for (const auto& t : turns) {
      k += '\x1f';
      k += to_string(t.role);
      k += '\x1e';
      k += t.content;
    }
    return k;
  }
};

// ---------------------------------------------------------------------------
// Raw dialogue parsing (Human:/Assistant: headers)

namespace detail {

struct Header {
  std::string_view text;
  Role role;
};

inline constexpr Header kHeaders[] = {
    {"Human:", Role::user}, {"Assistant:", Role::assistant}, {"System:", Role::system}};

inline std::optional<Header> header_at(std::string_view raw, std::size_t pos) {
  for (const auto& h : kHeaders) {
    if (raw.substr(pos, h.text.size()) == h.text) return h;
  }
  return std::nullopt;
}

inline bool at_line_start(std::string_view raw, std::size_t pos) {
  return pos == 0 || raw[pos - 1] == '\n';
}

}  // namespace detail

/// Parses `Human:` / `Assistant:` transcripts. Turns start at line-initial
/// headers; headers repeated at the start of a turn's content are stripped
/// (the first header decides the role). Consecutive same-role turns are merged.
inline Dialogue parse_dialogue(std::string_view raw) {
  const auto first = raw.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) throw ParseError("empty dialogue", 0);

  struct Span {
    Role role;
    std::size_t begin;  // content start
    std::size_t end;
  };
  std::vector<Span> spans;
  for (std::size_t pos = first; pos < raw.size(); ++pos) {
    if (!detail::at_line_start(raw, pos) && pos != first) continue;
    if (auto h = detail::header_at(raw, pos)) {
      if (!spans.empty()) spans.back().end = pos;
      spans.push_back({h->role, pos + h->text.size(), raw.size()});
      pos += h->text.size() - 1;
    } else if (pos == first) {
      throw ParseError("no recognizable role header", first);
    }
  }

  Dialogue d;
  for (const auto& s : spans) {
    std::string_view content = trim(raw.substr(s.begin, s.end - s.begin));
    // Redundant headers: keep the first one's role, drop the rest.
    while (true) {
      std::optional<detail::Header> h;
      for (const auto& cand : detail::kHeaders) {
        if (starts_with(content, cand.text)) h = cand;
      }
      if (!h) break;
      content = trim(content.substr(h->text.size()));
    }
    if (s.role == Role::system) {
      if (!d.turns.empty() || d.system) {
        throw ParseError("system header must come first", s.begin);
      }
      d.system = std::string(content);
      continue;
    }
    if (!d.turns.empty() && d.turns.back().role == s.role) {
      d.turns.back().content += "\n\n";
      d.turns.back().content += content;
    } else {
      d.turns.push_back({s.role, std::string(content)});
    }
  }
  if (d.turns.empty()) throw ParseError("dialogue has no user/assistant turns", first);
  return d;
}

inline std::string serialize_dialogue(const Dialogue& d) {
  std::string out;
  if (d.system) out += "System: " + *d.system;
  for (const auto& t : d.turns) {
    if (!out.empty()) out += "\n\n";
    out += t.role == Role::user ? "Human: " : "Assistant: ";
    out += t.content;
  }
  return out;
}

/// Splits a dialogue at its last assistant turn: (prompt, final response).
inline std::pair<Dialogue, std::string> split_rollout(const Dialogue& d) {
  for (std::size_t i = d.turns.size(); i-- > 0;) {
    if (d.turns[i].role == Role::assistant) {
      Dialogue prompt;
      prompt.system = d.system;
      prompt.turns.assign(d.turns.begin(), d.turns.begin() + static_cast<std::ptrdiff_t>(i));
      if (prompt.turns.empty()) throw ParseError("assistant turn without preceding user turn", 0);
      return {prompt, d.turns[i].content};
    }
  }
  throw ParseError("dialogue has no assistant turn to roll out from", 0);
}

// ---------------------------------------------------------------------------
// Records

struct PrincipleRatedResponse {
  std::string text;
  std::map<std::string, double> scores;
  std::map<std::string, std::string> rationales;
  std::string source_model;
};

/// One prompt with its candidate responses (the corpus input unit).
struct PromptGroup {
  std::string id;
  Dialogue prompt;
  std::vector<PrincipleRatedResponse> responses;
  std::optional<std::string> answer;  // oracle label when the task is decidable
};

struct PreferenceTriplet {
  Dialogue prompt;
  std::string chosen;
  std::string rejected;
  std::optional<std::string> principle;
  std::optional<std::string> rationale_chosen;
  std::optional<std::string> rationale_rejected;
  nlohmann::json meta;  // free-form provenance; omitted from JSON when null
};

struct ScoreScale {
  double min = 1.0;
  double max = 10.0;
};

// ---------------------------------------------------------------------------
// JSON (line-delimited) encoding

inline nlohmann::json dialogue_to_json(const Dialogue& d) {
  if (d.is_plain()) return d.turns.front().content;
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : d.turns) turns.push_back({{"role", to_string(t.role)}, {"content", t.content}});
  nlohmann::json j = {{"turns", turns}};
  if (d.system) j["system"] = *d.system;
  return j;
}

inline Dialogue dialogue_from_json(const nlohmann::json& j) {
  if (j.is_string()) return Dialogue::from_text(j.get<std::string>());
  Dialogue d;
  if (j.contains("system")) d.system = j.at("system").get<std::string>();
  for (const auto& t : j.at("turns")) {
    d.turns.push_back({role_from_string(t.at("role").get<std::string>()),
                       t.at("content").get<std::string>()});
  }
  return d;
}

inline nlohmann::json to_json(const PreferenceTriplet& t) {
  nlohmann::json j = {{"prompt", dialogue_to_json(t.prompt)}, {"chosen", t.chosen}, {"rejected", t.rejected}};
  if (t.principle) j["principle"] = *t.principle;
  if (t.rationale_chosen) j["rationale_chosen"] = *t.rationale_chosen;
  if (t.rationale_rejected) j["rationale_rejected"] = *t.rationale_rejected;
  if (!t.meta.is_null()) j["meta"] = t.meta;
  return j;
}

inline PreferenceTriplet triplet_from_json(const nlohmann::json& j) {
  PreferenceTriplet t;
  t.prompt = dialogue_from_json(j.at("prompt"));
  t.chosen = j.at("chosen").get<std::string>();
  t.rejected = j.at("rejected").get<std::string>();
  if (j.contains("principle")) t.principle = j.at("principle").get<std::string>();
  if (j.contains("rationale_chosen")) t.rationale_chosen = j.at("rationale_chosen").get<std::string>();
  if (j.contains("rationale_rejected")) t.rationale_rejected = j.at("rationale_rejected").get<std::string>();
  if (j.contains("meta")) t.meta = j.at("meta");
  return t;
}

inline nlohmann::json to_json(const PromptGroup& g) {
  nlohmann::json responses = nlohmann::json::array();
  for (const auto& r : g.responses) {
    nlohmann::json rj = {{"text", r.text}, {"scores", r.scores}, {"rationales", r.rationales}};
    if (!r.source_model.empty()) rj["source_model"] = r.source_model;
    responses.push_back(rj);
  }
  nlohmann::json j = {{"prompt", dialogue_to_json(g.prompt)}, {"responses", responses}};
  if (!g.id.empty()) j["id"] = g.id;
  if (g.answer) j["answer"] = *g.answer;
  return j;
}

inline PromptGroup prompt_group_from_json(const nlohmann::json& j) {
  PromptGroup g;
  g.prompt = dialogue_from_json(j.at("prompt"));
  g.id = j.value("id", std::string{});
  if (j.contains("answer")) g.answer = j.at("answer").get<std::string>();
  for (const auto& rj : j.at("responses")) {
    PrincipleRatedResponse r;
    r.text = rj.at("text").get<std::string>();
    if (rj.contains("scores")) r.scores = rj.at("scores").get<std::map<std::string, double>>();
    if (rj.contains("rationales")) {
      r.rationales = rj.at("rationales").get<std::map<std::string, std::string>>();
    }
    r.source_model = rj.value("source_model", std::string{});
    g.responses.push_back(std::move(r));
  }
  return g;
}

template <class T, class Encode>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items, Encode encode) {
  std::string out;
  for (const auto& it : items) {
    out += encode(it).dump();
    out += '\n';
  }
  write_file(path, out);
}

template <class Decode>
auto read_jsonl(const std::filesystem::path& path, Decode decode) {
  using T = decltype(decode(nlohmann::json{}));
  std::vector<T> out;
  const std::string text = read_file(path);
  std::size_t line_no = 0, offset = 0;
  for (const auto& line : split(text, '\n')) {
    ++line_no;
    if (!trim(line).empty()) {
      try {
        out.push_back(decode(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(), offset);
      }
    }
    offset += line.size() + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Triplet construction

namespace detail {

inline double mean_score(const PrincipleRatedResponse& r) {
  if (r.scores.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [_, v] : r.scores) s += v;
  return s / static_cast<double>(r.scores.size());
}

/// a ranks strictly above b: higher mean, or equal mean and longer text.
inline bool ranks_above(const PrincipleRatedResponse& a, const PrincipleRatedResponse& b) {
  const double ma = mean_score(a), mb = mean_score(b);
  if (ma != mb) return ma > mb;
  return a.text.size() > b.text.size();
}

inline void check_principles(const std::vector<PrincipleRatedResponse>& rated, const ScoreScale& scale) {
  std::set<std::string> principles;
  for (const auto& [p, _] : rated.front().scores) principles.insert(p);
  for (const auto& r : rated) {
    std::set<std::string> mine;
    for (const auto& [p, v] : r.scores) {
      mine.insert(p);
      if (v < scale.min || v > scale.max) {
        throw ConfigError("score " + std::to_string(v) + " for '" + p + "' outside the configured scale");
      }
    }
    if (mine != principles) throw ConfigError("rated responses do not share one principle set");
  }
}

}  // namespace detail

enum class OverallPairing {
  every_inferior,  // top response vs each strictly lower-ranked response
  one_sampled,     // top response vs one uniformly sampled lower-ranked response
};

struct OverallTripletOptions {
  OverallPairing pairing = OverallPairing::every_inferior;
  std::size_t max_pairs = 0;  // cap per prompt for every_inferior; 0 = no cap
  std::uint64_t seed = 0;
  ScoreScale scale{};
};

/// Ranks responses by mean score over the principle set (longer wins ties)
/// and pairs the top one against strictly lower-ranked responses.
inline std::vector<PreferenceTriplet> build_overall_triplets(
    const std::vector<PrincipleRatedResponse>& rated, const Dialogue& prompt,
    const OverallTripletOptions& opt = {}) {
  if (rated.size() < 2) return {};
  detail::check_principles(rated, opt.scale);
  std::vector<std::size_t> order(rated.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detail::ranks_above(rated[a], rated[b]);
  });
  const auto& top = rated[order.front()];
  std::vector<std::size_t> inferior;
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto& r = rated[order[i]];
    if (detail::ranks_above(top, r) && r.text != top.text) inferior.push_back(order[i]);
  }
  if (inferior.empty()) return {};
  if (opt.pairing == OverallPairing::one_sampled) {
    std::mt19937_64 rng(opt.seed);
    inferior = {inferior[static_cast<std::size_t>(rng() % inferior.size())]};
  } else if (opt.max_pairs > 0 && inferior.size() > opt.max_pairs) {
    inferior.resize(opt.max_pairs);
  }
  std::vector<PreferenceTriplet> out;
  for (std::size_t idx : inferior) {
    PreferenceTriplet t;
    t.prompt = prompt;
    t.chosen = top.text;
    t.rejected = rated[idx].text;
    out.push_back(std::move(t));
  }
  return out;
}

/// Best response under `principle` vs one uniformly sampled response with a
/// strictly lower score under that principle. Empty when none is inferior.
inline std::vector<PreferenceTriplet> build_principle_triplets(
    const std::vector<PrincipleRatedResponse>& rated, const Dialogue& prompt,
    const std::string& principle, std::uint64_t seed) {
  std::vector<std::size_t> scored;
  for (std::size_t i = 0; i < rated.size(); ++i) {
    if (rated[i].scores.count(principle)) scored.push_back(i);
  }
  if (scored.size() < 2) return {};
  std::size_t best = scored.front();
  for (std::size_t i : scored) {
    const double si = rated[i].scores.at(principle), sb = rated[best].scores.at(principle);
    if (si > sb || (si == sb && rated[i].text.size() > rated[best].text.size())) best = i;
  }
  const double top = rated[best].scores.at(principle);
  std::vector<std::size_t> inferior;
  for (std::size_t i : scored) {
    if (rated[i].scores.at(principle) < top && rated[i].text != rated[best].text) inferior.push_back(i);
  }
  if (inferior.empty()) return {};
  std::mt19937_64 rng(seed);
  const std::size_t pick = inferior[static_cast<std::size_t>(rng() % inferior.size())];

  PreferenceTriplet t;
  t.prompt = prompt;
  t.chosen = rated[best].text;
  t.rejected = rated[pick].text;
  t.principle = principle;
  if (auto it = rated[best].rationales.find(principle); it != rated[best].rationales.end()) {
    t.rationale_chosen = it->second;
  }
  if (auto it = rated[pick].rationales.find(principle); it != rated[pick].rationales.end()) {
    t.rationale_rejected = it->second;
  }
  return {t};
}

// ---------------------------------------------------------------------------
// Comparative-rationale filter

inline const std::vector<std::string>& default_comparative_patterns() {
  static const std::vector<std::string> patterns = {
      "response a", "response b", "assistant a", "assistant b", "other response",
      "compared to", "in comparison", "than the other"};
  return patterns;
}

/// True when the rationale can be kept: no pattern occurs as a whole-word,
/// case-insensitive match.
inline bool filter_comparative_rationale(std::string_view rationale,
                                         const std::vector<std::string>& patterns =
                                             default_comparative_patterns()) {
  std::string lower(rationale);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  for (const auto& pat : patterns) {
    std::size_t pos = 0;
    while ((pos = lower.find(pat, pos)) != std::string::npos) {
      const bool left = pos == 0 || !is_word(lower[pos - 1]);
      const std::size_t end = pos + pat.size();
      const bool right = end >= lower.size() || !is_word(lower[end]);
      if (left && right) return false;
      ++pos;
    }
  }
  return true;
}

/// Removes responses carrying any comparative rationale.
inline std::size_t drop_comparative_responses(PromptGroup& g,
                                              const std::vector<std::string>& patterns =
                                                  default_comparative_patterns()) {
  const auto before = g.responses.size();
  std::erase_if(g.responses, [&](const PrincipleRatedResponse& r) {
    return std::any_of(r.rationales.begin(), r.rationales.end(), [&](const auto& kv) {
      return !filter_comparative_rationale(kv.second, patterns);
    });
  });
  return before - g.responses.size();
}

// ---------------------------------------------------------------------------
// Prompt-disjoint split

template <class Record>
struct Split {
  std::vector<Record> train;
  std::vector<Record> test;
};

/// Splits records by prompt: floor(test_fraction · #prompts) prompts go to
/// test; every record sharing a prompt lands on the same side.
template <class Record, class KeyFn>
Split<Record> split_dataset(const std::vector<Record>& records, double test_fraction,
                            std::uint64_t seed, KeyFn key_of) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }
  std::vector<std::string> keys;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& r : records) {
    auto k = key_of(r);
    if (seen.emplace(k, keys.size()).second) keys.push_back(std::move(k));
  }
  std::vector<std::size_t> perm(keys.size());
  std::iota(perm.begin(), perm.end(), 0);
  seeded_shuffle(perm, seed);
  const auto n_test = static_cast<std::size_t>(
      std::floor(test_fraction * static_cast<double>(keys.size()) + 1e-9));
  std::vector<bool> is_test(keys.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[perm[i]] = true;
  Split<Record> out;
  for (const auto& r : records) {
    (is_test[seen.at(key_of(r))] ? out.test : out.train).push_back(r);
  }
  return out;
}

inline Split<PromptGroup> split_dataset(const std::vector<PromptGroup>& groups, double test_fraction,
                                        std::uint64_t seed) {
  return split_dataset(groups, test_fraction, seed, [](const PromptGroup& g) { return g.prompt.key(); });
}

inline Split<PreferenceTriplet> split_dataset(const std::vector<PreferenceTriplet>& triplets,
                                              double test_fraction, std::uint64_t seed) {
  return split_dataset(triplets, test_fraction, seed,
                       [](const PreferenceTriplet& t) { return t.prompt.key(); });
}

}  // namespace selfjudge
