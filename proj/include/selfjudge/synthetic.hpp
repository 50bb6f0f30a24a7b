#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "selfjudge/corpus.hpp"
#include "selfjudge/error.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

enum class TaskKind { sort_digits, reverse_string, max_of_list };
enum class Corruption { drop, swap, off_by_one, insert };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::sort_digits: return "sort";
    case TaskKind::reverse_string: return "reverse";
    case TaskKind::max_of_list: return "max";
  }
  return "sort";
}

inline TaskKind task_kind_from_string(std::string_view s) {
  if (s == "sort" || s == "sort_digits") return TaskKind::sort_digits;
  if (s == "reverse" || s == "reverse_string") return TaskKind::reverse_string;
  if (s == "max" || s == "max_of_list") return TaskKind::max_of_list;
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

inline std::string_view to_string(Corruption c) {
  switch (c) {
    case Corruption::drop: return "drop";
    case Corruption::swap: return "swap";
    case Corruption::off_by_one: return "off_by_one";
    case Corruption::insert: return "insert";
  }
  return "drop";
}

inline Corruption corruption_from_string(std::string_view s) {
  if (s == "drop") return Corruption::drop;
  if (s == "swap") return Corruption::swap;
  if (s == "off_by_one") return Corruption::off_by_one;
  if (s == "insert") return Corruption::insert;
  throw ConfigError("unknown corruption '" + std::string(s) + "'");
}

struct SyntheticTaskSpec {
  std::vector<TaskKind> kinds{TaskKind::sort_digits};
  std::size_t min_len = 3;
  std::size_t max_len = 6;
  std::vector<Corruption> corruptions{Corruption::drop, Corruption::swap, Corruption::off_by_one,
                                      Corruption::insert};
  std::size_t corrupted_per_prompt = 3;
  double double_corruption_rate = 0.3;      // chance a corrupted response gets a second corruption
  double comparative_rationale_rate = 0.0;  // chance a rationale is rewritten comparatively
  double withheld_answer_rate = 0.0;        // chance the correct response is left out of a group

  void validate() const {
    if (kinds.empty()) throw ConfigError("synthetic spec needs at least one task kind");
    if (corruptions.empty()) throw ConfigError("synthetic spec needs at least one corruption mode");
    if (min_len < 2 || max_len < min_len) throw ConfigError("synthetic length range must satisfy 2 <= min <= max");
    if (corrupted_per_prompt < 2) throw ConfigError("need at least 2 corrupted responses per prompt");
    if (!(withheld_answer_rate >= 0.0 && withheld_answer_rate < 1.0)) {
      throw ConfigError("withheld answer rate must lie in [0, 1)");
    }
  }
};

inline const std::vector<std::string>& synthetic_principles() {
  static const std::vector<std::string> p{"accuracy", "completeness", "ordering"};
  return p;
}

// ---------------------------------------------------------------------------
// Oracle

inline std::string join_items(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& it : items) {
    if (!out.empty()) out += ' ';
    out += it;
  }
  return out;
}

/// Correct answer for a task prompt such as "sort 3 1 2"; nullopt when the
/// prompt is not a synthetic task.
inline std::optional<std::string> solve_prompt(std::string_view prompt) {
  auto words = split_whitespace(prompt);
  if (words.size() < 2) return std::nullopt;
  TaskKind kind;
  try {
    kind = task_kind_from_string(words.front());
  } catch (const ConfigError&) {
    return std::nullopt;
  }
  std::vector<std::string> items(words.begin() + 1, words.end());
  switch (kind) {
    case TaskKind::sort_digits:
      std::sort(items.begin(), items.end());
      return join_items(items);
    case TaskKind::reverse_string:
      std::reverse(items.begin(), items.end());
      return join_items(items);
    case TaskKind::max_of_list:
      return *std::max_element(items.begin(), items.end());
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Corpus generation

namespace detail {

inline std::string shift_item(const std::string& item, std::mt19937_64& rng) {
  const char c = item.front();
  const bool digit = c >= '0' && c <= '9';
  const char lo = digit ? '0' : 'a', hi = digit ? '9' : 'z';
  int step = (rng() & 1) ? 1 : -1;
  if (c == lo) step = 1;
  if (c == hi) step = -1;
  return std::string(1, static_cast<char>(c + step));
}

inline std::vector<std::string> corrupt_once(std::vector<std::string> out, Corruption mode,
                                             const std::vector<std::string>& inputs,
                                             std::mt19937_64& rng) {
  if (out.size() == 1 && mode != Corruption::off_by_one) {
    // Single-item answers: replace with a different input item instead.
    std::vector<std::string> others;
    for (const auto& it : inputs) {
      if (it != out.front()) others.push_back(it);
    }
    if (!others.empty()) {
      out.front() = others[static_cast<std::size_t>(rng() % others.size())];
      return out;
    }
    mode = Corruption::off_by_one;
  }
  switch (mode) {
    case Corruption::drop:
      out.erase(out.begin() + static_cast<std::ptrdiff_t>(rng() % out.size()));
      break;
    case Corruption::swap: {
      std::vector<std::size_t> spots;
      for (std::size_t i = 0; i + 1 < out.size(); ++i) {
        if (out[i] != out[i + 1]) spots.push_back(i);
      }
      if (spots.empty()) return corrupt_once(std::move(out), Corruption::off_by_one, inputs, rng);
      const std::size_t i = spots[static_cast<std::size_t>(rng() % spots.size())];
      std::swap(out[i], out[i + 1]);
      break;
    }
    case Corruption::off_by_one: {
      const std::size_t i = static_cast<std::size_t>(rng() % out.size());
      out[i] = shift_item(out[i], rng);
      break;
    }
    case Corruption::insert: {
      const std::string item = out[static_cast<std::size_t>(rng() % out.size())];
      out.insert(out.begin() + static_cast<std::ptrdiff_t>(rng() % (out.size() + 1)), item);
      break;
    }
  }
  return out;
}

inline std::size_t multiset_difference(std::vector<std::string> a, std::vector<std::string> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::string> only_a, only_b;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(only_a));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(only_b));
  return only_a.size() + only_b.size();
}

inline std::size_t misplaced(const std::vector<std::string>& r, const std::vector<std::string>& c) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < std::min(r.size(), c.size()); ++i) n += r[i] != c[i];
  return n;
}

inline std::string plural(std::size_t n, std::string_view word) {
  return std::to_string(n) + " " + std::string(word) + (n == 1 ? "" : "s");
}

}  // namespace detail

/// Scores (1-10) and rationales of `response` against the correct answer.
/// The correct answer scores 10 everywhere; anything else at most 9.
inline PrincipleRatedResponse rate_response(const std::string& response, const std::string& answer,
                                            const std::vector<std::string>& principles) {
  const auto r = split_whitespace(response);
  const auto c = split_whitespace(answer);
  const bool correct = response == answer;
  PrincipleRatedResponse out;
  out.text = response;
  out.source_model = "synthetic";
  for (const auto& p : principles) {
    double score = 10.0;
    std::string why;
    if (p == "accuracy") {
      const std::size_t d = edit_distance(r, c);
      if (!correct) score = std::max(1.0, 9.0 - 2.0 * static_cast<double>(std::max<std::size_t>(d, 1) - 1));
      why = correct ? "The output matches the expected result."
                    : "The output is " + detail::plural(std::max<std::size_t>(d, 1), "edit") +
                          " away from the expected result.";
    } else if (p == "completeness") {
      const std::size_t m = detail::multiset_difference(r, c);
      if (!correct) score = m == 0 ? 9.0 : std::max(1.0, 9.0 - 3.0 * static_cast<double>(m));
      why = m == 0 ? "All " + detail::plural(c.size(), "expected item") + " are present."
                   : detail::plural(m, "item") + " missing or extra.";
    } else if (p == "ordering") {
      const std::size_t m = detail::misplaced(r, c);
      if (!correct) score = m == 0 ? 9.0 : std::max(1.0, 9.0 - 2.0 * static_cast<double>(m));
      why = m == 0 ? "Every item is in the right position."
                   : detail::plural(m, "item") + " out of position.";
    } else {
      throw ConfigError("unknown synthetic principle '" + p + "'");
    }
    out.scores[p] = score;
    out.rationales[p] = why;
  }
  return out;
}

inline std::string make_task_prompt(TaskKind kind, const std::vector<std::string>& items) {
  return std::string(to_string(kind)) + " " + join_items(items);
}

/// Prompt groups with one correct and several corrupted responses each (the
/// correct one is left out of a `withheld_answer_rate` share of groups).
/// Prompts are distinct; the corpus depends only on (spec, n, principles, seed).
inline std::vector<PromptGroup> make_synthetic_corpus(const SyntheticTaskSpec& spec, std::size_t n_prompts,
                                                      const std::vector<std::string>& principles,
                                                      std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::set<std::string> seen;
  std::vector<PromptGroup> out;
  std::size_t attempts = 0;
  while (out.size() < n_prompts) {
    if (++attempts > 50 * n_prompts + 1000) {
      throw ConfigError("synthetic spec cannot produce " + std::to_string(n_prompts) + " distinct prompts");
    }
    const TaskKind kind = spec.kinds[static_cast<std::size_t>(rng() % spec.kinds.size())];
    const std::size_t len = spec.min_len + static_cast<std::size_t>(rng() % (spec.max_len - spec.min_len + 1));
    std::vector<std::string> items(len);
    for (auto& it : items) {
      it = kind == TaskKind::reverse_string ? std::string(1, static_cast<char>('a' + rng() % 26))
                                            : std::string(1, static_cast<char>('0' + rng() % 10));
    }
    const std::string prompt = make_task_prompt(kind, items);
    if (!seen.insert(prompt).second) continue;
    const std::string answer = *solve_prompt(prompt);

    PromptGroup g;
    g.id = "syn-" + std::to_string(out.size());
    g.prompt = Dialogue::from_text(prompt);
    g.answer = answer;
    std::set<std::string> texts{answer};
    std::vector<std::string> responses{answer};
    const auto offset = static_cast<std::size_t>(rng() % spec.corruptions.size());
    for (std::size_t j = 0; j < spec.corrupted_per_prompt; ++j) {
      for (int tries = 0; tries < 20; ++tries) {
        const auto mode = spec.corruptions[(offset + j + static_cast<std::size_t>(tries)) % spec.corruptions.size()];
        auto bad = detail::corrupt_once(split_whitespace(answer), mode, items, rng);
        if (uniform01(rng) < spec.double_corruption_rate) {
          const auto second = spec.corruptions[static_cast<std::size_t>(rng() % spec.corruptions.size())];
          bad = detail::corrupt_once(std::move(bad), second, items, rng);
        }
        const std::string text = join_items(bad);
        if (!text.empty() && texts.insert(text).second) {
          responses.push_back(text);
          break;
        }
      }
    }
    if (responses.size() < 3) continue;
    if (spec.withheld_answer_rate > 0.0 && uniform01(rng) < spec.withheld_answer_rate) {
      responses.erase(responses.begin());
    }
    // Shuffle so the correct response has no fixed position.
    seeded_shuffle(responses, rng());
    for (const auto& text : responses) {
      auto rated = rate_response(text, answer, principles);
      for (auto& [p, why] : rated.rationales) {
        if (uniform01(rng) < spec.comparative_rationale_rate) {
          why.front() = static_cast<char>(std::tolower(static_cast<unsigned char>(why.front())));
          why = "Compared to the other response, " + why;
        }
      }
      g.responses.push_back(std::move(rated));
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Oracle comparison of two responses to a task prompt: +1 when a is better,
/// -1 when b is better, 0 on a tie. Correct beats incorrect; then smaller
/// character edit distance to the answer; then the shorter response.
inline int oracle_compare(std::string_view answer, std::string_view a, std::string_view b) {
  const bool ca = a == answer, cb = b == answer;
  if (ca != cb) return ca ? 1 : -1;
  if (ca) return 0;
  const auto da = edit_distance(a, answer), db = edit_distance(b, answer);
  if (da != db) return da < db ? 1 : -1;
  if (a.size() != b.size()) return a.size() < b.size() ? 1 : -1;
  return 0;
}

}  // namespace selfjudge
