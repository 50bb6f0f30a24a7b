#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfjudge/error.hpp"
#include "selfjudge/tokenizer.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

/// Decoding settings. temperature == 0 selects greedy (argmax) decoding.
struct SampleConfig {
  double temperature = 1.0;
  double top_p = 0.9;
  std::size_t max_new_tokens = 768;

  bool greedy() const noexcept { return temperature == 0.0; }

  void validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
      throw ConfigError("temperature must be >= 0 (0 means greedy)");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
    if (max_new_tokens == 0) throw ConfigError("max_new_tokens must be positive");
  }
};

struct Generation {
  std::vector<TokenId> tokens;  // excludes the terminating eos
  bool stopped_at_eos = false;
  bool prompt_truncated = false;
};

/// A token sequence whose weighted negative log-likelihood is differentiated.
/// weights[t] scales -log p(tokens[t] | tokens[<t]); weights[0] is ignored.
struct WeightedSequence {
  std::vector<TokenId> tokens;
  std::vector<float> weights;
};

/// Read-only autoregressive model. Implementations must be safe for
/// concurrent const calls.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const CharTokenizer& tokenizer() const = 0;
  virtual std::size_t context_length() const = 0;

  /// Softmax distribution of the token following `prompt`.
  virtual std::vector<double> next_token_distribution(std::span<const TokenId> prompt) const = 0;

  /// log p(tokens[t] | tokens[<t]) for t in [from, tokens.size()).
  virtual std::vector<double> token_logprobs(std::span<const TokenId> tokens,
                                             std::size_t from) const = 0;

  virtual Generation generate(std::span<const TokenId> prompt, const SampleConfig& sc,
                              std::uint64_t seed) const = 0;

  virtual bool trainable() const noexcept { return false; }

  /// Stable content identity (e.g. parameter hash) used for provenance.
  virtual std::string identity() const = 0;
};

class TrainableModel : public LanguageModel {
 public:
  bool trainable() const noexcept override { return true; }

  virtual std::span<float> parameters() = 0;
  virtual std::span<const float> parameters() const = 0;

  /// Adds d/dθ Σ_seq Σ_t w_t·(−log p_t) into `grad` and returns the weighted NLL.
  virtual double accumulate_gradient(std::span<const WeightedSequence> batch,
                                     std::span<float> grad) const = 0;

  virtual std::unique_ptr<TrainableModel> clone() const = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;

  std::string identity() const override {
    Fnv1a h;
    h.update(parameters());
    return to_hex(h.digest());
  }
};

// ---------------------------------------------------------------------------
// Text-level helpers shared by every backend.

inline std::string generate_text(const LanguageModel& model, std::string_view prompt,
                                 const SampleConfig& sc, std::uint64_t seed,
                                 bool* truncated = nullptr) {
  const auto& tok = model.tokenizer();
  const auto ids = tok.encode(prompt);
  const auto g = model.generate(ids, sc, seed);
  if (truncated) *truncated = g.prompt_truncated;
  return tok.decode(g.tokens);
}

/// Σ log p(target tokens | prompt). Zero for an empty target.
inline double sequence_logprob(const LanguageModel& model, std::string_view prompt,
                               std::string_view target) {
  const auto& tok = model.tokenizer();
  auto ids = tok.encode(prompt);
  const std::size_t from = ids.size();
  const auto tgt = tok.encode(target);
  if (tgt.empty()) return 0.0;
  ids.insert(ids.end(), tgt.begin(), tgt.end());
  if (ids.size() > model.context_length()) {
    throw VerdictError("prompt+target (" + std::to_string(ids.size()) +
                       " tokens) exceeds context length " +
                       std::to_string(model.context_length()));
  }
  if (from == 0) throw Error("sequence_logprob needs a non-empty prompt");
  const auto lps = model.token_logprobs(ids, from);
  return std::accumulate(lps.begin(), lps.end(), 0.0);
}

inline std::vector<double> next_token_distribution(const LanguageModel& model,
                                                   std::string_view prompt) {
  const auto ids = model.tokenizer().encode(prompt);
  if (ids.size() > model.context_length()) {
    throw VerdictError("prompt exceeds context length");
  }
  return model.next_token_distribution(ids);
}

// ---------------------------------------------------------------------------

/// Temperature + nucleus sampling over raw logits. Greedy when sc.greedy().
/// Ties in the greedy path resolve to the lowest id.
inline TokenId sample_token(std::span<const double> logits, const SampleConfig& sc,
                            std::mt19937_64& rng) {
  const std::size_t n = logits.size();
  if (sc.greedy()) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<std::pair<double, TokenId>> probs(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::exp((logits[i] - mx) / sc.temperature);
    probs[i] = {p, static_cast<TokenId>(i)};
    z += p;
  }
  std::stable_sort(probs.begin(), probs.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  // Smallest prefix whose mass reaches top_p.
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < n) {
    cum += probs[keep].first / z;
    ++keep;
    if (cum >= sc.top_p) break;
  }
  double kept_mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_mass += probs[i].first;
  double u = uniform01(rng) * kept_mass;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= probs[i].first;
    if (u < 0.0) return probs[i].second;
  }
  return probs[keep - 1].second;
}

}  // namespace selfjudge
