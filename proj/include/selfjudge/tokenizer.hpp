#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfjudge/error.hpp"

namespace selfjudge {

using TokenId = std::int32_t;

/// Character-level tokenizer over printable ASCII plus newline and tab, with
/// the chat role markers and end-of-sequence marker as single special tokens.
///
/// Special markers are matched greedily before falling back to characters, so
/// detokenize(tokenize(s)) == s for every string over the alphabet.
class CharTokenizer {
 public:
  static constexpr std::string_view kSystem = "<|system|>";
  static constexpr std::string_view kUser = "<|user|>";
  static constexpr std::string_view kAssistant = "<|assistant|>";
  static constexpr std::string_view kEos = "</s>";

  CharTokenizer() {
    pieces_.emplace_back("\n");
    pieces_.emplace_back("\t");
    for (int c = 32; c < 127; ++c) pieces_.emplace_back(1, static_cast<char>(c));
    char_ids_.fill(-1);
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      char_ids_[static_cast<unsigned char>(pieces_[i][0])] = static_cast<TokenId>(i);
    }
    for (auto s : {kSystem, kUser, kAssistant, kEos}) {
      specials_.push_back(static_cast<TokenId>(pieces_.size()));
      pieces_.emplace_back(s);
    }
  }

  std::size_t vocab_size() const noexcept { return pieces_.size(); }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
      if (text[i] == '<') {
        if (auto sp = match_special(text.substr(i))) {
          out.push_back(*sp);
          i += pieces_[static_cast<std::size_t>(*sp)].size();
          continue;
        }
      }
      const TokenId id = char_ids_[static_cast<unsigned char>(text[i])];
      if (id < 0) {
        throw ParseError("character outside tokenizer alphabet (code " +
                             std::to_string(static_cast<unsigned char>(text[i])) + ")",
                         i);
      }
      out.push_back(id);
      ++i;
    }
    return out;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) out += piece(id);
    return out;
  }

  const std::string& piece(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
      throw Error("token id out of range: " + std::to_string(id));
    }
    return pieces_[static_cast<std::size_t>(id)];
  }

  /// Id of a text that must map to exactly one token, if it does.
  std::optional<TokenId> single_token(std::string_view text) const {
    try {
      const auto ids = encode(text);
      if (ids.size() == 1) return ids.front();
    } catch (const ParseError&) {
    }
    return std::nullopt;
  }

  bool supports(std::string_view text) const noexcept {
    for (char c : text) {
      if (char_ids_[static_cast<unsigned char>(c)] < 0) return false;
    }
    return true;
  }

  TokenId eos() const noexcept { return specials_[3]; }
  TokenId system_marker() const noexcept { return specials_[0]; }
  TokenId user_marker() const noexcept { return specials_[1]; }
  TokenId assistant_marker() const noexcept { return specials_[2]; }

  /// One escaped piece per line, in id order.
  std::string table() const {
    std::string out;
    for (const auto& p : pieces_) {
      if (p == "\n") {
        out += "\\n";
      } else if (p == "\t") {
        out += "\\t";
      } else if (p == "\\") {
        out += "\\\\";
      } else {
        out += p;
      }
      out += '\n';
    }
    return out;
  }

 private:
  std::optional<TokenId> match_special(std::string_view rest) const {
    for (TokenId id : specials_) {
      const auto& s = pieces_[static_cast<std::size_t>(id)];
      if (rest.substr(0, s.size()) == s) return id;
    }
    return std::nullopt;
  }

  std::vector<std::string> pieces_;
  std::vector<TokenId> specials_;
  std::array<TokenId, 256> char_ids_{};
};

}  // namespace selfjudge
