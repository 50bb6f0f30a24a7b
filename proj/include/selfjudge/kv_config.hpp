#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "selfjudge/error.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

/// Plain-text `key = value` configuration. `#` starts a comment line; later
/// assignments override earlier ones.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(std::string_view text, const std::string& origin = "<config>") {
    KvConfig cfg;
    std::size_t line_no = 0, offset = 0;
    for (const auto& raw : split(text, '\n')) {
      ++line_no;
      const auto line = trim(raw);
      if (!line.empty() && line.front() != '#') {
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
          throw ParseError(origin + ":" + std::to_string(line_no) + ": expected key = value", offset);
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key", offset);
        cfg.values_[std::string(key)] = std::string(trim(line.substr(eq + 1)));
      }
      offset += raw.size() + 1;
    }
    return cfg;
  }

  static KvConfig load(const std::filesystem::path& path) {
    return parse(read_file(path), path.string());
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void merge(const KvConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::string get_or(const std::string& key, std::string fallback) const {
    return get(key).value_or(std::move(fallback));
  }

  double get_or(const std::string& key, double fallback) const {
    auto v = get(key);
    return v ? to_double(key, *v) : fallback;
  }

  std::size_t get_or(const std::string& key, std::size_t fallback) const {
    auto v = get(key);
    return v ? to_size(key, *v) : fallback;
  }

  std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) const {
    auto v = get(key);
    return v ? static_cast<std::uint64_t>(to_size(key, *v)) : fallback;
  }

  bool get_or(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("'" + key + "' expects a boolean, got '" + *v + "'");
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  /// Keys present in the file but never read; typos show up here.
  std::set<std::string> unused() const {
    std::set<std::string> out;
    for (const auto& [k, _] : values_) {
      if (!used_.count(k)) out.insert(k);
    }
    return out;
  }

  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }

  static std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
      throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return out;
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace selfjudge
