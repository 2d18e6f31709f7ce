#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace rankmerge {

/// Flat key-value configuration text.
///
/// Grammar, one statement per line:
///   # comment            (also allowed after a value)
///   [section]            prefixes later keys with "section."
///   key = value          value: integer | real | bare word | "quoted string" | a, b, c
/// Keys are unique after prefixing; anything else is a ConfigError naming the line.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);

  bool contains(const std::string& key) const { return values_.contains(key); }
  bool has_section(std::string_view section) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

  /// Typed getters; throw ConfigError on a malformed value.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  double get_real(const std::string& key, double fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;

  /// Keys not in `known`, for strict validation.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const;

 private:
  std::map<std::string, std::string> values_;
};

std::uint64_t parse_uint(std::string_view text, std::string_view what);
double parse_real(std::string_view text, std::string_view what);

/// 64-bit FNV-1a; stable across platforms.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace rankmerge
