#include "rankmerge/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "rankmerge/common.hpp"

namespace rankmerge {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Drops a trailing comment that is not inside quotes.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool valid_key(std::string_view key) {
  return !key.empty() && std::ranges::all_of(key, [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
  });
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig config;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string_view line = trim(strip_comment(raw));
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      const auto name = trim(line.substr(1, line.size() - 2));
      if (!valid_key(name)) throw ConfigError(where + "bad section name");
      section = std::string(name);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key_part = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (!valid_key(key_part)) throw ConfigError(where + "bad key '" + std::string(key_part) + "'");
    if (value.empty()) throw ConfigError(where + "missing value");
    if (value.front() == '"') {
      if (value.size() < 2 || value.back() != '"') throw ConfigError(where + "unterminated string");
      value = value.substr(1, value.size() - 2);
    }
    const std::string key = section.empty() ? std::string(key_part) : section + "." + std::string(key_part);
    if (!config.values_.emplace(key, std::string(value)).second) {
      throw ConfigError(where + "duplicate key '" + key + "'");
    }
    if (end == text.size()) break;
  }
  return config;
}

bool KeyValueConfig::has_section(std::string_view section) const {
  const std::string prefix = std::string(section) + ".";
  return std::ranges::any_of(values_, [&](const auto& kv) { return kv.first.starts_with(prefix); });
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_uint(it->second, key);
}

double KeyValueConfig::get_real(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_real(it->second, key);
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  auto it = values_.find(key);
  if (it == values_.end()) return out;
  std::string_view rest = it->second;
  while (true) {
    const auto comma = rest.find(',');
    const auto item = trim(rest.substr(0, comma));
    if (item.empty()) throw ConfigError("empty list item in '" + key + "'");
    out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unknown_keys(const std::vector<std::string>& known) const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_) {
    if (std::ranges::find(known, key) == known.end()) out.push_back(key);
  }
  return out;
}

std::uint64_t parse_uint(std::string_view text, std::string_view what) {
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("'" + std::string(what) + "' expects a non-negative integer, got '" + std::string(text) + "'");
  }
  return value;
}

double parse_real(std::string_view text, std::string_view what) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw ConfigError("'" + std::string(what) + "' expects a finite real, got '" + std::string(text) + "'");
  }
  return value;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace rankmerge
