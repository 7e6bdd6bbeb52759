#pragma once

// Flat TOML-style configuration: `key = value` lines, `#` comments, and
// optional `[section]` headers that prefix the following keys with
// `section.`. Values are bare words, numbers, booleans, or double-quoted
// strings.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "posbench/error.hpp"

namespace posbench::config {

class Config {
 public:
  static Config parse(const std::string& text, const std::string& name = "<config>") {
    Config c;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto where = name + ":" + std::to_string(lineno);
      line = strip_comment(line, where);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ValidationError(where + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) throw ValidationError(where + ": empty section name");
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ValidationError(where + ": expected `key = value`");
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) throw ValidationError(where + ": empty key");
      if (!section.empty()) key = section + "." + key;
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
        value = unescape(value.substr(1, value.size() - 2), where);
      } else if (!value.empty() && value.front() == '"') {
        throw ValidationError(where + ": unterminated string");
      }
      if (c.values_.count(key)) throw ValidationError(where + ": duplicate key '" + key + "'");
      c.values_[key] = value;
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback = {}) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::uint64_t v = 0;
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ValidationError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    double v = 0.0;
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ValidationError("config key '" + key + "': expected a number, got '" + s + "'");
    }
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw ValidationError("config key '" + key + "': expected true or false, got '" + it->second + "'");
  }

  // Comma-separated list; surrounding whitespace trimmed, empty items dropped.
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  // Keys not in `known` are rejected so that typos do not pass silently.
  void check_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_) {
      if (!known.count(k)) throw ValidationError("unknown config key '" + k + "'");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::string strip_comment(const std::string& line, const std::string& where) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '\\' && quoted) {
        ++i;
      } else if (line[i] == '"') {
        quoted = !quoted;
      } else if (line[i] == '#' && !quoted) {
        return line.substr(0, i);
      }
    }
    if (quoted) throw ValidationError(where + ": unterminated string");
    return line;
  }

  static std::string unescape(const std::string& s, const std::string& where) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] != '\\') {
        out += s[i];
        continue;
      }
      if (++i == s.size()) throw ValidationError(where + ": dangling escape");
      switch (s[i]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: throw ValidationError(where + ": unknown escape '\\" + std::string(1, s[i]) + "'");
      }
    }
    return out;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace posbench::config
