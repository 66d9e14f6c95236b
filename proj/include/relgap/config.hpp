#pragma once

// Flat `key = value` configuration with `[section]` headers and `#` comments.
// Keys are stored as "section.key"; a bare key resolves when it is unique
// across the schema.

#include "relgap/mdp_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace relgap {

/// Rejected configuration content (unknown key, bad value, duplicate).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  std::string section;
  std::string name;
  std::string default_value;

  std::string qualified() const { return section + "." + name; }
};

class Config {
 public:
  explicit Config(std::vector<ConfigKey> schema) : schema_(std::move(schema)) {
    for (const auto& k : schema_) values_[k.qualified()] = k.default_value;
  }

  const std::vector<ConfigKey>& schema() const { return schema_; }

  /// Resolves "section.key" or a bare key that names exactly one schema entry.
  std::string resolve(std::string_view key) const {
    if (key.find('.') != std::string_view::npos) {
      const std::string k(key);
      if (!values_.count(k)) throw ConfigError("unknown config key '" + k + "'");
      return k;
    }
    std::string found;
    for (const auto& k : schema_) {
      if (k.name == key) {
        if (!found.empty()) {
          throw ConfigError("ambiguous config key '" + std::string(key) + "' (use section.key)");
        }
        found = k.qualified();
      }
    }
    if (found.empty()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    return found;
  }

  void set(std::string_view key, std::string value) { values_[resolve(key)] = std::move(value); }

  /// Reads a config stream. Errors carry the offending line number.
  void read(std::istream& in) {
    std::string raw;
    std::string section;
    std::set<std::string> seen;
    int line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      const auto hash = raw.find('#');
      std::string_view line(raw);
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ParseError(line_no, "unterminated section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (section.empty()) throw ParseError(line_no, "empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value'");
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ParseError(line_no, "missing key");
      const std::string full = section.empty() ? key : section + "." + key;
      std::string resolved;
      try {
        resolved = resolve(full);
      } catch (const ConfigError& e) {
        throw ParseError(line_no, e.what());
      }
      if (!seen.insert(resolved).second) throw ParseError(line_no, "duplicate key '" + full + "'");
      values_[resolved] = value;
    }
  }

  void read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    read(in);
  }

  std::string get_string(std::string_view key) const { return values_.at(resolve(key)); }

  double get_double(std::string_view key) const {
    const std::string v = get_string(key);
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" + v + "'");
    }
    return out;
  }

  long get_long(std::string_view key) const {
    const std::string v = get_string(key);
    long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("config key '" + std::string(key) + "': expected an integer, got '" + v + "'");
    }
    return out;
  }

  int get_int(std::string_view key) const { return static_cast<int>(get_long(key)); }

  bool get_bool(std::string_view key) const {
    const std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + std::string(key) + "': expected a boolean, got '" + v + "'");
  }

  /// Comma- or whitespace-separated list of numbers.
  std::vector<double> get_doubles(std::string_view key) const {
    std::vector<double> out;
    for (const auto& item : split_list(get_string(key))) {
      double x = 0.0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
      if (ec != std::errc() || ptr != item.data() + item.size()) {
        throw ConfigError("config key '" + std::string(key) + "': bad list entry '" + item + "'");
      }
      out.push_back(x);
    }
    return out;
  }

  std::vector<long> get_longs(std::string_view key) const {
    std::vector<long> out;
    for (const auto& item : split_list(get_string(key))) {
      long x = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
      if (ec != std::errc() || ptr != item.data() + item.size()) {
        throw ConfigError("config key '" + std::string(key) + "': bad list entry '" + item + "'");
      }
      out.push_back(x);
    }
    return out;
  }

  static std::vector<std::string> split_list(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
      if (c == ',' || c == ' ' || c == '\t') {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  std::vector<ConfigKey> schema_;
  std::map<std::string, std::string> values_;
};

}  // namespace relgap
