#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "svw/core/error.hpp"

namespace svw {

/// Flat `key = value` configuration with `#` comments.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto text = trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) {
        throw DataError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      auto key = trim(text.substr(0, eq));
      if (key.empty()) {
        throw DataError(origin + ":" + std::to_string(lineno) + ": empty key");
      }
      cfg.values_[key] = trim(text.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    return parse(in, path);
  }

  static KeyValueConfig from_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw DataError("missing config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, values_.at(key)) : fallback;
  }

  long long get_int(const std::string& key, long long fallback) const {
    return has(key) ? to_int(key, values_.at(key)) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw DataError("config key '" + key + "': expected boolean, got '" + v + "'");
  }

  /// Serializes keys in sorted order; parse(to_string()) reproduces the map.
  std::string to_string() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write config file " + path);
    out << to_string();
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw DataError("config key '" + key + "': expected number, got '" + v + "'");
    }
  }

  static long long to_int(const std::string& key, const std::string& v) {
    long long x = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw DataError("config key '" + key + "': expected integer, got '" + v + "'");
    }
    return x;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace svw
