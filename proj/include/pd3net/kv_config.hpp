// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

// Plain-text `key = value` configuration files. '#' starts a comment.

#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "pd3net/error.hpp"

namespace pd3net {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValueConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string text = trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) {
        throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(text.substr(0, eq));
      if (key.empty()) throw FormatError(origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(text.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  template <class T>
  void read(const std::string& key, T& out) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return;
    std::istringstream ss(it->second);
    T v{};
    ss >> v;
    if (ss.fail() || !(ss >> std::ws).eof()) {
      throw FormatError("config key '" + key + "' has invalid value '" + it->second + "'");
    }
    out = v;
  }

  void read(const std::string& key, std::string& out) const {
    if (const auto it = values_.find(key); it != values_.end()) out = it->second;
  }

  void write(std::ostream& os) const {
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace pd3net
