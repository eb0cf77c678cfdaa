// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>

#include "mope/errors.hpp"

namespace mope {

/// Plain-text `key = value` store. Blank lines and `#` comments are ignored.
/// Readers mark the keys they consume so leftovers can be rejected.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in) {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      kv.set(key, trim(t.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }
  template <typename N>
    requires std::is_arithmetic_v<N>
  void set(const std::string& key, N value) {
    if constexpr (std::is_floating_point_v<N>) {
      std::ostringstream os;
      os.precision(17);
      os << value;
      values_[key] = os.str();
    } else {
      values_[key] = std::to_string(value);
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  /// Fills `out` when the key is present; otherwise leaves the default.
  void read(const std::string& key, std::string& out) const {
    if (auto it = values_.find(key); it != values_.end()) {
      used_.insert(key);
      out = it->second;
    }
  }
  void read(const std::string& key, bool& out) const {
    if (auto it = values_.find(key); it != values_.end()) {
      used_.insert(key);
      if (it->second == "true" || it->second == "1")
        out = true;
      else if (it->second == "false" || it->second == "0")
        out = false;
      else
        throw ConfigError("key '" + key + "': expected true/false, got '" + it->second + "'");
    }
  }
  template <typename N>
    requires std::is_arithmetic_v<N>
  void read(const std::string& key, N& out) const {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    used_.insert(key);
    const std::string& s = it->second;
    N v{};
    bool ok = false;
    if constexpr (std::is_floating_point_v<N>) {
      try {
        std::size_t pos = 0;
        const double d = std::stod(s, &pos);
        ok = pos == s.size();
        v = static_cast<N>(d);
      } catch (const std::exception&) {
        ok = false;
      }
    } else {
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      ok = ec == std::errc() && ptr == s.data() + s.size();
    }
    if (!ok) throw ConfigError("key '" + key + "': cannot parse '" + s + "'");
    out = v;
  }

  /// Throws naming the first key no reader consumed, skipping keys that
  /// start with one of `ignored_prefixes`.
  void reject_unknown(std::initializer_list<std::string_view> ignored_prefixes = {}) const {
    for (const auto& [k, v] : values_) {
      if (used_.count(k)) continue;
      bool ignored = false;
      for (auto p : ignored_prefixes) ignored = ignored || std::string_view(k).starts_with(p);
      if (!ignored) throw ConfigError("unknown config key '" + k + "'");
    }
  }

  void write(std::ostream& os) const {
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  }

  std::string str() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace mope
