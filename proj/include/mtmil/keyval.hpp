#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "mtmil/error.hpp"

namespace mtmil {

// Flat key-value config file, TOML syntax restricted to scalars and
// one-dimensional arrays. `key = value` per line, `#` comments.
struct KeyValueFile {
  using Value = std::variant<bool, double, std::string,
                             std::vector<double>, std::vector<std::string>>;
  std::map<std::string, Value> entries;

  static KeyValueFile parse(const std::string& text);
  static KeyValueFile load(const std::string& path);

  bool has(const std::string& key) const { return entries.count(key) > 0; }

  double number(const std::string& key, double fallback) const;
  std::int64_t integer(const std::string& key, std::int64_t fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  std::vector<double> numbers(const std::string& key) const;
  std::vector<std::string> strings(const std::string& key) const;

  // Throws ConfigError naming the first key not in `known`.
  void reject_unknown(const std::vector<std::string>& known) const;
};

}  // namespace mtmil
