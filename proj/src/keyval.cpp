#include "mtmil/keyval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mtmil {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& s, double& out) {
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (...) {
    return false;
  }
  return used == s.size();
}

std::vector<std::string> split_array_items(const std::string& inner) {
  std::vector<std::string> items;
  std::string cur;
  bool in_string = false;
  for (const char c : inner) {
    if (c == '"') in_string = !in_string;
    if (c == ',' && !in_string) {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  const auto last = trim(cur);
  if (!last.empty()) items.push_back(last);
  return items;
}

KeyValueFile::Value parse_value(const std::string& raw,
                                const std::string& key) {
  if (raw.empty())
    throw Error(ErrorCode::ConfigError, "empty value for key " + key);
  if (raw == "true") return true;
  if (raw == "false") return false;
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"')
      throw Error(ErrorCode::ConfigError, "unterminated string for " + key);
    return raw.substr(1, raw.size() - 2);
  }
  if (raw.front() == '[') {
    if (raw.back() != ']')
      throw Error(ErrorCode::ConfigError, "unterminated array for " + key);
    const auto items = split_array_items(raw.substr(1, raw.size() - 2));
    if (items.empty()) return std::vector<double>{};
    if (items.front().front() == '"') {
      std::vector<std::string> out;
      for (const auto& it : items) {
        if (it.size() < 2 || it.front() != '"' || it.back() != '"')
          throw Error(ErrorCode::ConfigError, "bad string array for " + key);
        out.push_back(it.substr(1, it.size() - 2));
      }
      return out;
    }
    std::vector<double> out;
    for (const auto& it : items) {
      double v;
      if (!parse_number(it, v))
        throw Error(ErrorCode::ConfigError, "bad number in array for " + key);
      out.push_back(v);
    }
    return out;
  }
  double v;
  if (parse_number(raw, v)) return v;
  throw Error(ErrorCode::ConfigError, "cannot parse value for " + key);
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text) {
  KeyValueFile out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped;
    bool in_string = false;
    for (const char c : line) {
      if (c == '"') in_string = !in_string;
      if (c == '#' && !in_string) break;
      stripped += c;
    }
    stripped = trim(stripped);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::ConfigError,
                  "missing '=' on line " + std::to_string(lineno));
    const auto key = trim(stripped.substr(0, eq));
    if (key.empty())
      throw Error(ErrorCode::ConfigError,
                  "missing key on line " + std::to_string(lineno));
    if (out.entries.count(key))
      throw Error(ErrorCode::ConfigError, "duplicate key " + key);
    out.entries.emplace(key, parse_value(trim(stripped.substr(eq + 1)), key));
  }
  return out;
}

KeyValueFile KeyValueFile::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

double KeyValueFile::number(const std::string& key, double fallback) const {
  const auto it = entries.find(key);
  if (it == entries.end()) return fallback;
  if (const auto* v = std::get_if<double>(&it->second)) return *v;
  throw Error(ErrorCode::ConfigError, "key " + key + " is not a number");
}

std::int64_t KeyValueFile::integer(const std::string& key,
                                  std::int64_t fallback) const {
  const double v = number(key, static_cast<double>(fallback));
  if (std::floor(v) != v)
    throw Error(ErrorCode::ConfigError, "key " + key + " is not an integer");
  return static_cast<std::int64_t>(v);
}

bool KeyValueFile::boolean(const std::string& key, bool fallback) const {
  const auto it = entries.find(key);
  if (it == entries.end()) return fallback;
  if (const auto* v = std::get_if<bool>(&it->second)) return *v;
  throw Error(ErrorCode::ConfigError, "key " + key + " is not a boolean");
}

std::string KeyValueFile::string(const std::string& key,
                                 const std::string& fallback) const {
  const auto it = entries.find(key);
  if (it == entries.end()) return fallback;
  if (const auto* v = std::get_if<std::string>(&it->second)) return *v;
  throw Error(ErrorCode::ConfigError, "key " + key + " is not a string");
}

std::vector<double> KeyValueFile::numbers(const std::string& key) const {
  const auto it = entries.find(key);
  if (it == entries.end()) return {};
  if (const auto* v = std::get_if<std::vector<double>>(&it->second)) return *v;
  if (const auto* s = std::get_if<double>(&it->second)) return {*s};
  throw Error(ErrorCode::ConfigError, "key " + key + " is not a number array");
}

std::vector<std::string> KeyValueFile::strings(const std::string& key) const {
  const auto it = entries.find(key);
  if (it == entries.end()) return {};
  if (const auto* v = std::get_if<std::vector<std::string>>(&it->second))
    return *v;
  if (const auto* s = std::get_if<std::string>(&it->second)) return {*s};
  throw Error(ErrorCode::ConfigError, "key " + key + " is not a string array");
}

void KeyValueFile::reject_unknown(const std::vector<std::string>& known) const {
  for (const auto& [key, value] : entries)
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error(ErrorCode::ConfigError, "unknown config key " + key);
}

}  // namespace mtmil
