#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/map_store.hpp"

namespace liloc {

struct KeyValueEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Flat `key = value` text with `#` comments. Keys may repeat; order is kept.
inline std::vector<KeyValueEntry> parse_key_values(std::istream& in) {
  std::vector<KeyValueEntry> out;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string_view s = detail::trim(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseError(line, "expected `key = value`");
    KeyValueEntry e{std::string(detail::trim(s.substr(0, eq))), std::string(detail::trim(s.substr(eq + 1))), line};
    if (e.key.empty()) throw ParseError(line, "empty key");
    if (e.value.empty()) throw ParseError(line, "empty value for key '" + e.key + "'");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<KeyValueEntry> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  try {
    return parse_key_values(in);
  } catch (const ParseError& e) {
    throw Error(Errc::ParseError, path + ", " + e.what());
  }
}

/// Dispatches entries to typed setters; unknown keys are rejected.
class KeyValueBinder {
 public:
  using Setter = std::function<void(const KeyValueEntry&)>;

  KeyValueBinder& on(const std::string& key, Setter s) {
    setters_[key] = std::move(s);
    return *this;
  }

  KeyValueBinder& number(const std::string& key, double& target) {
    return on(key, [&target](const KeyValueEntry& e) { target = as_number(e); });
  }

  KeyValueBinder& integer(const std::string& key, int& target) {
    return on(key, [&target](const KeyValueEntry& e) {
      const double v = as_number(e);
      if (v != static_cast<double>(static_cast<int>(v))) throw ParseError(e.line, "'" + e.key + "' must be an integer");
      target = static_cast<int>(v);
    });
  }

  KeyValueBinder& flag(const std::string& key, bool& target) {
    return on(key, [&target](const KeyValueEntry& e) {
      if (e.value == "true" || e.value == "1") target = true;
      else if (e.value == "false" || e.value == "0") target = false;
      else throw ParseError(e.line, "'" + e.key + "' must be true or false");
    });
  }

  void apply(const std::vector<KeyValueEntry>& entries) const {
    for (const auto& e : entries) {
      const auto it = setters_.find(e.key);
      if (it == setters_.end()) throw ParseError(e.line, "unknown key '" + e.key + "'");
      it->second(e);
    }
  }

  static std::vector<double> as_numbers(const KeyValueEntry& e) {
    std::vector<double> v;
    if (!detail::parse_doubles(e.value, v)) throw ParseError(e.line, "'" + e.key + "' expects numbers");
    return v;
  }

  static std::vector<double> as_numbers(const KeyValueEntry& e, std::size_t count) {
    auto v = as_numbers(e);
    if (v.size() != count)
      throw ParseError(e.line, "'" + e.key + "' expects " + std::to_string(count) + " numbers");
    return v;
  }

  static double as_number(const KeyValueEntry& e) { return as_numbers(e, 1)[0]; }

 private:
  std::map<std::string, Setter> setters_;
};

}  // namespace liloc
