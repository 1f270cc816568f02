#pragma once

#include <initializer_list>
#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace stforge::util {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws ConfigError if `j` is not an object or holds a key outside `allowed`.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                               const std::string& where) {
  if (!j.is_object()) {
    throw ConfigError(where + ": expected a JSON object");
  }
  std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

/// Reads `key` into `out` if present, with a typed error message.
template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type (" + it->dump() + ")");
  }
}

}  // namespace stforge::util
