#pragma once

#include <stdexcept>
#include <string>

namespace clip2scene {

// Invalid configuration values (bad sizes, missing sweep 1, non-positive
// cell size, unknown config keys).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string &what) : std::runtime_error(what) {}
};

// Inputs that violate an operation's precondition at run time.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string &what)
      : std::runtime_error(what) {}
};

inline void require_config(bool ok, const std::string &what) {
  if (!ok) throw ConfigError(what);
}

inline void require_valid(bool ok, const std::string &what) {
  if (!ok) throw ValidationError(what);
}

} // namespace clip2scene
