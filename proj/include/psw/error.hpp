#pragma once

#include <stdexcept>
#include <string>

namespace psw {

/// Invalid shapes, parameters, paths or identifiers supplied by the caller.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A computation produced (or was fed) a NaN/Inf and the update was refused.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// File-system failures; the message always carries the offending path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace psw
