#ifndef RWLANE_ERRORS_HPP
#define RWLANE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rwlane {

/// Operand shapes disagree.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/// A configuration value (or a combination of them) is invalid.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed file, unreadable path, or incompatible payload.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rwlane

#endif  // RWLANE_ERRORS_HPP
