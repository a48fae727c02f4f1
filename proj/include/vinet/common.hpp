#pragma once

#include <stdexcept>
#include <string>

namespace vinet {

// Error taxonomy shared by the library, the C API and the CLI.
// std::invalid_argument is used directly for precondition violations.

/// A file could not be opened, read or written.
class FileError : public std::runtime_error {
 public:
  explicit FileError(const std::string& what) : std::runtime_error(what) {}
};

/// A file exists but its contents do not match the expected format.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// A numeric computation produced NaN/Inf or otherwise left its domain.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Input that is syntactically fine but geometrically degenerate
/// (e.g. a zero vector where a direction is required).
class DegenerateInput : public std::runtime_error {
 public:
  explicit DegenerateInput(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vinet
