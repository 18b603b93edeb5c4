#pragma once

#include <stdexcept>
#include <string>

namespace cardiofuse {

// A non-finite value appeared in a forward or backward computation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// A file on disk does not match its expected layout.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cardiofuse
