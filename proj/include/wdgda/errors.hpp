#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wdgda {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents disagree with what an op or a network stage expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Domain violations (log of a non-positive value) and non-finite results.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Raised when second-order differentiation reaches an op outside the
// certified double-backward set.
class UnsupportedOpError : public Error {
 public:
  using Error::Error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }
  const std::string& detail() const noexcept { return detail_; }
  // Same error with `prefix: ` in front of the message.
  ParseError prefixed(const std::string& prefix) const { return ParseError(prefix + ": " + detail_, offset_); }

 private:
  std::string detail_;
  std::uint64_t offset_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace wdgda
