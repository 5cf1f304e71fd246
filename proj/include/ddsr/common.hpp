#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddsr {

using ItemIndex = std::int32_t;
using Code = std::int32_t;

/// A semantic ID: one code per position, each in [0, K).
using SemanticId = std::vector<Code>;

inline constexpr ItemIndex kNoItem = -1;

/// Base of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A required artifact is missing (exit code 3).
class DependencyError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Inputs are well-formed but unusable (e.g. nothing survives filtering).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or violated numeric invariants.
class NumericError : public Error {
 public:
  using Error::Error;
};

#define DDSR_REQUIRE(cond, ExceptionType, msg) \
  do {                                         \
    if (!(cond)) throw ExceptionType(msg);     \
  } while (false)

}  // namespace ddsr
