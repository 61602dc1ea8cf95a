#pragma once

#include <stdexcept>
#include <string>

namespace sevgrade {

enum class ErrorKind {
  parse,
  leakage,
  capacity,
  config,
  unresolvable_label,
  undefined_metric,
  geometry,
  numeric,
  missing_stage,
  provider,
  io,
};

const char* to_string(ErrorKind kind);

/// Base exception for every failure the library reports. The kind lets the
/// CLI decide between user errors (exit 1) and internal errors (exit 2).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Provider failures may succeed on a later attempt.
  bool retryable() const noexcept { return kind_ == ErrorKind::provider; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& message)
      : Error(ErrorKind::parse,
              "row " + std::to_string(row) + ": " + message),
        row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

}  // namespace sevgrade
