#pragma once

#include <stdexcept>
#include <string>

namespace nestcv {

// Base for every error the library raises. Callers that only care whether
// an operation worked can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file or record.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a domain invariant.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Bad arguments or configuration from the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A training backend failed. Retryable from the scheduler's point of view.
class TrainerFailure : public Error {
 public:
  TrainerFailure(const std::string& what, int last_epoch = 0)
      : Error(what), last_epoch_(last_epoch) {}
  int last_epoch() const { return last_epoch_; }

 private:
  int last_epoch_;
};

// An external trainer broke the wire protocol.
class ProtocolError : public TrainerFailure {
 public:
  using TrainerFailure::TrainerFailure;
};

}  // namespace nestcv
