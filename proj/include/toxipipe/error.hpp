#pragma once

#include <stdexcept>
#include <string>

namespace toxipipe {

// Root of every error the library throws. Callers that only care about
// "something in the pipeline failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file or record.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Input outside the mathematical domain of an operation (zero norm,
// constant vector, empty table...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition (length mismatch, wrong arity...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Referenced entity does not exist (unknown post id, unknown member).
class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace toxipipe
