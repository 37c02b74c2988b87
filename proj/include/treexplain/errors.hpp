#pragma once

#include <stdexcept>
#include <string>

namespace treexplain {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Schema file is malformed or inconsistent with the table header.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A cell or token could not be parsed. Messages carry row/column context.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Parsed data violates a declared domain (non-finite value, treatment level
// outside its cardinality, empty table, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// An operation was called with arguments outside its contract.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A serialized model is malformed, truncated, or has an unsupported version.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A request exceeds a hard capacity limit (e.g. exhaustive enumeration width).
class CapacityError : public Error {
 public:
  using Error::Error;
};

}  // namespace treexplain
