#pragma once

#include <stdexcept>
#include <string>

namespace distillkit {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A required input or upstream artifact is missing or inconsistent.
// The CLI maps this to exit status 2.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss. The CLI maps this to exit status 3.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace distillkit
