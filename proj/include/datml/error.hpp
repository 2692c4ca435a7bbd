#pragma once

#include <stdexcept>
#include <string>

#include "datml/compute/scalar.hpp"

namespace datml::inline DATML_ABI {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (wrong shape, non-scalar loss...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Input data or configuration is malformed.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A parameter expected to carry a gradient has none.
class MissingGradient : public Error {
 public:
  explicit MissingGradient(const std::string& name)
      : Error("parameter '" + name + "' has no gradient"), name_(name) {}
  const std::string& parameter() const { return name_; }

 private:
  std::string name_;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace datml::inline DATML_ABI
