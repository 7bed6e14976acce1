#pragma once

#include <stdexcept>
#include <string>

namespace safe {

/// Base class for every error raised by the library. `exit_code()` is the
/// process status the CLI reports for this error family.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ArgumentError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Malformed input file (IDX, CSV, checkpoint, report).
class FormatError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Requested work exceeds a configured size cap (players, permutations).
class CapacityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 5; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 6; }
};

/// The class structure of a dataset cannot satisfy a split scheme.
class SplitInfeasibleError : public ArgumentError {
 public:
  SplitInfeasibleError(const std::string& what, int binding_class)
      : ArgumentError(what), binding_class_(binding_class) {}
  int binding_class() const noexcept { return binding_class_; }
  int exit_code() const noexcept override { return 7; }

 private:
  int binding_class_;
};

}  // namespace safe
