#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace divshape {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation was called outside its documented preconditions.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Input parameters violate a family or construction constraint.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// A nonlinear or linear solve failed. Carries the residual history so far.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}
  const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

/// Malformed configuration, mesh file, or JSON document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace divshape
