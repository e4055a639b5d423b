#pragma once

#include <stdexcept>
#include <string>

namespace strod {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class NotALeafError : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

class NotExpandedError : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

class IngestError : public Error {
 public:
  IngestError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// A node cannot be expanded (no eligible documents, rank deficiency, ...).
class DegenerateNodeError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public DegenerateNodeError {
 public:
  using DegenerateNodeError::DegenerateNodeError;
};

class InvalidEigenvalueError : public Error {
 public:
  using Error::Error;
};

/// Requested branching exceeds the tree width K.
class WidthBoundError : public Error {
 public:
  using Error::Error;
};

/// Two trees (or a tree and a request) disagree on shape.
class StructuralError : public Error {
 public:
  using Error::Error;
};

}  // namespace strod
