#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cdl {

// Process exit codes shared by the CLI and the error hierarchy.
enum class ExitCode : int {
  ok = 0,
  iteration_capped = 1,  // train only: stopped by K, not by |dC| < eps
  validation = 2,
  numerical = 3,
  io = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(ExitCode::validation, msg) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& msg) : Error(ExitCode::numerical, msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(ExitCode::io, msg) {}
};

// Training blew up; carries where it happened and the cost curve up to that point.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(int iteration, std::vector<double> history, const std::string& msg)
      : NumericalError(msg), iteration_(iteration), history_(std::move(history)) {}
  int iteration() const { return iteration_; }
  const std::vector<double>& history() const { return history_; }

 private:
  int iteration_;
  std::vector<double> history_;
};

class DegenerateBatchError : public NumericalError {
 public:
  explicit DegenerateBatchError(const std::string& msg) : NumericalError(msg) {}
};

class InsufficientOverlapError : public NumericalError {
 public:
  explicit InsufficientOverlapError(const std::string& msg) : NumericalError(msg) {}
};

}  // namespace cdl
