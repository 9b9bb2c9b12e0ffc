#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace coopk {

enum class ErrorKind {
  Parse,
  Validation,
  UninitialisedRead,
  OutOfBoundsAccess,
  DivisionByZero,
  DivergentWorkgroupOp,
  NonUniformReach,
  ForkBoundExceeded,
  BarrierDivergence,
  NotEnabled,
  RejectedNoCapacity,
  NotYetSatisfied,
  Deadlock,
  StepBudgetExceeded,
  MismatchedOutputs,
  InvalidInterval,
  InvalidConfig,
  MissingData,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::Validation: return "ValidationError";
    case ErrorKind::UninitialisedRead: return "UninitialisedRead";
    case ErrorKind::OutOfBoundsAccess: return "OutOfBoundsAccess";
    case ErrorKind::DivisionByZero: return "DivisionByZero";
    case ErrorKind::DivergentWorkgroupOp: return "DivergentWorkgroupOp";
    case ErrorKind::NonUniformReach: return "NonUniformReach";
    case ErrorKind::ForkBoundExceeded: return "ForkBoundExceeded";
    case ErrorKind::BarrierDivergence: return "BarrierDivergence";
    case ErrorKind::NotEnabled: return "NotEnabled";
    case ErrorKind::RejectedNoCapacity: return "RejectedNoCapacity";
    case ErrorKind::NotYetSatisfied: return "NotYetSatisfied";
    case ErrorKind::Deadlock: return "DeadlockDetected";
    case ErrorKind::StepBudgetExceeded: return "StepBudgetExceeded";
    case ErrorKind::MismatchedOutputs: return "MismatchedOutputs";
    case ErrorKind::InvalidInterval: return "InvalidInterval";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::MissingData: return "MissingData";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(int line, int column, const std::string& msg)
      : Error(ErrorKind::Parse,
              "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + msg),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace coopk
