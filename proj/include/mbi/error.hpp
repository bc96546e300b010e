#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mbi {

enum class ErrorCode {
  // tensorcore
  UnboundVariable,
  NonFiniteResult,
  StaleCache,
  ShapeMismatch,
  UnknownFunction,
  // ddag
  CycleDetected,
  MultipleLossNodes,
  NoLossNode,
  DanglingEdge,
  InvalidGraph,
  // agent
  NonFiniteAction,
  NonConvexCost,
  MissingCost,
  // mechanism
  NonFiniteLoss,
  UnknownAgent,
  // bayes
  InvalidPrior,
  SCCViolation,
  // oracle
  GridTooLarge,
  NonPositiveLambda,
  // scenarios / cli
  UnknownScenario,
  InvalidConfig,
  ParseError,
  UnknownKey,
  TypeMismatch,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one ErrorCode so callers can
/// branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mbi
