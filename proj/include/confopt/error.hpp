#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace confopt {

enum class ErrorCode {
  DegenerateDenominator,
  LayoutMismatch,
  EmptySample,
  GroupOutOfRange,
  DegenerateLoss,
  InvalidData,
  NumericalFailure,
  ZeroCutDirection,
  BudgetExceeded,
  InfeasibleAtGridResolution,
  SchemaError,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace confopt
