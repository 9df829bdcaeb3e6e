#pragma once

#include <stdexcept>
#include <string>

namespace latfim {

enum class ErrorKind {
  dimension_mismatch,
  domain_violation,
  asymmetric_input,
  provider_failure,
  singular_fim,
  mstep_failure,
  optim_failure,
  capacity_exceeded,
  non_finite_loglik,
  config_error,
  io_error,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind()` drives CLI exit codes and
// lets tests assert on the failure category.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string component = {})
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        component_(std::move(component)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Offending parameter component, when the error names one.
  const std::string& component() const noexcept { return component_; }

  bool is_config_error() const noexcept {
    return kind_ == ErrorKind::config_error || kind_ == ErrorKind::io_error;
  }

 private:
  ErrorKind kind_;
  std::string component_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension_mismatch: return "DimensionMismatch";
    case ErrorKind::domain_violation: return "DomainViolation";
    case ErrorKind::asymmetric_input: return "AsymmetricInput";
    case ErrorKind::provider_failure: return "ProviderFailure";
    case ErrorKind::singular_fim: return "SingularFim";
    case ErrorKind::mstep_failure: return "MStepFailure";
    case ErrorKind::optim_failure: return "OptimFailure";
    case ErrorKind::capacity_exceeded: return "CapacityExceeded";
    case ErrorKind::non_finite_loglik: return "NonFiniteLoglik";
    case ErrorKind::config_error: return "ConfigError";
    case ErrorKind::io_error: return "IoError";
  }
  return "Unknown";
}

inline Error domain_violation(const std::string& component, const std::string& why) {
  return Error(ErrorKind::domain_violation, component + " " + why, component);
}

}  // namespace latfim
