#pragma once

#include <stdexcept>
#include <string>

namespace siap {

/// Coarse failure category; the CLI maps it onto its exit codes.
enum class ErrorKind {
  Config,     // malformed run configuration
  Data,       // bad input data: shapes, parse failures, empty observations
  Numerical,  // singular systems, divergence, violated convergence guarantees
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  virtual const char* type_name() const noexcept { return "error"; }

 private:
  ErrorKind kind_;
};

#define SIAP_DEFINE_ERROR(Name, Kind, Label)                              \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    const char* type_name() const noexcept override { return Label; }     \
  };

SIAP_DEFINE_ERROR(DimensionError, Data, "dimension_error")
SIAP_DEFINE_ERROR(FormatError, Data, "format_error")
SIAP_DEFINE_ERROR(ParseError, Data, "parse_error")
SIAP_DEFINE_ERROR(InputError, Data, "input_error")
SIAP_DEFINE_ERROR(ParameterError, Config, "parameter_error")
SIAP_DEFINE_ERROR(ConfigError, Config, "config_error")
SIAP_DEFINE_ERROR(ConditioningError, Numerical, "conditioning_error")
SIAP_DEFINE_ERROR(DivergenceError, Numerical, "divergence_error")
SIAP_DEFINE_ERROR(InternalError, Numerical, "internal_error")
SIAP_DEFINE_ERROR(ClassificationError, Data, "classification_error")

#undef SIAP_DEFINE_ERROR

}  // namespace siap
