#pragma once

#include <stdexcept>
#include <string>

namespace ghmnet {

enum class ErrorCode {
  invalid_topology,
  no_siblings,
  invalid_params,
  invalid_sample,
  invalid_noise,
  enumeration_limit,
  dimension_mismatch,
  numeric,
  configuration,
  divergence,
  parse,
  io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_topology: return "invalid-topology";
    case ErrorCode::no_siblings: return "no-siblings";
    case ErrorCode::invalid_params: return "invalid-params";
    case ErrorCode::invalid_sample: return "invalid-sample";
    case ErrorCode::invalid_noise: return "invalid-noise";
    case ErrorCode::enumeration_limit: return "enumeration-limit";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::configuration: return "configuration";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Library-wide exception. Every failure carries a machine-readable code so the
/// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace ghmnet
