#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dendrite {

enum class ErrorCode {
  invalid_params,
  decode_failure,
  empty_foreground,
  degenerate_pattern,
  degenerate_graph,
  insufficient_samples,
  degenerate_covariance,
  dimension_mismatch,
  model_version_missing,
  model_version_mismatch,
  empty_index,
  empty_registry,
  duplicate_tag,
  unknown_record,
  invalid_transition,
  unauthorized,
  forbidden,
  bad_request,
  store_failure,
  store_corruption,
  bind_failure,
};

// Stable kebab-case name used in audit reasons, HTTP error bodies and CLI output.
constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_params: return "invalid-params";
    case ErrorCode::decode_failure: return "decode-failure";
    case ErrorCode::empty_foreground: return "empty-foreground";
    case ErrorCode::degenerate_pattern: return "degenerate-pattern";
    case ErrorCode::degenerate_graph: return "degenerate-graph";
    case ErrorCode::insufficient_samples: return "insufficient-samples";
    case ErrorCode::degenerate_covariance: return "degenerate-covariance";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::model_version_missing: return "model-version-missing";
    case ErrorCode::model_version_mismatch: return "model-version-mismatch";
    case ErrorCode::empty_index: return "empty-index";
    case ErrorCode::empty_registry: return "empty-registry";
    case ErrorCode::duplicate_tag: return "duplicate-tag";
    case ErrorCode::unknown_record: return "unknown-record";
    case ErrorCode::invalid_transition: return "invalid-transition";
    case ErrorCode::unauthorized: return "unauthorized";
    case ErrorCode::forbidden: return "forbidden";
    case ErrorCode::bad_request: return "bad-request";
    case ErrorCode::store_failure: return "store-failure";
    case ErrorCode::store_corruption: return "store-corruption";
    case ErrorCode::bind_failure: return "bind-failure";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace dendrite
