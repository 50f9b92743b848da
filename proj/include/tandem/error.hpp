#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace tandem {

enum class ErrorCode {
  // data
  malformed_row,
  duplicate_id,
  non_finite_value,
  too_few_samples,
  empty_intersection,
  dimension_mismatch,
  degenerate_input,
  batch_too_small,
  degenerate_polygon,
  missing_score,
  single_class,
  empty_dataset,
  infeasible_scene,
  invalid_argument,
  io_failure,
  input_drift,
  // numerical
  divergence,
  // configuration
  config,
};

enum class ErrorCategory { config, data, numerical };

inline ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
      return ErrorCategory::config;
    case ErrorCode::divergence:
      return ErrorCategory::numerical;
    default:
      return ErrorCategory::data;
  }
}

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::malformed_row: return "MalformedRow";
    case ErrorCode::duplicate_id: return "DuplicateId";
    case ErrorCode::non_finite_value: return "NonFiniteValue";
    case ErrorCode::too_few_samples: return "TooFewSamples";
    case ErrorCode::empty_intersection: return "EmptyIntersection";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::degenerate_input: return "DegenerateInput";
    case ErrorCode::batch_too_small: return "BatchTooSmall";
    case ErrorCode::degenerate_polygon: return "DegeneratePolygon";
    case ErrorCode::missing_score: return "MissingScore";
    case ErrorCode::single_class: return "SingleClass";
    case ErrorCode::empty_dataset: return "EmptyDataset";
    case ErrorCode::infeasible_scene: return "InfeasibleScene";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::io_failure: return "IoFailure";
    case ErrorCode::input_drift: return "InputDrift";
    case ErrorCode::divergence: return "Divergence";
    case ErrorCode::config: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `row` carries the offending row
/// (CSV ingestion) or epoch (training divergence) when one applies.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::optional<std::size_t> row = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), row_(row) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> row_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace tandem
