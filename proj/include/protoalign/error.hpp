#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace protoalign {

enum class ErrorCode {
  bad_magic,
  malformed,
  version_mismatch,
  duplicate_id,
  non_finite,
  truncated,
  dim_mismatch,
  unmatched_id,
  count_mismatch,
  unknown_id,
  label_out_of_range,
  zero_norm,
  numeric_failure,
  invalid_argument,
  io_error,
};

std::string_view error_code_name(ErrorCode code);

/// Process exit status for a failure class: 3 for data/format problems,
/// 4 for numeric failures, 2 for bad arguments.
int exit_status(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace protoalign
