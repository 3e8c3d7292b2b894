#include "protoalign/error.hpp"

namespace protoalign {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::malformed: return "malformed";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::duplicate_id: return "duplicate_id";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::dim_mismatch: return "dim_mismatch";
    case ErrorCode::unmatched_id: return "unmatched_id";
    case ErrorCode::count_mismatch: return "count_mismatch";
    case ErrorCode::unknown_id: return "unknown_id";
    case ErrorCode::label_out_of_range: return "label_out_of_range";
    case ErrorCode::zero_norm: return "zero_norm";
    case ErrorCode::numeric_failure: return "numeric_failure";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
      return 2;
    case ErrorCode::zero_norm:
    case ErrorCode::numeric_failure:
      return 4;
    default:
      return 3;
  }
}

}  // namespace protoalign
