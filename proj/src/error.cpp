#include "vocalcode/error.hpp"

namespace vocalcode {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kUnsupportedFormat: return "unsupported_format";
    case ErrorCode::kEmptyData: return "empty_data";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kSequencing: return "sequencing_error";
    case ErrorCode::kQuotaExhausted: return "quota_exhausted";
    case ErrorCode::kDuplicateLabel: return "duplicate_label";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kMismatch: return "mismatch";
  }
  return "unknown";
}

}  // namespace vocalcode
