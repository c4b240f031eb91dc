#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vocalcode {

// Failure categories shared by the library, the HTTP service and the CLI.
// The service maps them onto status codes, the CLI onto exit statuses.
enum class ErrorCode {
  kInvalidArgument,   // caller passed something malformed
  kOutOfRange,        // index/time range outside the data
  kIo,                // file could not be opened, read or written
  kUnsupportedFormat, // container/codec we do not decode
  kEmptyData,         // zero-length payload or empty sample
  kNotFound,          // unknown session/item/segment
  kSequencing,        // operation out of workflow order
  kQuotaExhausted,    // play budget used up
  kDuplicateLabel,    // item already labeled by this coder
  kDegenerate,        // statistic undefined for this input
  kMismatch,          // paired inputs do not line up
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vocalcode
