#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace markovgen {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNonFinite,
  kNotNormalized,
  kLabelOutOfRange,
  kIndexOutOfRange,
  kInstanceTooLarge,
  kMalformedFile,
  kVersionMismatch,
  kIo,
  kConfig,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above; the
// message starts with the code's canonical phrase ("non-finite entry",
// "row not normalized", ...) followed by context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& detail);

inline void require(bool condition, ErrorCode code, const std::string& detail) {
  if (!condition) fail(code, detail);
}

}  // namespace markovgen
