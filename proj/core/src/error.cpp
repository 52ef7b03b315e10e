#include "markovgen/error.hpp"

namespace markovgen {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kNonFinite: return "non-finite entry";
    case ErrorCode::kNotNormalized: return "row not normalized";
    case ErrorCode::kLabelOutOfRange: return "label out of range";
    case ErrorCode::kIndexOutOfRange: return "index out of range";
    case ErrorCode::kInstanceTooLarge: return "instance too large";
    case ErrorCode::kMalformedFile: return "malformed file";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kConfig: return "config error";
  }
  return "unknown error";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(detail.empty()
                             ? std::string(to_string(code))
                             : std::string(to_string(code)) + ": " + detail),
      code_(code) {}

void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

}  // namespace markovgen
