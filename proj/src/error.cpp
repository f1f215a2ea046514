#include "salab/error.hpp"

#include <iostream>

namespace salab {

namespace {

void stderr_sink(const std::string& message) {
  std::cerr << "warning: " << message << '\n';
}

WarningSink g_sink = stderr_sink;

}  // namespace

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kOutOfRange: return "out-of-range";
    case ErrorCode::kEmpty: return "empty";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kPoisonedGradient: return "poisoned-gradient";
    case ErrorCode::kUndefinedMetric: return "undefined-metric";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kCapacity: return "capacity";
  }
  return "unknown";
}

void set_warning_sink(WarningSink sink) {
  g_sink = sink ? std::move(sink) : WarningSink(stderr_sink);
}

void warn(const std::string& message) { g_sink(message); }

}  // namespace salab
