#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace salab {

/// Failure classes. Each maps one-to-one onto a C API status code and a CLI
/// exit code.
enum class ErrorCode {
  kInvalidArgument = 1,
  kShape,
  kOutOfRange,
  kEmpty,
  kConfig,
  kIo,
  kPoisonedGradient,
  kUndefinedMetric,
  kFormat,
  kCapacity,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

/// Warnings go to stderr by default. Passing an empty sink restores that.
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace salab
