#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace blobbench {

enum class ErrorCode {
  kConfig,     // bad parameters, malformed config files
  kVolumeFull, // allocation could not be satisfied from committed free space
  kNotFound,   // unknown object id
  kInvariant,  // internal bookkeeping broken (double free, negative counters)
  kIo,         // host I/O failure
  kCorrupt,    // on-disk structure failed validation
  kRefused,    // operation declined by a precondition (e.g. defrag space check)
  kSchema,     // results file has an unexpected schema version
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

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void check(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace blobbench
