#pragma once

#include <stdexcept>
#include <string>

namespace pscore {

enum class ErrorCode {
  kInvalidArgument = 1,
  kShape,
  kNumeric,
  kState,
  kIo,
  kParse,
  kConfig,
  kMismatch,
};

// Every failure raised by the library carries a code so the C boundary can
// translate it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pscore
