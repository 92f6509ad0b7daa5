#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace memesearch {

enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kParse,
  kDuplicateId,
  kMissingField,
  kDimensionMismatch,
  kNonFinite,
  kEmptyClass,
  kClassTooSmall,
  kInsufficientPairs,
  kLengthMismatch,
  kRelevantMissing,
  kNoOverlap,
  kAllTokensUnknown,
  kEmptyItems,
  kImageTooSmall,
  kNonFiniteLoss,
};

const char* error_code_name(ErrorCode code);

// Process exit status for an error: 2 for data problems, 3 for numeric
// failures during optimization.
int exit_status(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised when none of a caption's tokens has a word vector. Carries the
// dropped tokens so callers can report them.
class UnknownTokensError : public Error {
 public:
  explicit UnknownTokensError(std::vector<std::string> tokens);

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
};

}  // namespace memesearch
