#include "memesearch/error.hpp"

namespace memesearch {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kMissingField: return "missing_field";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kEmptyClass: return "empty_class";
    case ErrorCode::kClassTooSmall: return "class_too_small";
    case ErrorCode::kInsufficientPairs: return "insufficient_pairs";
    case ErrorCode::kLengthMismatch: return "length_mismatch";
    case ErrorCode::kRelevantMissing: return "relevant_missing";
    case ErrorCode::kNoOverlap: return "no_overlap";
    case ErrorCode::kAllTokensUnknown: return "all_tokens_unknown";
    case ErrorCode::kEmptyItems: return "empty_items";
    case ErrorCode::kImageTooSmall: return "image_too_small";
    case ErrorCode::kNonFiniteLoss: return "non_finite_loss";
  }
  return "unknown";
}

int exit_status(ErrorCode code) {
  return code == ErrorCode::kNonFiniteLoss ? 3 : 2;
}

namespace {

std::string unknown_tokens_message(const std::vector<std::string>& tokens) {
  std::string msg = "no token has a word vector; dropped:";
  for (const auto& t : tokens) msg += " \"" + t + "\"";
  if (tokens.empty()) msg += " (none)";
  return msg;
}

}  // namespace

UnknownTokensError::UnknownTokensError(std::vector<std::string> tokens)
    : Error(ErrorCode::kAllTokensUnknown, unknown_tokens_message(tokens)),
      tokens_(std::move(tokens)) {}

}  // namespace memesearch
