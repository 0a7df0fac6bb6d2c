#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

namespace privq {

enum class ErrorCode {
  kInvalidArgument,
  kUnreachable,
  kRateLimited,
  kMalformedResponse,
  kHttpError,
  kPrivacyViolation,
  kTrustViolation,
  kDimensionMismatch,
  kZeroVector,
  kPartialFailure,
  kParseFailure,
  kMissingReference,
  kCandidateDropped,
  kAttackerNotUpdated,
  kUnresolvedQueryId,
  kInsufficientDecoys,
  kUnrankedPool,
  kUnparseableScore,
  kConfigInvalid,
  kSnapshotMismatch,
  kIo,
};

inline std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class PartialFailure : public Error {
 public:
  PartialFailure(std::set<int> failed, const std::string& message)
      : Error(ErrorCode::kPartialFailure, message), failed_(std::move(failed)) {}

  const std::set<int>& failed_indices() const noexcept { return failed_; }

 private:
  std::set<int> failed_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kUnreachable: return "Unreachable";
    case ErrorCode::kRateLimited: return "RateLimited";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kHttpError: return "HttpError";
    case ErrorCode::kPrivacyViolation: return "PrivacyViolation";
    case ErrorCode::kTrustViolation: return "TrustViolation";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kPartialFailure: return "PartialFailure";
    case ErrorCode::kParseFailure: return "ParseFailure";
    case ErrorCode::kMissingReference: return "MissingReference";
    case ErrorCode::kCandidateDropped: return "CandidateDropped";
    case ErrorCode::kAttackerNotUpdated: return "AttackerNotUpdated";
    case ErrorCode::kUnresolvedQueryId: return "UnresolvedQueryId";
    case ErrorCode::kInsufficientDecoys: return "InsufficientDecoys";
    case ErrorCode::kUnrankedPool: return "UnrankedPool";
    case ErrorCode::kUnparseableScore: return "UnparseableScore";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kSnapshotMismatch: return "SnapshotMismatch";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace privq
