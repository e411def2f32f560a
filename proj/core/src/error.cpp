#include "emutriage/error.hpp"

namespace emutriage {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::InvalidDigest: return "InvalidDigest";
    case ErrorCode::ManifestMissing: return "ManifestMissing";
    case ErrorCode::DuplicateSampleId: return "DuplicateSampleId";
    case ErrorCode::ReportMissing: return "ReportMissing";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::NotPe: return "NotPe";
    case ErrorCode::TruncatedHeader: return "TruncatedHeader";
    case ErrorCode::MalformedImportDirectory: return "MalformedImportDirectory";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::DecisionMismatch: return "DecisionMismatch";
    case ErrorCode::TooFewNeighbors: return "TooFewNeighbors";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::InsufficientMalicious: return "InsufficientMalicious";
    case ErrorCode::NoEligibleFamilies: return "NoEligibleFamilies";
    case ErrorCode::SingleCluster: return "SingleCluster";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

namespace {
std::string format_message(ErrorCode code, const std::string& detail) {
  std::string msg(to_string(code));
  if (!detail.empty()) {
    msg += ": ";
    msg += detail;
  }
  return msg;
}
}  // namespace

Error::Error(ErrorCode code, std::string detail)
    : std::runtime_error(format_message(code, detail)), code_(code), detail_(std::move(detail)) {}

}  // namespace emutriage
