#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace emutriage {

enum class ErrorCode {
  MalformedJson,
  SchemaViolation,
  InvalidDigest,
  ManifestMissing,
  DuplicateSampleId,
  ReportMissing,
  EmptyCorpus,
  NotPe,
  TruncatedHeader,
  MalformedImportDirectory,
  LengthMismatch,
  EmptyMatrix,
  SingleClass,
  TooFewRows,
  DecisionMismatch,
  TooFewNeighbors,
  WidthMismatch,
  KTooLarge,
  InsufficientMalicious,
  NoEligibleFamilies,
  SingleCluster,
  InvalidSpec,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library. `detail()` carries the offending
/// field, sample id or path where one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace emutriage
