#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emutriage/error.hpp"

namespace emutriage {

/// One recorded API invocation. `count` > 1 when the emulator pre-aggregates
/// repeated calls.
struct ApiCallRecord {
  std::string api_name;
  std::vector<std::string> args;
  std::uint64_t count = 1;

  bool operator==(const ApiCallRecord&) const = default;
};

enum class ExitKind { graceful, timeout, crash };

std::string_view to_string(ExitKind kind) noexcept;

struct EmulationReport {
  std::string sample_id;  // sha256 of the binary, lowercase hex
  std::vector<ApiCallRecord> calls;
  ExitKind exit_kind = ExitKind::graceful;
  double duration_s = 0.0;

  bool operator==(const EmulationReport&) const = default;
};

struct ReportLimits {
  double timeout_s = 60.0;  // emulator wall-clock budget
};

/// Parses and validates one report document. Call order is preserved.
/// Throws Error{MalformedJson | SchemaViolation | InvalidDigest}.
EmulationReport parse_report(std::string_view raw, const ReportLimits& limits = {});

std::string serialize_report(const EmulationReport& report);

enum class SampleClass { benign, malicious };

std::string_view to_string(SampleClass cls) noexcept;
std::optional<SampleClass> parse_sample_class(std::string_view text) noexcept;

inline constexpr std::string_view kBenignFamily = "Benign";
inline constexpr std::string_view kUnknownFamily = "Unknown";

struct ManifestEntry {
  std::string sample_id;
  SampleClass cls = SampleClass::malicious;
  std::string family;
  std::string report_path;
  std::optional<std::string> binary_path;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
};

/// CSV with header `sample_id,class,family,report_path,binary_path`.
CorpusManifest parse_manifest(std::string_view csv_text);
CorpusManifest read_manifest(const std::filesystem::path& path);
std::string write_manifest(const CorpusManifest& manifest);

struct CorpusEntry {
  EmulationReport report;
  SampleClass cls = SampleClass::malicious;
  std::string family;
  std::optional<std::filesystem::path> binary_path;  // resolved
};

struct LoadFailure {
  std::string sample_id;
  ErrorCode code;
  std::string message;
};

struct Corpus {
  std::vector<CorpusEntry> entries;
  std::vector<LoadFailure> failures;
};

struct LoadOptions {
  bool strict = false;
  ReportLimits limits;
  unsigned jobs = 1;
};

/// Report paths resolve against `report_root`; binary paths against the
/// manifest's directory. In lenient mode per-entry failures are collected in
/// `Corpus::failures`; in strict mode the first one is thrown.
Corpus load_corpus(const std::filesystem::path& manifest_path,
                   const std::filesystem::path& report_root, const LoadOptions& options = {});

struct CorpusStats {
  std::size_t n_benign = 0;
  std::size_t n_malicious = 0;
  std::map<std::string, std::size_t> families;
  double mean_duration_s = 0.0;
};

CorpusStats corpus_stats(const Corpus& corpus);

// Reference corpus size of the original study; documentation only.
inline constexpr std::size_t kReferenceMalicious = 70'477;
inline constexpr std::size_t kReferenceBenign = 1'059;

}  // namespace emutriage
