#include "emutriage/ingest.hpp"

#include <json.hpp>

#include <numeric>
#include <unordered_set>

#include "emutriage/digest.hpp"
#include "emutriage/io.hpp"
#include "emutriage/parallel.hpp"

namespace emutriage {

using nlohmann::ordered_json;

std::string_view to_string(ExitKind kind) noexcept {
  switch (kind) {
    case ExitKind::graceful: return "graceful";
    case ExitKind::timeout: return "timeout";
    case ExitKind::crash: return "crash";
  }
  return "graceful";
}

std::string_view to_string(SampleClass cls) noexcept {
  return cls == SampleClass::benign ? "benign" : "malicious";
}

std::optional<SampleClass> parse_sample_class(std::string_view text) noexcept {
  if (text == "benign") return SampleClass::benign;
  if (text == "malicious") return SampleClass::malicious;
  return std::nullopt;
}

namespace {

[[noreturn]] void violation(std::string field) {
  throw Error(ErrorCode::SchemaViolation, std::move(field));
}

ApiCallRecord parse_call(const ordered_json& node, const std::string& where) {
  if (!node.is_object()) violation(where);
  ApiCallRecord call;

  auto name = node.find("api_name");
  if (name == node.end() || !name->is_string()) violation(where + ".api_name");
  call.api_name = name->get<std::string>();
  if (call.api_name.empty()) violation(where + ".api_name");

  if (auto args = node.find("args"); args != node.end()) {
    if (!args->is_array()) violation(where + ".args");
    call.args.reserve(args->size());
    for (std::size_t i = 0; i < args->size(); ++i) {
      const auto& arg = (*args)[i];
      if (!arg.is_string()) violation(where + ".args[" + std::to_string(i) + "]");
      call.args.push_back(arg.get<std::string>());
    }
  }

  if (auto count = node.find("count"); count != node.end()) {
    if (!count->is_number_integer()) violation(where + ".count");
    if (count->is_number_unsigned()) {
      call.count = count->get<std::uint64_t>();
    } else {
      const auto signed_count = count->get<std::int64_t>();
      if (signed_count < 1) violation(where + ".count");
      call.count = static_cast<std::uint64_t>(signed_count);
    }
    if (call.count < 1) violation(where + ".count");
  }
  return call;
}

}  // namespace

EmulationReport parse_report(std::string_view raw, const ReportLimits& limits) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(raw);
  } catch (const ordered_json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  if (!doc.is_object()) violation("<root>");

  EmulationReport report;

  auto id = doc.find("sample_id");
  if (id == doc.end() || !id->is_string()) violation("sample_id");
  report.sample_id = id->get<std::string>();
  if (!is_lower_hex(report.sample_id, 64)) throw Error(ErrorCode::InvalidDigest, report.sample_id);

  auto exit_kind = doc.find("exit_kind");
  if (exit_kind == doc.end() || !exit_kind->is_string()) violation("exit_kind");
  const auto kind = exit_kind->get<std::string>();
  if (kind == "graceful") {
    report.exit_kind = ExitKind::graceful;
  } else if (kind == "timeout") {
    report.exit_kind = ExitKind::timeout;
  } else if (kind == "crash") {
    report.exit_kind = ExitKind::crash;
  } else {
    violation("exit_kind");
  }

  auto duration = doc.find("duration_s");
  if (duration == doc.end() || !duration->is_number()) violation("duration_s");
  report.duration_s = duration->get<double>();
  if (!(report.duration_s >= 0.0)) violation("duration_s");
  if (report.exit_kind == ExitKind::timeout && report.duration_s > limits.timeout_s) {
    violation("duration_s");
  }

  auto calls = doc.find("calls");
  if (calls == doc.end() || !calls->is_array()) violation("calls");
  report.calls.reserve(calls->size());
  for (std::size_t i = 0; i < calls->size(); ++i) {
    report.calls.push_back(parse_call((*calls)[i], "calls[" + std::to_string(i) + "]"));
  }
  return report;
}

std::string serialize_report(const EmulationReport& report) {
  ordered_json doc;
  doc["sample_id"] = report.sample_id;
  doc["exit_kind"] = to_string(report.exit_kind);
  doc["duration_s"] = report.duration_s;
  auto calls = ordered_json::array();
  for (const auto& call : report.calls) {
    ordered_json node;
    node["api_name"] = call.api_name;
    node["args"] = call.args;
    node["count"] = call.count;
    calls.push_back(std::move(node));
  }
  doc["calls"] = std::move(calls);
  return doc.dump();
}

CorpusManifest parse_manifest(std::string_view csv_text) {
  const auto rows = parse_csv(csv_text);
  if (rows.empty()) violation("manifest header");
  const std::vector<std::string> expected{"sample_id", "class", "family", "report_path", "binary_path"};
  if (rows.front() != expected) violation("manifest header");

  CorpusManifest manifest;
  std::unordered_set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = "manifest line " + std::to_string(r + 1);
    if (row.size() != expected.size()) violation(where);

    ManifestEntry entry;
    entry.sample_id = row[0];
    if (!is_lower_hex(entry.sample_id, 64)) throw Error(ErrorCode::InvalidDigest, entry.sample_id);
    if (!seen.insert(entry.sample_id).second) {
      throw Error(ErrorCode::DuplicateSampleId, entry.sample_id);
    }
    auto cls = parse_sample_class(row[1]);
    if (!cls) violation(where + " class");
    entry.cls = *cls;

    entry.family = row[2];
    if (entry.cls == SampleClass::benign) {
      if (entry.family.empty()) entry.family = kBenignFamily;
      if (entry.family != kBenignFamily) violation(where + " family");
    } else if (entry.family.empty()) {
      entry.family = kUnknownFamily;
    }

    entry.report_path = row[3];
    if (entry.report_path.empty()) violation(where + " report_path");
    if (!row[4].empty()) entry.binary_path = row[4];
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::ManifestMissing, path.string());
  }
  return parse_manifest(read_text_file(path));
}

std::string write_manifest(const CorpusManifest& manifest) {
  std::string out = "sample_id,class,family,report_path,binary_path\n";
  for (const auto& e : manifest.entries) {
    out += e.sample_id;
    out += ',';
    out += to_string(e.cls);
    out += ',';
    out += csv_escape(e.family);
    out += ',';
    out += csv_escape(e.report_path);
    out += ',';
    if (e.binary_path) out += csv_escape(*e.binary_path);
    out += '\n';
  }
  return out;
}

Corpus load_corpus(const std::filesystem::path& manifest_path,
                   const std::filesystem::path& report_root, const LoadOptions& options) {
  const auto manifest = read_manifest(manifest_path);
  const auto manifest_dir = manifest_path.parent_path();

  struct Slot {
    std::optional<CorpusEntry> entry;
    std::optional<LoadFailure> failure;
  };
  std::vector<Slot> slots(manifest.entries.size());

  parallel_for(manifest.entries.size(), options.jobs, [&](std::size_t i) {
    const auto& m = manifest.entries[i];
    const auto report_path = report_root / m.report_path;
    try {
      if (!std::filesystem::is_regular_file(report_path)) {
        throw Error(ErrorCode::ReportMissing, m.sample_id);
      }
      auto report = parse_report(read_text_file(report_path), options.limits);
      if (report.sample_id != m.sample_id) {
        throw Error(ErrorCode::SchemaViolation, "sample_id mismatch for " + m.sample_id);
      }
      CorpusEntry entry{std::move(report), m.cls, m.family, std::nullopt};
      if (m.binary_path) entry.binary_path = manifest_dir / *m.binary_path;
      slots[i].entry = std::move(entry);
    } catch (const Error& e) {
      slots[i].failure = LoadFailure{m.sample_id, e.code(), e.detail()};
    }
  });

  Corpus corpus;
  corpus.entries.reserve(slots.size());
  for (auto& slot : slots) {
    if (slot.failure) {
      if (options.strict) throw Error(slot.failure->code, slot.failure->message);
      corpus.failures.push_back(std::move(*slot.failure));
    } else {
      corpus.entries.push_back(std::move(*slot.entry));
    }
  }
  return corpus;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  if (corpus.entries.empty()) throw Error(ErrorCode::EmptyCorpus, "");
  CorpusStats stats;
  double duration_sum = 0.0;
  for (const auto& e : corpus.entries) {
    (e.cls == SampleClass::benign ? stats.n_benign : stats.n_malicious) += 1;
    stats.families[e.family] += 1;
    duration_sum += e.report.duration_s;
  }
  stats.mean_duration_s = duration_sum / static_cast<double>(corpus.entries.size());
  return stats;
}

}  // namespace emutriage
