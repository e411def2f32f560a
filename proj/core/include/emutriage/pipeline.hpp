#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emutriage/datagen.hpp"
#include "emutriage/error.hpp"
#include "emutriage/eval.hpp"
#include "emutriage/features.hpp"
#include "emutriage/select.hpp"
#include "emutriage/unify.hpp"

namespace emutriage {

struct ClusterSettings {
  std::size_t k = 3;
  std::optional<std::pair<std::size_t, std::size_t>> sweep;
};

/// Everything a full run needs. Stage seeds are derived from `seed`, so the
/// per-stage seed fields inside `boruta` and `experiments` are ignored.
struct PipelineConfig {
  std::optional<SynthSpec> synth;  // adds a datagen stage producing the corpus
  std::filesystem::path manifest;  // used when `synth` is empty
  std::filesystem::path reports;
  std::optional<std::filesystem::path> aliases;  // builtin table when empty
  bool select = true;
  bool keep_tentative = false;
  BorutaParams boruta;
  std::vector<ExperimentConfig> experiments;
  bool cluster = true;
  ClusterSettings cluster_settings;
  std::uint64_t seed = 0;
  bool strict = false;
};

struct RunOptions {
  std::filesystem::path out;
  bool force = false;
  unsigned jobs = 1;
};

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // up to date
};

using StageLog = std::function<void(const StageOutcome&)>;

/// Runs datagen (if synthetic) -> ingest -> featurize -> select -> eval ->
/// cluster. Every stage writes <out>/<stage>/stage.json with the hashes of
/// its inputs and outputs; a stage whose config hash and file hashes still
/// match is skipped unless `force`.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, const RunOptions& options,
                                       const StageLog& log = {});

/// Relative paths in the config are resolved against `base_dir`.
/// Throws ConfigError / MalformedJson.
PipelineConfig pipeline_config_from_json(std::string_view text, const std::filesystem::path& base_dir);

/// Default run for a datagen preset: binary protocols on the selected
/// matrix, multiclass and clustering when the preset has >= 3 families.
PipelineConfig preset_pipeline_config(std::string_view preset_name, std::uint64_t seed);

/// SHA-256 over canonical JSON of the config; equal configs hash equal.
std::string config_hash(const PipelineConfig& config);

/// Resolves the alias table: builtin when `path` is empty, otherwise the
/// file, throwing ConfigError naming the path when it is missing.
AliasTable resolve_aliases(const std::optional<std::filesystem::path>& path);

/// SHA-256 of a file, or of the sorted (relative path, file digest) list of
/// a directory tree.
std::string tree_hash(const std::filesystem::path& path);

// Stage bodies, shared with the individual CLI subcommands.

/// Carries the name of the stage that failed.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause) : Error(cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

std::string ingest_summary_json(const Corpus& corpus, const Provenance& provenance);

/// Featurizes a corpus and appends one indicator column per imphash digest
/// read from each entry's binary. Unreadable binaries are skipped, or
/// rethrown when `strict`.
FeatureSet featurize_with_imphash(const Corpus& corpus, const AliasTable& aliases, bool strict, unsigned jobs,
                                  std::vector<std::string>* warnings = nullptr);

FeatureSet select_feature_set(const FeatureSet& set, const BorutaDecision& decision, bool keep_tentative,
                              std::vector<std::string>* warnings = nullptr);

/// Runs one protocol on a feature set (binary protocols use class labels,
/// multiclass uses family labels).
EvalReport run_protocol(const FeatureSet& set, const ExperimentConfig& config);

/// Writes <dir>/<protocol>.json and one confusion CSV per model.
void write_eval_outputs(const std::filesystem::path& dir, const EvalReport& report, const Provenance& provenance);

}  // namespace emutriage
