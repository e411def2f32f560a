#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emutriage/features.hpp"
#include "emutriage/ml.hpp"
#include "emutriage/provenance.hpp"
#include "emutriage/rng.hpp"

namespace emutriage {

enum class Protocol { binary_full, binary_balanced, multiclass };

std::string_view to_string(Protocol protocol) noexcept;
/// Accepts "binary_full" and "binary-full" spellings.
Protocol parse_protocol(std::string_view text);
ModelKind parse_model_kind(std::string_view text);

struct ExperimentConfig {
  Protocol protocol = Protocol::binary_full;
  std::size_t folds = 10;
  std::size_t repeats = 3;
  std::size_t family_threshold = 100;
  std::size_t sample_per_family = 100;
  std::uint64_t seed = 0;
  std::vector<ModelKind> models;  // empty = protocol default (binary: rf, gbt, knn; multiclass: rf)
  RfParams rf;
  GbtParams gbt;
  KnnParams knn;
  unsigned jobs = 1;

  std::vector<ModelKind> effective_models() const;
  /// Throws ConfigError.
  void validate() const;
};

ExperimentConfig experiment_config_from_json(std::string_view text);
std::string experiment_config_to_json(const ExperimentConfig& config);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  bool absent = false;  // no true rows of this class
};

struct ClassificationReport {
  std::vector<ClassMetrics> per_class;
  ClassMetrics micro;
  ClassMetrics macro;  // over classes seen in y_true or y_pred
};

/// Throws LengthMismatch (different lengths) or EmptyMatrix (no rows).
ClassificationReport classification_report(std::span<const std::uint32_t> y_true, std::span<const std::uint32_t> y_pred,
                                           std::size_t n_classes);

using ConfusionMatrix = std::vector<std::vector<std::uint64_t>>;

/// cell[i][j] = rows of true class i predicted as j.
ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> y_true, std::span<const std::uint32_t> y_pred,
                                 std::size_t n_classes);

struct Folds {
  std::vector<std::vector<std::size_t>> test;  // ascending row ids per fold
  std::vector<std::string> warnings;
};

/// Shuffles each class, concatenates classes in id order and deals rows to
/// folds round-robin. Throws KTooLarge when k exceeds the row count.
Folds stratified_kfold(std::span<const std::uint32_t> labels, std::size_t k, Rng& rng);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population, over all fold x repeat evaluations
};

struct ClassSummary {
  std::string name;
  Summary precision;
  Summary recall;
  Summary f1;
  double support = 0.0;  // mean per evaluation
};

struct ModelReport {
  ModelKind model = ModelKind::rf;
  std::size_t evaluations = 0;  // fit/evaluate cycles
  std::vector<ClassSummary> per_class;  // multiclass: sorted by mean F1 descending
  ClassSummary micro;
  ClassSummary macro;
  ConfusionMatrix confusion_sum;                  // over `classes`, summed over all cycles
  std::vector<std::vector<double>> confusion_mean;  // confusion_sum / repeats
};

struct EvalReport {
  Protocol protocol = Protocol::binary_full;
  std::size_t folds = 0;
  std::size_t repeats = 0;
  std::vector<std::string> classes;
  std::vector<ModelReport> models;
  std::vector<std::size_t> draw_sizes;  // rows evaluated per repeat
  std::vector<std::string> warnings;
};

/// Observer for each fit/evaluate cycle; called concurrently when jobs > 1.
/// Row ids index the matrix passed to the run_* function.
struct CycleInfo {
  ModelKind model;
  std::size_t repeat;
  std::size_t fold;
  std::span<const std::size_t> train;
  std::span<const std::size_t> test;
};
using CycleObserver = std::function<void(const CycleInfo&)>;

/// Labels must name "benign" and "malicious" rows. Throws SingleClass.
EvalReport run_binary_full(const SparseMatrix& x, const LabelVector& labels, const ExperimentConfig& config,
                           const CycleObserver& observer = {});

/// Per repeat draws |benign| malicious rows without replacement.
/// Throws InsufficientMalicious / SingleClass.
EvalReport run_binary_balanced(const SparseMatrix& x, const LabelVector& labels, const ExperimentConfig& config,
                               const CycleObserver& observer = {});

/// `families` has one family name per row; Benign and Unknown rows are
/// never eligible. Throws NoEligibleFamilies.
EvalReport run_multiclass(const SparseMatrix& x, std::span<const std::string> families, const ExperimentConfig& config,
                          const CycleObserver& observer = {});

std::string eval_report_to_json(const EvalReport& report, const Provenance& provenance);
EvalReport eval_report_from_json(std::string_view text);
std::string confusion_to_csv(const std::vector<std::string>& classes, const ConfusionMatrix& matrix);

}  // namespace emutriage
