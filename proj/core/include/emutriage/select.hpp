#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "emutriage/features.hpp"
#include "emutriage/provenance.hpp"
#include "emutriage/rng.hpp"

namespace emutriage {

struct BorutaParams {
  double learning_rate = 0.05;
  std::size_t max_iter = 50;
  std::size_t max_depth = 5;
  int perc = 90;
  double alpha = 0.05;
  std::size_t n_rounds = 50;  // boosting rounds per importance fit
  // Each iteration fits on a fresh class-stratified row sample of this
  // fraction, so a noise column's fixed in-sample correlation with the label
  // does not earn it a hit in every iteration.
  double sample_fraction = 0.3;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

enum class FeatureStatus { confirmed, rejected, tentative };

std::string_view to_string(FeatureStatus status) noexcept;
FeatureStatus parse_feature_status(std::string_view text);

struct BorutaDecision {
  std::vector<FeatureStatus> status;
  std::vector<std::size_t> hit_counts;
  std::size_t iterations_run = 0;

  std::size_t count(FeatureStatus s) const;
  bool operator==(const BorutaDecision&) const = default;
};

/// Appends one row-permuted copy of every column.
SparseMatrix shadow_expand(const SparseMatrix& matrix, Rng& rng);

/// Total split gain per column of a boosted ensemble. Throws SingleClass.
std::vector<double> importance(const SparseMatrix& matrix, const LabelVector& labels, const BorutaParams& params);

/// Linear-interpolated percentile of `values` (perc in [0, 100]).
double percentile(std::vector<double> values, double perc);

/// Two-sided binomial test against p = 0.5; returns the p-value.
double binomial_two_sided(std::size_t hits, std::size_t trials);

/// Throws TooFewRows (< 10 rows) or SingleClass.
BorutaDecision boruta(const SparseMatrix& matrix, const LabelVector& labels, const BorutaParams& params);

struct Selection {
  SparseMatrix matrix;
  FeatureVocabulary vocab;
  std::vector<std::uint32_t> kept_columns;  // original column ids
  std::vector<std::string> warnings;
};

/// Throws DecisionMismatch when the decision does not cover every column.
Selection apply_selection(const SparseMatrix& matrix, const FeatureVocabulary& vocab, const BorutaDecision& decision,
                          bool keep_tentative = false);

std::string decision_to_json(const BorutaDecision& decision, const FeatureVocabulary& vocab,
                             const BorutaParams& params, const Provenance& provenance);
BorutaDecision decision_from_json(std::string_view text);

BorutaParams boruta_params_from_json(std::string_view text);

}  // namespace emutriage
