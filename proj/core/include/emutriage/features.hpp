#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "emutriage/ingest.hpp"
#include "emutriage/provenance.hpp"
#include "emutriage/unify.hpp"

namespace emutriage {

/// Ordered token list with a text -> column lookup; column ids are 0..n-1
/// in first-seen order.
class FeatureVocabulary {
 public:
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const std::vector<FeatureToken>& tokens() const { return tokens_; }
  const FeatureToken& at(std::size_t column) const { return tokens_.at(column); }
  std::optional<std::size_t> find(std::string_view text) const;

  /// Returns the column of `token`, appending it when new.
  std::size_t add(const FeatureToken& token);

  bool operator==(const FeatureVocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<FeatureToken> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct SparseRow {
  std::vector<std::uint32_t> cols;  // strictly increasing
  std::vector<double> values;       // no explicit zeros

  std::size_t nnz() const { return cols.size(); }
  bool operator==(const SparseRow&) const = default;
};

struct RowView {
  std::span<const std::uint32_t> cols;
  std::span<const double> values;

  /// Binary search; 0 when the column is absent.
  double value(std::uint32_t col) const;
};

/// Row-major (CSR) sample x feature matrix.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  explicit SparseMatrix(std::size_t n_cols) : n_cols_(n_cols) {}

  /// Validates ordering and drops explicit zeros.
  static SparseMatrix from_rows(std::size_t n_cols, const std::vector<SparseRow>& rows);
  static SparseMatrix from_dense(const std::vector<std::vector<double>>& dense);

  void append_row(const SparseRow& row);

  std::size_t n_rows() const { return row_ptr_.size() - 1; }
  std::size_t n_cols() const { return n_cols_; }
  std::size_t nnz() const { return cols_.size(); }

  RowView row(std::size_t r) const;
  double value(std::size_t r, std::uint32_t c) const { return row(r).value(c); }

  SparseMatrix select_rows(std::span<const std::size_t> rows) const;
  /// Keeps `columns` (strictly increasing) and renumbers them 0..m-1.
  SparseMatrix select_columns(std::span<const std::uint32_t> columns) const;
  /// Concatenates `right` to the right of this matrix.
  SparseMatrix hstack(const SparseMatrix& right) const;
  std::vector<std::vector<double>> to_dense() const;

  bool operator==(const SparseMatrix&) const = default;

 private:
  std::size_t n_cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> cols_;
  std::vector<double> values_;
};

/// Dense class ids 0..k-1 into a name table.
struct LabelVector {
  std::vector<std::uint32_t> ids;
  std::vector<std::string> names;

  std::size_t size() const { return ids.size(); }
  std::size_t n_classes() const { return names.size(); }

  /// Class ids follow sorted name order.
  static LabelVector from_names(std::span<const std::string> per_row);
  LabelVector select(std::span<const std::size_t> rows) const;
};

FeatureVocabulary build_vocabulary(std::span<const TokenCounts> corpus_token_maps);

struct VectorizedRow {
  SparseRow row;
  std::size_t skipped = 0;  // tokens not in the vocabulary
};

VectorizedRow vectorize(const TokenCounts& counts, const FeatureVocabulary& vocab);

struct MatrixWithVocabulary {
  SparseMatrix matrix;
  FeatureVocabulary vocab;
};

/// One binary indicator column per distinct digest, in first-seen row order.
/// Rows without a digest get no indicator.
MatrixWithVocabulary append_imphash_column(const SparseMatrix& matrix, const FeatureVocabulary& vocab,
                                           std::span<const std::optional<std::string>> per_row_imphash);

/// 1 - nnz / (rows * cols). Throws EmptyMatrix for a zero-sized matrix.
double sparsity(const SparseMatrix& matrix);

// Reference sparsity of the original study's dataset; documentation only.
inline constexpr double kReferenceSparsity = 0.9878;

/// Per-row metadata carried alongside a matrix.
struct SampleInfo {
  std::string sample_id;
  SampleClass cls = SampleClass::malicious;
  std::string family;
  std::optional<std::string> imphash;

  bool operator==(const SampleInfo&) const = default;
};

/// A matrix directory: vocabulary.json, rows.jsonl, samples.csv.
struct FeatureSet {
  FeatureVocabulary vocab;
  SparseMatrix matrix;
  std::vector<SampleInfo> samples;
  std::size_t skipped_tokens = 0;

  LabelVector class_labels() const;
  LabelVector family_labels() const;
};

/// Unifies and vectorizes a loaded corpus. `imphashes` is either empty or
/// one optional digest per corpus entry.
FeatureSet featurize_corpus(const Corpus& corpus, const AliasTable& aliases,
                            std::span<const std::optional<std::string>> imphashes = {}, unsigned jobs = 1);

void write_feature_set(const std::filesystem::path& dir, const FeatureSet& set, const Provenance& provenance);
FeatureSet read_feature_set(const std::filesystem::path& dir);

}  // namespace emutriage
