#include "emutriage/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "emutriage/error.hpp"
#include "emutriage/io.hpp"
#include "emutriage/parallel.hpp"
#include "json_util.hpp"

namespace emutriage {

using detail::Json;

std::optional<std::size_t> FeatureVocabulary::find(std::string_view text) const {
  auto it = index_.find(std::string(text));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t FeatureVocabulary::add(const FeatureToken& token) {
  auto [it, inserted] = index_.emplace(token.text, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

// ---------------------------------------------------------------------------

double RowView::value(std::uint32_t col) const {
  auto it = std::lower_bound(cols.begin(), cols.end(), col);
  if (it == cols.end() || *it != col) return 0.0;
  return values[static_cast<std::size_t>(it - cols.begin())];
}

void SparseMatrix::append_row(const SparseRow& row) {
  if (row.cols.size() != row.values.size()) throw Error(ErrorCode::LengthMismatch, "sparse row");
  std::int64_t previous = -1;
  for (std::size_t i = 0; i < row.cols.size(); ++i) {
    const std::uint32_t c = row.cols[i];
    if (static_cast<std::int64_t>(c) <= previous || c >= n_cols_) {
      throw Error(ErrorCode::SchemaViolation, "sparse row columns must be increasing and < n_cols");
    }
    previous = c;
    if (row.values[i] == 0.0) continue;
    cols_.push_back(c);
    values_.push_back(row.values[i]);
  }
  row_ptr_.push_back(cols_.size());
}

SparseMatrix SparseMatrix::from_rows(std::size_t n_cols, const std::vector<SparseRow>& rows) {
  SparseMatrix m(n_cols);
  for (const auto& row : rows) m.append_row(row);
  return m;
}

SparseMatrix SparseMatrix::from_dense(const std::vector<std::vector<double>>& dense) {
  const std::size_t n_cols = dense.empty() ? 0 : dense.front().size();
  SparseMatrix m(n_cols);
  for (const auto& values : dense) {
    if (values.size() != n_cols) throw Error(ErrorCode::LengthMismatch, "ragged dense matrix");
    SparseRow row;
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (values[c] != 0.0) {
        row.cols.push_back(static_cast<std::uint32_t>(c));
        row.values.push_back(values[c]);
      }
    }
    m.append_row(row);
  }
  return m;
}

RowView SparseMatrix::row(std::size_t r) const {
  const std::size_t begin = row_ptr_.at(r);
  const std::size_t end = row_ptr_.at(r + 1);
  return RowView{std::span<const std::uint32_t>(cols_).subspan(begin, end - begin),
                 std::span<const double>(values_).subspan(begin, end - begin)};
}

SparseMatrix SparseMatrix::select_rows(std::span<const std::size_t> rows) const {
  SparseMatrix out(n_cols_);
  for (std::size_t r : rows) {
    const auto view = row(r);
    out.cols_.insert(out.cols_.end(), view.cols.begin(), view.cols.end());
    out.values_.insert(out.values_.end(), view.values.begin(), view.values.end());
    out.row_ptr_.push_back(out.cols_.size());
  }
  return out;
}

SparseMatrix SparseMatrix::select_columns(std::span<const std::uint32_t> columns) const {
  std::vector<std::int64_t> remap(n_cols_, -1);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] >= n_cols_ || (i > 0 && columns[i] <= columns[i - 1])) {
      throw Error(ErrorCode::SchemaViolation, "column selection must be increasing and in range");
    }
    remap[columns[i]] = static_cast<std::int64_t>(i);
  }
  SparseMatrix out(columns.size());
  for (std::size_t r = 0; r < n_rows(); ++r) {
    const auto view = row(r);
    for (std::size_t i = 0; i < view.cols.size(); ++i) {
      if (const auto to = remap[view.cols[i]]; to >= 0) {
        out.cols_.push_back(static_cast<std::uint32_t>(to));
        out.values_.push_back(view.values[i]);
      }
    }
    out.row_ptr_.push_back(out.cols_.size());
  }
  return out;
}

SparseMatrix SparseMatrix::hstack(const SparseMatrix& right) const {
  if (right.n_rows() != n_rows()) throw Error(ErrorCode::LengthMismatch, "hstack row counts differ");
  SparseMatrix out(n_cols_ + right.n_cols_);
  for (std::size_t r = 0; r < n_rows(); ++r) {
    const auto a = row(r);
    const auto b = right.row(r);
    out.cols_.insert(out.cols_.end(), a.cols.begin(), a.cols.end());
    out.values_.insert(out.values_.end(), a.values.begin(), a.values.end());
    for (std::size_t i = 0; i < b.cols.size(); ++i) {
      out.cols_.push_back(static_cast<std::uint32_t>(b.cols[i] + n_cols_));
      out.values_.push_back(b.values[i]);
    }
    out.row_ptr_.push_back(out.cols_.size());
  }
  return out;
}

std::vector<std::vector<double>> SparseMatrix::to_dense() const {
  std::vector<std::vector<double>> dense(n_rows(), std::vector<double>(n_cols_, 0.0));
  for (std::size_t r = 0; r < n_rows(); ++r) {
    const auto view = row(r);
    for (std::size_t i = 0; i < view.cols.size(); ++i) dense[r][view.cols[i]] = view.values[i];
  }
  return dense;
}

// ---------------------------------------------------------------------------

LabelVector LabelVector::from_names(std::span<const std::string> per_row) {
  LabelVector labels;
  std::set<std::string> distinct(per_row.begin(), per_row.end());
  labels.names.assign(distinct.begin(), distinct.end());
  labels.ids.reserve(per_row.size());
  for (const auto& name : per_row) {
    auto it = std::lower_bound(labels.names.begin(), labels.names.end(), name);
    labels.ids.push_back(static_cast<std::uint32_t>(it - labels.names.begin()));
  }
  return labels;
}

LabelVector LabelVector::select(std::span<const std::size_t> rows) const {
  LabelVector out;
  out.names = names;
  out.ids.reserve(rows.size());
  for (std::size_t r : rows) out.ids.push_back(ids.at(r));
  return out;
}

// ---------------------------------------------------------------------------

FeatureVocabulary build_vocabulary(std::span<const TokenCounts> corpus_token_maps) {
  if (corpus_token_maps.empty()) throw Error(ErrorCode::EmptyCorpus, "build_vocabulary");
  FeatureVocabulary vocab;
  for (const auto& counts : corpus_token_maps) {
    for (const auto& [token, n] : counts.items()) vocab.add(token);
  }
  return vocab;
}

VectorizedRow vectorize(const TokenCounts& counts, const FeatureVocabulary& vocab) {
  VectorizedRow out;
  std::vector<std::pair<std::uint32_t, double>> cells;
  cells.reserve(counts.size());
  for (const auto& [token, n] : counts.items()) {
    if (auto col = vocab.find(token.text)) {
      cells.emplace_back(static_cast<std::uint32_t>(*col), static_cast<double>(n));
    } else {
      ++out.skipped;
    }
  }
  std::sort(cells.begin(), cells.end());
  for (const auto& [c, v] : cells) {
    out.row.cols.push_back(c);
    out.row.values.push_back(v);
  }
  return out;
}

MatrixWithVocabulary append_imphash_column(const SparseMatrix& matrix, const FeatureVocabulary& vocab,
                                           std::span<const std::optional<std::string>> per_row_imphash) {
  if (per_row_imphash.size() != matrix.n_rows()) {
    throw Error(ErrorCode::LengthMismatch, "one imphash slot per row is required");
  }
  MatrixWithVocabulary out{SparseMatrix{}, vocab};
  FeatureVocabulary digests;
  std::vector<std::int64_t> row_column(per_row_imphash.size(), -1);
  for (std::size_t r = 0; r < per_row_imphash.size(); ++r) {
    if (!per_row_imphash[r]) continue;
    row_column[r] = static_cast<std::int64_t>(
        digests.add(FeatureToken{"imphash::" + *per_row_imphash[r], TokenKind::imphash}));
  }
  SparseMatrix indicators(digests.size());
  for (std::size_t r = 0; r < per_row_imphash.size(); ++r) {
    SparseRow row;
    if (row_column[r] >= 0) {
      row.cols.push_back(static_cast<std::uint32_t>(row_column[r]));
      row.values.push_back(1.0);
    }
    indicators.append_row(row);
  }
  for (const auto& token : digests.tokens()) out.vocab.add(token);
  out.matrix = matrix.hstack(indicators);
  return out;
}

double sparsity(const SparseMatrix& matrix) {
  const double cells = static_cast<double>(matrix.n_rows()) * static_cast<double>(matrix.n_cols());
  if (cells == 0.0) throw Error(ErrorCode::EmptyMatrix, "sparsity of an empty matrix");
  return 1.0 - static_cast<double>(matrix.nnz()) / cells;
}

// ---------------------------------------------------------------------------

LabelVector FeatureSet::class_labels() const {
  std::vector<std::string> names;
  names.reserve(samples.size());
  for (const auto& s : samples) names.emplace_back(to_string(s.cls));
  return LabelVector::from_names(names);
}

LabelVector FeatureSet::family_labels() const {
  std::vector<std::string> names;
  names.reserve(samples.size());
  for (const auto& s : samples) names.push_back(s.family);
  return LabelVector::from_names(names);
}

FeatureSet featurize_corpus(const Corpus& corpus, const AliasTable& aliases,
                            std::span<const std::optional<std::string>> imphashes, unsigned jobs) {
  if (corpus.entries.empty()) throw Error(ErrorCode::EmptyCorpus, "featurize_corpus");
  if (!imphashes.empty() && imphashes.size() != corpus.entries.size()) {
    throw Error(ErrorCode::LengthMismatch, "imphash list length");
  }
  std::vector<TokenCounts> counts(corpus.entries.size());
  parallel_for(corpus.entries.size(), jobs,
               [&](std::size_t i) { counts[i] = featurize_report(corpus.entries[i].report, aliases); });

  FeatureSet set;
  set.vocab = build_vocabulary(counts);
  set.matrix = SparseMatrix(set.vocab.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    auto vec = vectorize(counts[i], set.vocab);
    set.skipped_tokens += vec.skipped;
    set.matrix.append_row(vec.row);
    const auto& entry = corpus.entries[i];
    set.samples.push_back(SampleInfo{entry.report.sample_id, entry.cls, entry.family,
                                     imphashes.empty() ? std::nullopt : imphashes[i]});
  }
  return set;
}

namespace {

Json number_json(double v) {
  if (std::nearbyint(v) == v && std::fabs(v) < 9.0e15) return Json(static_cast<std::int64_t>(v));
  return Json(v);
}

}  // namespace

void write_feature_set(const std::filesystem::path& dir, const FeatureSet& set, const Provenance& provenance) {
  std::filesystem::create_directories(dir);

  Json vocab;
  vocab["provenance"] = detail::to_json(provenance);
  vocab["n_rows"] = set.matrix.n_rows();
  vocab["skipped_tokens"] = set.skipped_tokens;
  auto tokens = Json::array();
  for (const auto& t : set.vocab.tokens()) tokens.push_back(Json{{"text", t.text}, {"kind", to_string(t.kind)}});
  vocab["tokens"] = std::move(tokens);
  detail::write_json_file(dir / "vocabulary.json", vocab);

  std::string rows;
  for (std::size_t r = 0; r < set.matrix.n_rows(); ++r) {
    const auto view = set.matrix.row(r);
    auto cells = Json::array();
    for (std::size_t i = 0; i < view.cols.size(); ++i) cells.push_back(Json::array({view.cols[i], number_json(view.values[i])}));
    rows += Json::array({set.samples.at(r).sample_id, std::move(cells)}).dump();
    rows += '\n';
  }
  write_text_file(dir / "rows.jsonl", rows);

  std::string samples = "sample_id,class,family,imphash\n";
  for (const auto& s : set.samples) {
    samples += s.sample_id + "," + std::string(to_string(s.cls)) + "," + csv_escape(s.family) + "," +
               s.imphash.value_or("") + "\n";
  }
  write_text_file(dir / "samples.csv", samples);
}

FeatureSet read_feature_set(const std::filesystem::path& dir) {
  FeatureSet set;
  const Json vocab = detail::read_json_file(dir / "vocabulary.json");
  try {
    for (const auto& t : vocab.at("tokens")) {
      auto kind = parse_token_kind(t.at("kind").get<std::string>());
      if (!kind) throw Error(ErrorCode::SchemaViolation, "token kind");
      set.vocab.add(FeatureToken{t.at("text").get<std::string>(), *kind});
    }
    set.skipped_tokens = vocab.value("skipped_tokens", std::size_t{0});
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("vocabulary.json: ") + e.what());
  }

  const auto sample_rows = parse_csv(read_text_file(dir / "samples.csv"));
  if (sample_rows.empty() || sample_rows.front() != std::vector<std::string>{"sample_id", "class", "family", "imphash"}) {
    throw Error(ErrorCode::SchemaViolation, "samples.csv header");
  }
  for (std::size_t i = 1; i < sample_rows.size(); ++i) {
    const auto& row = sample_rows[i];
    if (row.size() != 4) throw Error(ErrorCode::SchemaViolation, "samples.csv line " + std::to_string(i + 1));
    auto cls = parse_sample_class(row[1]);
    if (!cls) throw Error(ErrorCode::SchemaViolation, "samples.csv class");
    set.samples.push_back(SampleInfo{row[0], *cls, row[2], row[3].empty() ? std::nullopt : std::optional(row[3])});
  }

  set.matrix = SparseMatrix(set.vocab.size());
  std::istringstream lines(read_text_file(dir / "rows.jsonl"));
  std::string line;
  std::size_t r = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      if (r >= set.samples.size() || j.at(0).get<std::string>() != set.samples[r].sample_id) {
        throw Error(ErrorCode::SchemaViolation, "rows.jsonl does not match samples.csv at row " + std::to_string(r));
      }
      SparseRow row;
      for (const auto& cell : j.at(1)) {
        row.cols.push_back(cell.at(0).get<std::uint32_t>());
        row.values.push_back(cell.at(1).get<double>());
      }
      set.matrix.append_row(row);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::MalformedJson, "rows.jsonl: " + std::string(e.what()));
    }
    ++r;
  }
  if (set.matrix.n_rows() != set.samples.size()) throw Error(ErrorCode::LengthMismatch, "rows.jsonl vs samples.csv");
  return set;
}

}  // namespace emutriage
