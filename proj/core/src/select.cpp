#include "emutriage/select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emutriage/error.hpp"
#include "emutriage/ml.hpp"
#include "json_util.hpp"

namespace emutriage {

using detail::Json;

std::string_view to_string(FeatureStatus status) noexcept {
  switch (status) {
    case FeatureStatus::confirmed: return "confirmed";
    case FeatureStatus::rejected: return "rejected";
    case FeatureStatus::tentative: return "tentative";
  }
  return "tentative";
}

FeatureStatus parse_feature_status(std::string_view text) {
  if (text == "confirmed") return FeatureStatus::confirmed;
  if (text == "rejected") return FeatureStatus::rejected;
  if (text == "tentative") return FeatureStatus::tentative;
  throw Error(ErrorCode::SchemaViolation, "unknown feature status '" + std::string(text) + "'");
}

std::size_t BorutaDecision::count(FeatureStatus s) const {
  return static_cast<std::size_t>(std::count(status.begin(), status.end(), s));
}

SparseMatrix shadow_expand(const SparseMatrix& matrix, Rng& rng) {
  const std::size_t n = matrix.n_rows();
  const std::size_t m = matrix.n_cols();
  if (m == 0) throw Error(ErrorCode::EmptyMatrix, "shadow_expand needs at least one column");

  std::vector<std::vector<double>> column(m, std::vector<double>(n, 0.0));
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = matrix.row(r);
    for (std::size_t i = 0; i < row.cols.size(); ++i) column[row.cols[i]][r] = row.values[i];
  }
  for (auto& values : column) rng.shuffle(std::span<double>(values));

  std::vector<SparseRow> rows(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = matrix.row(r);
    rows[r].cols.assign(row.cols.begin(), row.cols.end());
    rows[r].values.assign(row.values.begin(), row.values.end());
    for (std::size_t c = 0; c < m; ++c) {
      if (column[c][r] != 0.0) {
        rows[r].cols.push_back(static_cast<std::uint32_t>(m + c));
        rows[r].values.push_back(column[c][r]);
      }
    }
  }
  return SparseMatrix::from_rows(2 * m, rows);
}

std::vector<double> importance(const SparseMatrix& matrix, const LabelVector& labels, const BorutaParams& params) {
  GbtParams gbt;
  gbt.learning_rate = params.learning_rate;
  gbt.max_depth = params.max_depth;
  gbt.subsample = 1.0;
  gbt.n_rounds = params.n_rounds;
  gbt.seed = params.seed;
  gbt.jobs = params.jobs;
  return feature_importances(fit_gbt(matrix, labels, gbt));
}

double percentile(std::vector<double> values, double perc) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = perc / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

double binomial_two_sided(std::size_t hits, std::size_t trials) {
  // P(X = k) for Bin(trials, 0.5), accumulated in log space.
  const double log_half = std::log(0.5) * static_cast<double>(trials);
  auto pmf = [&](std::size_t k) {
    return std::exp(std::lgamma(static_cast<double>(trials) + 1) - std::lgamma(static_cast<double>(k) + 1) -
                    std::lgamma(static_cast<double>(trials - k) + 1) + log_half);
  };
  double lower = 0.0;
  for (std::size_t k = 0; k <= hits; ++k) lower += pmf(k);
  double upper = 0.0;
  for (std::size_t k = hits; k <= trials; ++k) upper += pmf(k);
  return std::min(1.0, 2.0 * std::min(lower, upper));
}

BorutaDecision boruta(const SparseMatrix& matrix, const LabelVector& labels, const BorutaParams& params) {
  if (matrix.n_rows() < 10) throw Error(ErrorCode::TooFewRows, "boruta needs at least 10 rows");
  if (labels.size() != matrix.n_rows()) throw Error(ErrorCode::LengthMismatch, "labels vs rows");
  if (std::adjacent_find(labels.ids.begin(), labels.ids.end(), std::not_equal_to<>()) == labels.ids.end()) {
    throw Error(ErrorCode::SingleClass, "boruta");
  }
  const std::size_t m = matrix.n_cols();
  BorutaDecision decision;
  decision.hit_counts.assign(m, 0);

  std::vector<std::vector<std::size_t>> by_class(labels.n_classes());
  for (std::size_t r = 0; r < labels.size(); ++r) by_class[labels.ids[r]].push_back(r);

  for (std::size_t iter = 0; iter < params.max_iter; ++iter) {
    Rng rng(derive_seed(params.seed, 0x5ad0, iter));
    std::vector<std::size_t> rows;
    for (auto members : by_class) {
      if (members.empty()) continue;
      rng.shuffle(std::span<std::size_t>(members));
      const auto take = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(params.sample_fraction * static_cast<double>(members.size()))), 1,
          members.size());
      rows.insert(rows.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(rows.begin(), rows.end());
    const SparseMatrix augmented = shadow_expand(matrix.select_rows(rows), rng);
    BorutaParams fit = params;
    fit.seed = derive_seed(params.seed, 0xf17, iter);
    const auto imp = importance(augmented, labels.select(rows), fit);
    const double threshold =
        percentile(std::vector<double>(imp.begin() + static_cast<std::ptrdiff_t>(m), imp.end()), params.perc);
    for (std::size_t c = 0; c < m; ++c) {
      if (imp[c] > threshold) ++decision.hit_counts[c];
    }
    ++decision.iterations_run;
  }

  const double corrected = params.alpha / static_cast<double>(std::max<std::size_t>(1, m));
  const double half = static_cast<double>(decision.iterations_run) / 2.0;
  decision.status.resize(m, FeatureStatus::tentative);
  for (std::size_t c = 0; c < m; ++c) {
    const auto hits = decision.hit_counts[c];
    if (binomial_two_sided(hits, decision.iterations_run) >= corrected) continue;
    if (static_cast<double>(hits) > half) decision.status[c] = FeatureStatus::confirmed;
    if (static_cast<double>(hits) < half) decision.status[c] = FeatureStatus::rejected;
  }
  return decision;
}

Selection apply_selection(const SparseMatrix& matrix, const FeatureVocabulary& vocab, const BorutaDecision& decision,
                          bool keep_tentative) {
  if (decision.status.size() != matrix.n_cols() || vocab.size() != matrix.n_cols()) {
    throw Error(ErrorCode::DecisionMismatch, "decision covers " + std::to_string(decision.status.size()) +
                                                 " features, matrix has " + std::to_string(matrix.n_cols()));
  }
  Selection out;
  for (std::uint32_t c = 0; c < decision.status.size(); ++c) {
    const auto s = decision.status[c];
    if (s == FeatureStatus::confirmed || (keep_tentative && s == FeatureStatus::tentative)) {
      out.kept_columns.push_back(c);
      out.vocab.add(vocab.at(c));
    }
  }
  out.matrix = matrix.select_columns(out.kept_columns);
  if (out.kept_columns.empty()) out.warnings.emplace_back("EmptyMatrix: selection kept no features");
  return out;
}

std::string decision_to_json(const BorutaDecision& decision, const FeatureVocabulary& vocab,
                             const BorutaParams& params, const Provenance& provenance) {
  if (decision.status.size() != vocab.size()) throw Error(ErrorCode::DecisionMismatch, "decision vs vocabulary");
  Json j;
  j["provenance"] = detail::to_json(provenance);
  j["params"] = {{"learning_rate", params.learning_rate}, {"max_iter", params.max_iter},
                 {"max_depth", params.max_depth},         {"perc", params.perc},
                 {"alpha", params.alpha},                 {"n_rounds", params.n_rounds},
                 {"sample_fraction", params.sample_fraction}};
  j["iterations_run"] = decision.iterations_run;
  j["counts"] = {{"confirmed", decision.count(FeatureStatus::confirmed)},
                 {"tentative", decision.count(FeatureStatus::tentative)},
                 {"rejected", decision.count(FeatureStatus::rejected)}};
  auto features = Json::array();
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    features.push_back({{"token", vocab.at(c).text},
                        {"kind", to_string(vocab.at(c).kind)},
                        {"status", to_string(decision.status[c])},
                        {"hits", decision.hit_counts[c]}});
  }
  j["features"] = std::move(features);
  return j.dump(2) + "\n";
}

BorutaDecision decision_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  try {
    BorutaDecision d;
    d.iterations_run = j.at("iterations_run").get<std::size_t>();
    for (const auto& f : j.at("features")) {
      d.status.push_back(parse_feature_status(f.at("status").get<std::string>()));
      d.hit_counts.push_back(f.at("hits").get<std::size_t>());
    }
    return d;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("decision json: ") + e.what());
  }
}

BorutaParams boruta_params_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  BorutaParams p;
  try {
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.max_iter = j.value("max_iter", p.max_iter);
    p.max_depth = j.value("max_depth", p.max_depth);
    p.perc = j.value("perc", p.perc);
    p.alpha = j.value("alpha", p.alpha);
    p.n_rounds = j.value("n_rounds", p.n_rounds);
    p.sample_fraction = j.value("sample_fraction", p.sample_fraction);
    p.seed = j.value("seed", p.seed);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("boruta params: ") + e.what());
  }
  if (p.max_iter == 0 || p.max_depth == 0 || p.perc <= 0 || p.perc > 100 || p.alpha <= 0.0 || p.alpha >= 1.0 ||
      p.learning_rate < 0.0 || p.sample_fraction <= 0.0 || p.sample_fraction > 1.0) {
    throw Error(ErrorCode::ConfigError, "boruta params out of range");
  }
  return p;
}

}  // namespace emutriage
