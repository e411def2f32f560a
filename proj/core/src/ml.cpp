#include "emutriage/ml.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emutriage/error.hpp"
#include "emutriage/parallel.hpp"
#include "json_util.hpp"

namespace emutriage {

using detail::Json;

std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::rf: return "rf";
    case ModelKind::gbt: return "gbt";
    case ModelKind::knn: return "knn";
  }
  return "rf";
}

namespace {

void check_training_input(const SparseMatrix& x, const LabelVector& y) {
  if (x.n_rows() == 0 || x.n_cols() == 0) throw Error(ErrorCode::EmptyMatrix, "training matrix");
  if (y.size() != x.n_rows()) throw Error(ErrorCode::LengthMismatch, "labels vs rows");
}

std::vector<std::uint32_t> present_classes(const LabelVector& y) {
  std::vector<char> seen(y.n_classes(), 0);
  for (auto id : y.ids) seen.at(id) = 1;
  std::vector<std::uint32_t> present;
  for (std::uint32_t k = 0; k < seen.size(); ++k) {
    if (seen[k]) present.push_back(k);
  }
  return present;
}

void check_width(const TrainedModel& model, const SparseMatrix& rows) {
  if (rows.n_cols() != model.n_features) {
    throw Error(ErrorCode::WidthMismatch,
                "expected " + std::to_string(model.n_features) + " columns, got " + std::to_string(rows.n_cols()));
  }
}

std::uint32_t argmax(std::span<const double> scores) {
  std::uint32_t best = 0;
  for (std::uint32_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

double squared_distance(const RowView& a, const RowView& b) {
  double sum = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.cols.size() || j < b.cols.size()) {
    if (j == b.cols.size() || (i < a.cols.size() && a.cols[i] < b.cols[j])) {
      sum += a.values[i] * a.values[i];
      ++i;
    } else if (i == a.cols.size() || b.cols[j] < a.cols[i]) {
      sum += b.values[j] * b.values[j];
      ++j;
    } else {
      const double d = a.values[i] - b.values[j];
      sum += d * d;
      ++i;
      ++j;
    }
  }
  return sum;
}

TrainedModel fit_forest_impl(const SparseMatrix& x, const LabelVector& y, const RfParams& params) {
  const std::size_t n = x.n_rows();
  const std::size_t mtry = params.features_per_split != 0
                               ? params.features_per_split
                               : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(x.n_cols()))));
  const ColumnIndex columns(x);
  ForestState forest;
  forest.trees.resize(params.n_estimators);

  parallel_for(params.n_estimators, params.jobs, [&](std::size_t t) {
    Rng rng(derive_seed(params.seed, 0x52f, t));
    std::vector<double> weights(n, params.bootstrap ? 0.0 : 1.0);
    if (params.bootstrap) {
      for (std::size_t i = 0; i < n; ++i) weights[rng.uniform_index(n)] += 1.0;
    }
    TreeGrowth growth;
    growth.max_depth = params.max_depth;
    growth.features_per_node = mtry;
    forest.trees[t] = grow_gini_tree(columns, y.ids, y.n_classes(), weights, growth, rng);
  });

  TrainedModel model;
  model.kind = ModelKind::rf;
  model.classes = y.names;
  model.n_features = x.n_cols();
  model.state = std::move(forest);
  return model;
}

}  // namespace

namespace detail {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void softmax_inplace(std::span<double> scores) {
  const double top = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double& s : scores) {
    s = std::exp(s - top);
    sum += s;
  }
  for (double& s : scores) s /= sum;
}

double boosting_loss(std::span<const double> scores, std::size_t n_outputs, std::span<const std::uint32_t> targets) {
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const auto row = scores.subspan(r * n_outputs, n_outputs);
    if (n_outputs == 1) {
      // log(1 + exp(-s)) for the positive class, log(1 + exp(s)) otherwise.
      const double s = targets[r] == 1 ? -row[0] : row[0];
      total += s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    } else {
      const double top = *std::max_element(row.begin(), row.end());
      double sum = 0.0;
      for (double s : row) sum += std::exp(s - top);
      total += top + std::log(sum) - row[targets[r]];
    }
  }
  return targets.empty() ? 0.0 : total / static_cast<double>(targets.size());
}

void boosting_gradients(std::span<const double> scores, std::size_t n_outputs, std::span<const std::uint32_t> targets,
                        std::size_t output, std::span<double> g, std::span<double> h) {
  std::vector<double> p(n_outputs);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const auto row = scores.subspan(r * n_outputs, n_outputs);
    if (n_outputs == 1) {
      const double q = sigmoid(row[0]);
      g[r] = q - (targets[r] == 1 ? 1.0 : 0.0);
      h[r] = std::max(q * (1.0 - q), 1e-16);
    } else {
      std::copy(row.begin(), row.end(), p.begin());
      softmax_inplace(p);
      const double q = p[output];
      g[r] = q - (targets[r] == output ? 1.0 : 0.0);
      h[r] = std::max(2.0 * q * (1.0 - q), 1e-16);
    }
  }
}

TrainedModel fit_random_forest_unchecked(const SparseMatrix& x, const LabelVector& y, const RfParams& params) {
  check_training_input(x, y);
  return fit_forest_impl(x, y, params);
}

}  // namespace detail

TrainedModel fit_random_forest(const SparseMatrix& x, const LabelVector& y, const RfParams& params) {
  check_training_input(x, y);
  if (present_classes(y).size() < 2) throw Error(ErrorCode::SingleClass, "random forest");
  return fit_forest_impl(x, y, params);
}

TrainedModel fit_gbt(const SparseMatrix& x, const LabelVector& y, const GbtParams& params) {
  check_training_input(x, y);
  const auto present = present_classes(y);
  if (present.size() < 2) throw Error(ErrorCode::SingleClass, "gradient boosting");
  const std::size_t n = x.n_rows();
  const std::size_t outputs = present.size() == 2 ? 1 : present.size();

  std::vector<std::uint32_t> local_of(y.n_classes(), 0);
  for (std::uint32_t i = 0; i < present.size(); ++i) local_of[present[i]] = i;
  std::vector<std::uint32_t> targets(n);
  std::vector<double> prior(present.size(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    targets[r] = local_of[y.ids[r]];
    prior[targets[r]] += 1.0 / static_cast<double>(n);
  }

  BoostedState state;
  state.output_class = present;
  state.learning_rate = params.learning_rate;
  if (outputs == 1) {
    state.base_score = {std::log(prior[1] / prior[0])};
  } else {
    for (double p : prior) state.base_score.push_back(std::log(p));
  }

  std::vector<double> scores(n * outputs);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(state.base_score.begin(), state.base_score.end(), scores.begin() + static_cast<std::ptrdiff_t>(r * outputs));
  }
  state.loss_history.push_back(detail::boosting_loss(scores, outputs, targets));

  const ColumnIndex columns(x);
  TreeGrowth growth;
  growth.max_depth = params.max_depth;

  for (std::size_t round = 0; round < params.n_rounds; ++round) {
    Rng sampler(derive_seed(params.seed, 0xb005, round));
    std::vector<double> weights(n, 1.0);
    if (params.subsample < 1.0) {
      for (auto& w : weights) w = sampler.bernoulli(params.subsample) ? 1.0 : 0.0;
    }

    std::vector<DecisionTree> trees(outputs);
    parallel_for(outputs, params.jobs, [&](std::size_t k) {
      std::vector<double> g(n);
      std::vector<double> h(n);
      detail::boosting_gradients(scores, outputs, targets, k, g, h);
      Rng rng(derive_seed(params.seed, 0x7ee, round * outputs + k));
      trees[k] = grow_newton_tree(columns, g, h, weights, growth, rng, params.reg_lambda, params.min_child_weight);
    });

    for (std::size_t r = 0; r < n; ++r) {
      const auto row = x.row(r);
      for (std::size_t k = 0; k < outputs; ++k) {
        scores[r * outputs + k] += params.learning_rate * trees[k].predict(row)[0];
      }
    }
    state.rounds.push_back(std::move(trees));
    state.loss_history.push_back(detail::boosting_loss(scores, outputs, targets));
  }

  TrainedModel model;
  model.kind = ModelKind::gbt;
  model.classes = y.names;
  model.n_features = x.n_cols();
  model.state = std::move(state);
  return model;
}

TrainedModel fit_knn(const SparseMatrix& x, const LabelVector& y, const KnnParams& params) {
  check_training_input(x, y);
  if (x.n_rows() < params.n_neighbors) throw Error(ErrorCode::TooFewNeighbors, "training rows < n_neighbors");
  TrainedModel model;
  model.kind = ModelKind::knn;
  model.classes = y.names;
  model.n_features = x.n_cols();
  model.state = KnnState{x, y.ids, params};
  return model;
}

namespace {

std::vector<double> knn_votes(const KnnState& knn, std::size_t n_classes, const RowView& query,
                              const KnnParams& params) {
  const std::size_t n = knn.train.n_rows();
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = {std::sqrt(squared_distance(query, knn.train.row(i))), i};
  const std::size_t k = params.n_neighbors;
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

  std::vector<double> votes(n_classes, 0.0);
  const bool exact = params.weighting == KnnWeighting::distance && dist[0].first == 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const auto [d, i] = dist[j];
    double w = 1.0;
    if (params.weighting == KnnWeighting::distance) {
      if (exact) {
        if (d != 0.0) continue;
      } else {
        w = 1.0 / d;
      }
    }
    votes[knn.labels[i]] += w;
  }
  const double total = std::accumulate(votes.begin(), votes.end(), 0.0);
  for (double& v : votes) v /= total;
  return votes;
}

}  // namespace

std::vector<std::uint32_t> knn_predict(const TrainedModel& model, const SparseMatrix& queries,
                                       const KnnParams& params) {
  const auto* knn = std::get_if<KnnState>(&model.state);
  if (knn == nullptr) throw Error(ErrorCode::ConfigError, "knn_predict on a non-knn model");
  check_width(model, queries);
  if (params.n_neighbors == 0 || knn->train.n_rows() < params.n_neighbors) {
    throw Error(ErrorCode::TooFewNeighbors, "training rows < n_neighbors");
  }
  std::vector<std::uint32_t> out(queries.n_rows());
  parallel_for(queries.n_rows(), params.jobs, [&](std::size_t r) {
    out[r] = argmax(knn_votes(*knn, model.classes.size(), queries.row(r), params));
  });
  return out;
}

std::vector<std::vector<double>> predict_proba(const TrainedModel& model, const SparseMatrix& rows) {
  check_width(model, rows);
  const std::size_t n_classes = model.classes.size();
  std::vector<std::vector<double>> out(rows.n_rows(), std::vector<double>(n_classes, 0.0));

  if (const auto* forest = std::get_if<ForestState>(&model.state)) {
    for (std::size_t r = 0; r < rows.n_rows(); ++r) {
      const auto row = rows.row(r);
      for (const auto& tree : forest->trees) {
        const auto leaf = tree.predict(row);
        for (std::size_t k = 0; k < n_classes; ++k) out[r][k] += leaf[k];
      }
      for (double& p : out[r]) p /= static_cast<double>(forest->trees.size());
    }
  } else if (const auto* boosted = std::get_if<BoostedState>(&model.state)) {
    const std::size_t outputs = boosted->base_score.size();
    std::vector<double> scores(outputs);
    for (std::size_t r = 0; r < rows.n_rows(); ++r) {
      const auto row = rows.row(r);
      scores = boosted->base_score;
      for (const auto& round : boosted->rounds) {
        for (std::size_t k = 0; k < outputs; ++k) scores[k] += boosted->learning_rate * round[k].predict(row)[0];
      }
      if (outputs == 1) {
        const double p = detail::sigmoid(scores[0]);
        out[r][boosted->output_class[0]] = 1.0 - p;
        out[r][boosted->output_class[1]] = p;
      } else {
        detail::softmax_inplace(scores);
        for (std::size_t k = 0; k < outputs; ++k) out[r][boosted->output_class[k]] = scores[k];
      }
    }
  } else {
    const auto& knn = std::get<KnnState>(model.state);
    if (knn.train.n_rows() < knn.params.n_neighbors) throw Error(ErrorCode::TooFewNeighbors, "");
    parallel_for(rows.n_rows(), knn.params.jobs,
                 [&](std::size_t r) { out[r] = knn_votes(knn, n_classes, rows.row(r), knn.params); });
  }
  return out;
}

std::vector<std::uint32_t> predict(const TrainedModel& model, const SparseMatrix& rows) {
  const auto proba = predict_proba(model, rows);
  std::vector<std::uint32_t> out;
  out.reserve(proba.size());
  for (const auto& p : proba) out.push_back(argmax(p));
  return out;
}

std::vector<double> feature_importances(const TrainedModel& model) {
  std::vector<double> out(model.n_features, 0.0);
  if (const auto* forest = std::get_if<ForestState>(&model.state)) {
    std::vector<double> tree_imp(model.n_features);
    for (const auto& tree : forest->trees) {
      std::fill(tree_imp.begin(), tree_imp.end(), 0.0);
      tree.accumulate_importance(tree_imp, true);
      const double sum = std::accumulate(tree_imp.begin(), tree_imp.end(), 0.0);
      if (sum <= 0.0) continue;
      for (std::size_t f = 0; f < out.size(); ++f) out[f] += tree_imp[f] / sum;
    }
    for (double& v : out) v /= static_cast<double>(std::max<std::size_t>(1, forest->trees.size()));
  } else if (const auto* boosted = std::get_if<BoostedState>(&model.state)) {
    for (const auto& round : boosted->rounds) {
      for (const auto& tree : round) tree.accumulate_importance(out, false);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

Json tree_to_json(const DecisionTree& tree) {
  Json j;
  j["value_width"] = tree.value_width;
  auto feature = Json::array(), threshold = Json::array(), left = Json::array(), right = Json::array(),
       gain = Json::array(), weight = Json::array(), offset = Json::array();
  for (const auto& n : tree.nodes) {
    feature.push_back(n.feature);
    threshold.push_back(n.threshold);
    left.push_back(n.left);
    right.push_back(n.right);
    gain.push_back(n.gain);
    weight.push_back(n.weight);
    offset.push_back(n.value_offset);
  }
  j["feature"] = std::move(feature);
  j["threshold"] = std::move(threshold);
  j["left"] = std::move(left);
  j["right"] = std::move(right);
  j["gain"] = std::move(gain);
  j["weight"] = std::move(weight);
  j["value_offset"] = std::move(offset);
  j["values"] = tree.values;
  return j;
}

DecisionTree tree_from_json(const Json& j) {
  DecisionTree tree;
  tree.value_width = j.at("value_width").get<std::size_t>();
  const auto& feature = j.at("feature");
  tree.nodes.resize(feature.size());
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    auto& n = tree.nodes[i];
    n.feature = feature[i].get<std::int32_t>();
    n.threshold = j.at("threshold")[i].get<double>();
    n.left = j.at("left")[i].get<std::int32_t>();
    n.right = j.at("right")[i].get<std::int32_t>();
    n.gain = j.at("gain")[i].get<double>();
    n.weight = j.at("weight")[i].get<double>();
    n.value_offset = j.at("value_offset")[i].get<std::uint32_t>();
  }
  tree.values = j.at("values").get<std::vector<double>>();
  for (const auto& n : tree.nodes) {
    if (n.feature < 0 && n.value_offset + tree.value_width > tree.values.size()) {
      throw Error(ErrorCode::SchemaViolation, "tree leaf value out of range");
    }
    if (n.feature >= 0 && (n.left < 0 || n.right < 0 || static_cast<std::size_t>(std::max(n.left, n.right)) >= tree.nodes.size())) {
      throw Error(ErrorCode::SchemaViolation, "tree child out of range");
    }
  }
  return tree;
}

}  // namespace

std::string model_to_json(const TrainedModel& model) {
  Json j;
  j["format"] = "emu-triage-model";
  j["kind"] = to_string(model.kind);
  j["classes"] = model.classes;
  j["n_features"] = model.n_features;
  if (const auto* forest = std::get_if<ForestState>(&model.state)) {
    auto trees = Json::array();
    for (const auto& t : forest->trees) trees.push_back(tree_to_json(t));
    j["trees"] = std::move(trees);
  } else if (const auto* boosted = std::get_if<BoostedState>(&model.state)) {
    j["output_class"] = boosted->output_class;
    j["base_score"] = boosted->base_score;
    j["learning_rate"] = boosted->learning_rate;
    j["loss_history"] = boosted->loss_history;
    auto rounds = Json::array();
    for (const auto& round : boosted->rounds) {
      auto trees = Json::array();
      for (const auto& t : round) trees.push_back(tree_to_json(t));
      rounds.push_back(std::move(trees));
    }
    j["rounds"] = std::move(rounds);
  } else {
    const auto& knn = std::get<KnnState>(model.state);
    j["n_neighbors"] = knn.params.n_neighbors;
    j["weighting"] = knn.params.weighting == KnnWeighting::distance ? "distance" : "uniform";
    j["labels"] = knn.labels;
    auto rows = Json::array();
    for (std::size_t r = 0; r < knn.train.n_rows(); ++r) {
      const auto view = knn.train.row(r);
      auto cells = Json::array();
      for (std::size_t i = 0; i < view.cols.size(); ++i) cells.push_back(Json::array({view.cols[i], view.values[i]}));
      rows.push_back(std::move(cells));
    }
    j["train"] = std::move(rows);
  }
  return j.dump();
}

TrainedModel model_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  try {
    TrainedModel model;
    model.classes = j.at("classes").get<std::vector<std::string>>();
    model.n_features = j.at("n_features").get<std::size_t>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "rf") {
      model.kind = ModelKind::rf;
      ForestState forest;
      for (const auto& t : j.at("trees")) forest.trees.push_back(tree_from_json(t));
      model.state = std::move(forest);
    } else if (kind == "gbt") {
      model.kind = ModelKind::gbt;
      BoostedState boosted;
      boosted.output_class = j.at("output_class").get<std::vector<std::uint32_t>>();
      boosted.base_score = j.at("base_score").get<std::vector<double>>();
      boosted.learning_rate = j.at("learning_rate").get<double>();
      boosted.loss_history = j.at("loss_history").get<std::vector<double>>();
      for (const auto& round : j.at("rounds")) {
        std::vector<DecisionTree> trees;
        for (const auto& t : round) trees.push_back(tree_from_json(t));
        boosted.rounds.push_back(std::move(trees));
      }
      model.state = std::move(boosted);
    } else if (kind == "knn") {
      model.kind = ModelKind::knn;
      KnnState knn;
      knn.params.n_neighbors = j.at("n_neighbors").get<std::size_t>();
      knn.params.weighting = j.at("weighting").get<std::string>() == "uniform" ? KnnWeighting::uniform : KnnWeighting::distance;
      knn.labels = j.at("labels").get<std::vector<std::uint32_t>>();
      knn.train = SparseMatrix(model.n_features);
      for (const auto& cells : j.at("train")) {
        SparseRow row;
        for (const auto& c : cells) {
          row.cols.push_back(c.at(0).get<std::uint32_t>());
          row.values.push_back(c.at(1).get<double>());
        }
        knn.train.append_row(row);
      }
      model.state = std::move(knn);
    } else {
      throw Error(ErrorCode::SchemaViolation, "unknown model kind " + kind);
    }
    return model;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("model json: ") + e.what());
  }
}

}  // namespace emutriage
