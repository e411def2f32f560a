#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "emutriage/features.hpp"
#include "emutriage/tree.hpp"

namespace emutriage {

struct RfParams {
  std::size_t n_estimators = 100;
  std::size_t max_depth = 20;
  std::uint64_t seed = 0;
  std::size_t features_per_split = 0;  // 0 = floor(sqrt(n_cols))
  bool bootstrap = true;
  unsigned jobs = 1;
};

struct GbtParams {
  double learning_rate = 0.02;
  std::size_t max_depth = 10;
  double subsample = 0.8;
  std::size_t n_rounds = 100;
  std::uint64_t seed = 0;
  double reg_lambda = 1.0;
  double min_child_weight = 1.0;
  unsigned jobs = 1;
};

enum class KnnWeighting { uniform, distance };

struct KnnParams {
  std::size_t n_neighbors = 5;
  KnnWeighting weighting = KnnWeighting::distance;
  unsigned jobs = 1;
};

enum class ModelKind { rf, gbt, knn };

std::string_view to_string(ModelKind kind) noexcept;

struct ForestState {
  std::vector<DecisionTree> trees;
};

/// Binary problems use a single logistic output; more classes use softmax
/// with one tree per class per round. Outputs map to `output_class`.
struct BoostedState {
  std::vector<std::uint32_t> output_class;
  std::vector<double> base_score;
  double learning_rate = 0.0;
  std::vector<std::vector<DecisionTree>> rounds;  // rounds[i][output]
  std::vector<double> loss_history;               // mean log loss; [0] = base score
};

struct KnnState {
  SparseMatrix train;
  std::vector<std::uint32_t> labels;
  KnnParams params;
};

struct TrainedModel {
  ModelKind kind = ModelKind::rf;
  std::vector<std::string> classes;
  std::size_t n_features = 0;
  std::variant<ForestState, BoostedState, KnnState> state;
};

/// Bootstrap forest of Gini CART trees.
/// Throws Error{EmptyMatrix | SingleClass | LengthMismatch}.
TrainedModel fit_random_forest(const SparseMatrix& x, const LabelVector& y, const RfParams& params);

/// Throws Error{EmptyMatrix | SingleClass | LengthMismatch}.
TrainedModel fit_gbt(const SparseMatrix& x, const LabelVector& y, const GbtParams& params);

TrainedModel fit_knn(const SparseMatrix& x, const LabelVector& y, const KnnParams& params);

/// Euclidean distance over sparse rows; 1/d vote weights with an exact-match
/// short-circuit. Throws TooFewNeighbors / WidthMismatch.
std::vector<std::uint32_t> knn_predict(const TrainedModel& model, const SparseMatrix& queries,
                                       const KnnParams& params);

/// One row of per-class scores (over model.classes) per query row.
std::vector<std::vector<double>> predict_proba(const TrainedModel& model, const SparseMatrix& rows);
/// argmax of predict_proba, lowest class id on ties.
std::vector<std::uint32_t> predict(const TrainedModel& model, const SparseMatrix& rows);

/// RF: mean decrease in Gini impurity. GBT: total split gain.
std::vector<double> feature_importances(const TrainedModel& model);

std::string model_to_json(const TrainedModel& model);
TrainedModel model_from_json(std::string_view text);

namespace detail {

// Exposed for oracle tests.
double sigmoid(double z);
void softmax_inplace(std::span<double> scores);
/// Mean negative log likelihood of integer targets under raw scores
/// (one score per output; binary uses a single logit).
double boosting_loss(std::span<const double> scores, std::size_t n_outputs, std::span<const std::uint32_t> targets);
/// Gradient/hessian pairs used by the booster for one output. The gradient
/// is d(sum loss)/d(score).
void boosting_gradients(std::span<const double> scores, std::size_t n_outputs, std::span<const std::uint32_t> targets,
                        std::size_t output, std::span<double> g, std::span<double> h);

/// Bypasses the class-count check; only for degenerate-model tests.
TrainedModel fit_random_forest_unchecked(const SparseMatrix& x, const LabelVector& y, const RfParams& params);

}  // namespace detail

}  // namespace emutriage
