#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "emutriage/ml.hpp"
#include "emutriage/tree.hpp"
#include "fixtures.hpp"

using namespace emutriage;
using emutriage::testing::code_of;
using emutriage::testing::Labeled;
using emutriage::testing::random_small;

namespace {

double brute_gini(const std::vector<std::size_t>& rows, const std::vector<std::uint32_t>& y, std::size_t k) {
  if (rows.empty()) return 0.0;
  std::vector<double> counts(k, 0.0);
  for (auto r : rows) counts[y[r]] += 1.0;
  double sum_sq = 0.0;
  for (double c : counts) sum_sq += (c / rows.size()) * (c / rows.size());
  return 1.0 - sum_sq;
}

double brute_gain(const std::vector<std::size_t>& rows, const std::vector<std::uint32_t>& y, std::size_t k,
                  const std::vector<std::vector<double>>& dense, std::size_t feature, double threshold) {
  std::vector<std::size_t> left, right;
  for (auto r : rows) (dense[r][feature] <= threshold ? left : right).push_back(r);
  if (left.empty() || right.empty()) return -1.0;
  const double n = static_cast<double>(rows.size());
  return brute_gini(rows, y, k) - left.size() / n * brute_gini(left, y, k) - right.size() / n * brute_gini(right, y, k);
}

// Best gain over every feature and every threshold between consecutive
// distinct values.
double brute_best(const std::vector<std::size_t>& rows, const std::vector<std::uint32_t>& y, std::size_t k,
                  const std::vector<std::vector<double>>& dense) {
  double best = 0.0;
  for (std::size_t f = 0; f < dense[0].size(); ++f) {
    std::set<double> values;
    for (auto r : rows) values.insert(dense[r][f]);
    for (auto it = values.begin(); it != values.end() && std::next(it) != values.end(); ++it) {
      best = std::max(best, brute_gain(rows, y, k, dense, f, (*it + *std::next(it)) / 2.0));
    }
  }
  return best;
}

std::vector<double> leaf_distribution(const DecisionTree& tree, const RowView& row) {
  const auto v = tree.predict(row);
  std::vector<double> out(v.begin(), v.end());
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  for (double& x : out) x /= total;
  return out;
}

double accuracy(const std::vector<std::uint32_t>& predicted, const LabelVector& y) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == y.ids[i];
  return static_cast<double>(hit) / predicted.size();
}

Labeled xor_fixture(std::size_t copies) {
  std::vector<std::vector<double>> dense;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < copies; ++c) {
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        dense.push_back({double(a), double(b)});
        names.push_back(a != b ? "one" : "zero");
      }
    }
  }
  return {SparseMatrix::from_dense(dense), LabelVector::from_names(names)};
}

}  // namespace

TEST(GiniSplitGain, HandValues) {
  const std::vector<double> left{2, 0}, right{0, 2};
  EXPECT_NEAR(gini_split_gain(left, right), 0.5, 1e-12);
  const std::vector<double> l2{1, 1}, r2{1, 1};
  EXPECT_NEAR(gini_split_gain(l2, r2), 0.0, 1e-12);
  const std::vector<double> l3{3, 1}, r3{0, 2};
  // parent {3,3}: 0.5; left 1 - (9+1)/16 = 0.375; right 0
  EXPECT_NEAR(gini_split_gain(l3, r3), 0.5 - 4.0 / 6.0 * 0.375, 1e-12);
  EXPECT_NEAR(gini_impurity(std::vector<double>{1, 1, 2}), 1.0 - (0.0625 + 0.0625 + 0.25), 1e-12);
}

TEST(GiniTree, EveryNodeMatchesBruteForce) {
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const std::size_t rows = 5 + seed % 46;
    const std::size_t cols = 1 + seed % 4;
    const std::size_t classes = 2 + seed % 2;
    const auto data = random_small(seed, rows, cols, classes);
    if (data.y.n_classes() < 2) continue;
    const auto dense = data.x.to_dense();
    const ColumnIndex index(data.x);
    const std::vector<double> weights(rows, 1.0);
    TreeGrowth growth;
    growth.max_depth = 4;
    Rng rng(seed);
    const auto tree = grow_gini_tree(index, data.y.ids, data.y.n_classes(), weights, growth, rng);

    // rows reaching each node, and node depth
    std::vector<std::vector<std::size_t>> reach(tree.nodes.size());
    std::vector<std::size_t> depth(tree.nodes.size(), 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto view = data.x.row(r);
      std::int32_t node = 0;
      std::size_t d = 0;
      while (true) {
        reach[node].push_back(r);
        depth[node] = d++;
        const auto& n = tree.nodes[node];
        if (n.feature < 0) break;
        node = view.value(static_cast<std::uint32_t>(n.feature)) <= n.threshold ? n.left : n.right;
      }
    }
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      const auto& n = tree.nodes[id];
      const double best = brute_best(reach[id], data.y.ids, data.y.n_classes(), dense);
      if (n.feature >= 0) {
        EXPECT_GE(n.gain, 0.0);
        EXPECT_NEAR(n.gain, best, 1e-9) << "seed " << seed << " node " << id;
        EXPECT_NEAR(n.gain,
                    brute_gain(reach[id], data.y.ids, data.y.n_classes(), dense, n.feature, n.threshold), 1e-9);
        ++checked;
      } else if (depth[id] < growth.max_depth) {
        EXPECT_LE(best, growth.min_gain) << "seed " << seed << " leaf " << id;
      }
    }
  }
  EXPECT_GT(checked, 100u);
}

TEST(RandomForest, SeparableAndXor) {
  const auto sep = SparseMatrix::from_dense({{0, 1}, {1, 1}, {5, 0}, {6, 0}});
  const std::vector<std::string> names{"a", "a", "b", "b"};
  const auto y = LabelVector::from_names(names);
  RfParams p;
  p.seed = 3;
  EXPECT_EQ(accuracy(predict(fit_random_forest(sep, y, p), sep), y), 1.0);

  const auto x = xor_fixture(5);
  p.max_depth = 2;
  EXPECT_EQ(accuracy(predict(fit_random_forest(x.x, x.y, p), x.x), x.y), 1.0);
}

TEST(RandomForest, Deterministic) {
  const auto d = random_small(5, 50, 6, 3);
  RfParams p;
  p.seed = 42;
  p.n_estimators = 20;
  const auto a = predict_proba(fit_random_forest(d.x, d.y, p), d.x);
  p.jobs = 4;
  const auto b = predict_proba(fit_random_forest(d.x, d.y, p), d.x);
  EXPECT_EQ(a, b);
}

TEST(RandomForest, ProbaIsMeanOfLeafDistributions) {
  const auto d = random_small(8, 40, 4, 3);
  RfParams p;
  p.seed = 1;
  p.n_estimators = 3;
  const auto model = fit_random_forest(d.x, d.y, p);
  const auto& forest = std::get<ForestState>(model.state);
  ASSERT_EQ(forest.trees.size(), 3u);
  const auto proba = predict_proba(model, d.x);
  for (std::size_t r = 0; r < d.x.n_rows(); ++r) {
    std::vector<double> mean(model.classes.size(), 0.0);
    for (const auto& tree : forest.trees) {
      const auto leaf = leaf_distribution(tree, d.x.row(r));
      for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += leaf[c] / 3.0;
    }
    for (std::size_t c = 0; c < mean.size(); ++c) EXPECT_NEAR(proba[r][c], mean[c], 1e-12);
  }
}

TEST(RandomForest, Errors) {
  const auto x = SparseMatrix::from_dense({{1}, {2}});
  const std::vector<std::string> one{"a", "a"};
  EXPECT_EQ(code_of([&] { fit_random_forest(x, LabelVector::from_names(one), {}); }), ErrorCode::SingleClass);
  EXPECT_EQ(code_of([&] { fit_random_forest(SparseMatrix{}, LabelVector{}, {}); }), ErrorCode::EmptyMatrix);
  const std::vector<std::string> three{"a", "b", "a"};
  EXPECT_EQ(code_of([&] { fit_random_forest(x, LabelVector::from_names(three), {}); }), ErrorCode::LengthMismatch);
}

TEST(RandomForest, DegenerateSingleClassModel) {
  const auto x = SparseMatrix::from_dense({{1}, {2}});
  const std::vector<std::string> one{"a", "a"};
  const auto model = detail::fit_random_forest_unchecked(x, LabelVector::from_names(one), {});
  const auto proba = predict_proba(model, x);
  EXPECT_EQ(proba[0], std::vector<double>{1.0});
}

TEST(Predict, ArgmaxOfProbaAndSumsToOne) {
  const auto train = random_small(21, 50, 5, 3);
  const auto queries = random_small(22, 1000, 5, 3);
  RfParams rp;
  rp.n_estimators = 15;
  GbtParams gp;
  gp.n_rounds = 15;
  KnnParams kp;
  for (const auto& model : {fit_random_forest(train.x, train.y, rp), fit_gbt(train.x, train.y, gp),
                            fit_knn(train.x, train.y, kp)}) {
    const auto proba = predict_proba(model, queries.x);
    const auto labels = predict(model, queries.x);
    for (std::size_t r = 0; r < proba.size(); ++r) {
      EXPECT_NEAR(std::accumulate(proba[r].begin(), proba[r].end(), 0.0), 1.0, 1e-9);
      for (double v : proba[r]) EXPECT_GE(v, 0.0);
      const auto best = std::max_element(proba[r].begin(), proba[r].end()) - proba[r].begin();
      EXPECT_EQ(labels[r], static_cast<std::uint32_t>(best));
    }
  }
}

TEST(Predict, WidthMismatch) {
  const auto d = random_small(3, 20, 4, 2);
  const auto model = fit_knn(d.x, d.y, {});
  const auto narrow = SparseMatrix::from_dense({{1, 2}});
  EXPECT_EQ(code_of([&] { predict(model, narrow); }), ErrorCode::WidthMismatch);
}

TEST(Gbt, LossNonIncreasingAtFullSubsample) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto d = random_small(100 + seed, 50, 5, 2 + seed % 3);
    GbtParams p;
    p.subsample = 1.0;
    p.n_rounds = 40;
    p.seed = seed;
    const auto model = fit_gbt(d.x, d.y, p);
    const auto& loss = std::get<BoostedState>(model.state).loss_history;
    ASSERT_EQ(loss.size(), 41u);
    for (std::size_t i = 1; i < loss.size(); ++i) EXPECT_LE(loss[i], loss[i - 1]) << "seed " << seed << " round " << i;
  }
}

TEST(Gbt, SeparableFitsAndZeroRateGivesPrior) {
  const auto x = SparseMatrix::from_dense({{0, 1}, {1, 1}, {0, 2}, {5, 0}, {6, 0}, {7, 1}});
  GbtParams p;
  p.n_rounds = 50;
  p.subsample = 1.0;
  // hessians start at 0.25, so min_child_weight=1 needs 4+ rows per side
  std::vector<std::vector<double>> dense;
  std::vector<std::string> names;
  for (int copy = 0; copy < 4; ++copy) {
    for (const auto& row : x.to_dense()) dense.push_back(row);
    for (const char* n : {"a", "a", "a", "b", "b", "b"}) names.push_back(n);
  }
  const auto big = SparseMatrix::from_dense(dense);
  const auto y = LabelVector::from_names(names);
  EXPECT_EQ(accuracy(predict(fit_gbt(big, y, p), big), y), 1.0);

  const std::vector<std::string> skewed{"a", "a", "a", "a", "b", "b"};
  p.learning_rate = 0.0;
  const auto proba = predict_proba(fit_gbt(x, LabelVector::from_names(skewed), p), x);
  for (const auto& row : proba) {
    EXPECT_NEAR(row[0], 4.0 / 6.0, 1e-12);
    EXPECT_NEAR(row[1], 2.0 / 6.0, 1e-12);
  }
}

TEST(Gbt, GradientsMatchNumericDerivative) {
  const std::vector<std::uint32_t> targets{0, 1, 2, 1};
  for (std::size_t outputs : {std::size_t{1}, std::size_t{3}}) {
    std::vector<std::uint32_t> t = targets;
    if (outputs == 1) t = {0, 1, 1, 0};
    Rng rng(4);
    std::vector<double> scores(t.size() * outputs);
    for (auto& s : scores) s = rng.uniform01() * 4.0 - 2.0;
    for (std::size_t k = 0; k < outputs; ++k) {
      std::vector<double> g(t.size()), h(t.size());
      detail::boosting_gradients(scores, outputs, t, k, g, h);
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double eps = 1e-6;
        auto up = scores, down = scores;
        up[i * outputs + k] += eps;
        down[i * outputs + k] -= eps;
        const double numeric =
            (detail::boosting_loss(up, outputs, t) - detail::boosting_loss(down, outputs, t)) / (2 * eps) * t.size();
        EXPECT_NEAR(g[i], numeric, 1e-6);
        EXPECT_GT(h[i], 0.0);
      }
    }
  }
}

TEST(Gbt, DeterministicAndColumnPermutationInvariant) {
  const auto d = random_small(77, 50, 4, 2);
  GbtParams p;
  p.subsample = 1.0;
  p.n_rounds = 20;
  const auto a = fit_gbt(d.x, d.y, p);
  EXPECT_EQ(predict_proba(a, d.x), predict_proba(fit_gbt(d.x, d.y, p), d.x));

  const std::vector<std::uint32_t> perm{3, 1, 0, 2};
  auto dense = d.x.to_dense();
  for (auto& row : dense) {
    const auto copy = row;
    for (std::size_t c = 0; c < perm.size(); ++c) row[c] = copy[perm[c]];
  }
  const auto permuted = SparseMatrix::from_dense(dense);
  EXPECT_EQ(accuracy(predict(fit_gbt(permuted, d.y, p), permuted), d.y), accuracy(predict(a, d.x), d.y));
}

TEST(Knn, HandComputedFivePointVotes) {
  // train: (0,0) A, (1,0) A, (0,2) B, (3,0) B, (0,-4)->(0,4) mirrored B; query (0,1)
  // distances 1, sqrt2, 1, sqrt10, 3; k=3 picks (0,0), (0,2), (1,0).
  const auto train = SparseMatrix::from_dense({{0, 0}, {1, 0}, {0, 2}, {3, 0}, {0, 4}});
  const std::vector<std::string> names{"A", "A", "B", "B", "B"};
  KnnParams p;
  p.n_neighbors = 3;
  const auto model = fit_knn(train, LabelVector::from_names(names), p);
  const auto query = SparseMatrix::from_dense({{0, 1}});
  const auto proba = predict_proba(model, query);
  const double wa = 1.0 + 1.0 / std::sqrt(2.0), wb = 1.0;
  EXPECT_NEAR(proba[0][0], wa / (wa + wb), 1e-9);
  EXPECT_NEAR(proba[0][1], wb / (wa + wb), 1e-9);
  EXPECT_EQ(knn_predict(model, query, p), std::vector<std::uint32_t>{0});

  // k=5 adds (3,0) at sqrt10 and (0,4) at 3, both B
  p.n_neighbors = 5;
  const auto five = predict_proba(fit_knn(train, LabelVector::from_names(names), p), query);
  const double wb5 = 1.0 + 1.0 / std::sqrt(10.0) + 1.0 / 3.0;
  EXPECT_NEAR(five[0][0], wa / (wa + wb5), 1e-9);
  EXPECT_NEAR(five[0][1], wb5 / (wa + wb5), 1e-9);

  p.n_neighbors = 3;
  p.weighting = KnnWeighting::uniform;
  const auto uniform = predict_proba(fit_knn(train, LabelVector::from_names(names), p), query);
  EXPECT_NEAR(uniform[0][0], 2.0 / 3.0, 1e-9);
}

TEST(Knn, ExactMatchAndK1) {
  const auto train = SparseMatrix::from_dense({{0, 0}, {1, 1}, {1, 1.2}, {5, 5}});
  const std::vector<std::string> names{"a", "b", "c", "c"};
  const auto y = LabelVector::from_names(names);
  KnnParams p;
  p.n_neighbors = 3;
  const auto model = fit_knn(train, y, p);
  const auto exact = SparseMatrix::from_dense({{1, 1}});
  EXPECT_EQ(knn_predict(model, exact, p), std::vector<std::uint32_t>{1});
  p.n_neighbors = 1;
  const auto near = SparseMatrix::from_dense({{4, 4}});
  EXPECT_EQ(knn_predict(fit_knn(train, y, p), near, p), std::vector<std::uint32_t>{2});
}

TEST(Knn, TiesGoToLowestClassAndTooFewNeighbors) {
  const auto train = SparseMatrix::from_dense({{1, 0}, {0, 1}});
  const std::vector<std::string> names{"y", "x"};
  KnnParams p;
  p.n_neighbors = 2;
  const auto model = fit_knn(train, LabelVector::from_names(names), p);
  const auto query = SparseMatrix::from_dense({{0, 0}});
  EXPECT_EQ(knn_predict(model, query, p), std::vector<std::uint32_t>{0});
  p.n_neighbors = 3;
  EXPECT_EQ(code_of([&] { fit_knn(train, LabelVector::from_names(names), p); }), ErrorCode::TooFewNeighbors);
}

TEST(Knn, TrainingRowOrderIrrelevantAwayFromTies) {
  const auto d = random_small(9, 40, 3, 3);
  const auto q = random_small(10, 200, 3, 3);
  KnnParams p;
  const auto base = predict_proba(fit_knn(d.x, d.y, p), q.x);
  std::vector<std::size_t> order(d.x.n_rows());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  const auto shuffled = predict_proba(fit_knn(d.x.select_rows(order), d.y.select(order), p), q.x);
  std::size_t compared = 0;
  for (std::size_t r = 0; r < base.size(); ++r) {
    // integer fixtures have many equidistant neighbours; compare only rows
    // whose k-th and (k+1)-th distances differ
    std::vector<double> dist;
    for (std::size_t t = 0; t < d.x.n_rows(); ++t) {
      double s = 0;
      for (std::uint32_t c = 0; c < 3; ++c) s += std::pow(q.x.value(r, c) - d.x.value(t, c), 2);
      dist.push_back(s);
    }
    std::sort(dist.begin(), dist.end());
    if (dist[4] == dist[5]) continue;
    ++compared;
    for (std::size_t c = 0; c < base[r].size(); ++c) EXPECT_NEAR(base[r][c], shuffled[r][c], 1e-12);
  }
  EXPECT_GT(compared, 10u);
}

TEST(ModelJson, RoundTripAllKinds) {
  const auto d = random_small(31, 50, 5, 3);
  RfParams rp;
  rp.n_estimators = 5;
  GbtParams gp;
  gp.n_rounds = 5;
  for (const auto& model : {fit_random_forest(d.x, d.y, rp), fit_gbt(d.x, d.y, gp), fit_knn(d.x, d.y, {})}) {
    const auto text = model_to_json(model);
    const auto back = model_from_json(text);
    EXPECT_EQ(back.kind, model.kind);
    EXPECT_EQ(back.classes, model.classes);
    EXPECT_EQ(predict_proba(back, d.x), predict_proba(model, d.x));
    EXPECT_EQ(model_to_json(back), text);
  }
  EXPECT_ANY_THROW(model_from_json("{\"format\":\"other\"}"));
}

TEST(FeatureImportances, Shapes) {
  const auto d = random_small(41, 50, 6, 2);
  RfParams rp;
  rp.n_estimators = 10;
  const auto rf = feature_importances(fit_random_forest(d.x, d.y, rp));
  ASSERT_EQ(rf.size(), 6u);
  EXPECT_NEAR(std::accumulate(rf.begin(), rf.end(), 0.0), 1.0, 1e-9);
  GbtParams gp;
  gp.n_rounds = 10;
  const auto gbt = feature_importances(fit_gbt(d.x, d.y, gp));
  ASSERT_EQ(gbt.size(), 6u);
  for (double v : gbt) EXPECT_GE(v, 0.0);
}
