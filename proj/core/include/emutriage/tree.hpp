#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "emutriage/features.hpp"
#include "emutriage/rng.hpp"

namespace emutriage {

/// Column-major copy of a SparseMatrix with each column's nonzeros sorted
/// ascending by (value, row). Implicit zeros are never materialized.
class ColumnIndex {
 public:
  struct Entry {
    std::uint32_t row;
    double value;
  };

  explicit ColumnIndex(const SparseMatrix& matrix);

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return col_ptr_.size() - 1; }
  std::span<const Entry> column(std::size_t c) const {
    return std::span<const Entry>(entries_).subspan(col_ptr_[c], col_ptr_[c + 1] - col_ptr_[c]);
  }

 private:
  std::size_t n_rows_ = 0;
  std::vector<std::size_t> col_ptr_;
  std::vector<Entry> entries_;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // value <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  double gain = 0.0;    // criterion gain of this node's split
  double weight = 0.0;  // summed sample weight reaching the node
  std::uint32_t value_offset = 0;
};

class DecisionTree {
 public:
  std::size_t value_width = 1;
  std::vector<TreeNode> nodes;
  std::vector<double> values;  // value_width doubles per leaf

  std::size_t leaf_for(const RowView& row) const;
  std::span<const double> predict(const RowView& row) const;
  std::size_t depth() const;

  /// Adds each split's gain to its feature; `coverage_weighted` scales by
  /// the node's share of the root weight (mean decrease in impurity).
  void accumulate_importance(std::span<double> out, bool coverage_weighted) const;
};

struct TreeGrowth {
  std::size_t max_depth = 1;
  /// 0 = all columns. Otherwise columns are drawn per node until this many
  /// non-constant ones have been examined or the pool runs out.
  std::size_t features_per_node = 0;
  double min_gain = 1e-12;
};

/// CART with Gini impurity; leaf values are class distributions.
/// `min_leaf_weight` bounds the summed weight on each side of a split.
DecisionTree grow_gini_tree(const ColumnIndex& columns, std::span<const std::uint32_t> labels,
                            std::size_t n_classes, std::span<const double> weights, const TreeGrowth& growth,
                            Rng& rng, double min_leaf_weight = 1.0);

/// Second-order regression tree on per-row gradient/hessian pairs. Leaf
/// value is -G / (H + lambda).
DecisionTree grow_newton_tree(const ColumnIndex& columns, std::span<const double> gradients,
                              std::span<const double> hessians, std::span<const double> weights,
                              const TreeGrowth& growth, Rng& rng, double reg_lambda, double min_child_weight);

double gini_impurity(std::span<const double> class_weights);

/// imp(parent) - wL/W imp(left) - wR/W imp(right).
double gini_split_gain(std::span<const double> left, std::span<const double> right);

}  // namespace emutriage
