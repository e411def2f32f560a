#include "emutriage/tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace emutriage {

ColumnIndex::ColumnIndex(const SparseMatrix& matrix) : n_rows_(matrix.n_rows()) {
  const std::size_t n_cols = matrix.n_cols();
  std::vector<std::size_t> counts(n_cols, 0);
  for (std::size_t r = 0; r < n_rows_; ++r) {
    for (auto c : matrix.row(r).cols) ++counts[c];
  }
  col_ptr_.assign(n_cols + 1, 0);
  for (std::size_t c = 0; c < n_cols; ++c) col_ptr_[c + 1] = col_ptr_[c] + counts[c];
  entries_.resize(col_ptr_.back());
  std::vector<std::size_t> fill(col_ptr_.begin(), col_ptr_.end() - 1);
  for (std::size_t r = 0; r < n_rows_; ++r) {
    const auto view = matrix.row(r);
    for (std::size_t i = 0; i < view.cols.size(); ++i) {
      entries_[fill[view.cols[i]]++] = Entry{static_cast<std::uint32_t>(r), view.values[i]};
    }
  }
  for (std::size_t c = 0; c < n_cols; ++c) {
    std::sort(entries_.begin() + static_cast<std::ptrdiff_t>(col_ptr_[c]),
              entries_.begin() + static_cast<std::ptrdiff_t>(col_ptr_[c + 1]),
              [](const Entry& a, const Entry& b) { return a.value < b.value || (a.value == b.value && a.row < b.row); });
  }
}

// ---------------------------------------------------------------------------

std::size_t DecisionTree::leaf_for(const RowView& row) const {
  std::size_t n = 0;
  while (nodes[n].feature >= 0) {
    const auto& node = nodes[n];
    const double v = row.value(static_cast<std::uint32_t>(node.feature));
    n = static_cast<std::size_t>(v <= node.threshold ? node.left : node.right);
  }
  return n;
}

std::span<const double> DecisionTree::predict(const RowView& row) const {
  const auto& leaf = nodes[leaf_for(row)];
  return std::span<const double>(values).subspan(leaf.value_offset, value_width);
}

std::size_t DecisionTree::depth() const {
  std::vector<std::size_t> level(nodes.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    deepest = std::max(deepest, level[n]);
    if (nodes[n].feature >= 0) {
      level[static_cast<std::size_t>(nodes[n].left)] = level[n] + 1;
      level[static_cast<std::size_t>(nodes[n].right)] = level[n] + 1;
    }
  }
  return deepest;
}

void DecisionTree::accumulate_importance(std::span<double> out, bool coverage_weighted) const {
  if (nodes.empty() || nodes.front().weight <= 0.0) return;
  const double root = nodes.front().weight;
  for (const auto& node : nodes) {
    if (node.feature < 0) continue;
    out[static_cast<std::size_t>(node.feature)] += coverage_weighted ? node.gain * node.weight / root : node.gain;
  }
}

double gini_impurity(std::span<const double> class_weights) {
  const double total = std::accumulate(class_weights.begin(), class_weights.end(), 0.0);
  if (total <= 0.0) return 0.0;
  double sum_sq = 0.0;
  for (double w : class_weights) sum_sq += (w / total) * (w / total);
  return 1.0 - sum_sq;
}

double gini_split_gain(std::span<const double> left, std::span<const double> right) {
  std::vector<double> parent(left.size());
  for (std::size_t i = 0; i < left.size(); ++i) parent[i] = left[i] + right[i];
  const double wl = std::accumulate(left.begin(), left.end(), 0.0);
  const double wr = std::accumulate(right.begin(), right.end(), 0.0);
  const double w = wl + wr;
  if (w <= 0.0) return 0.0;
  return gini_impurity(parent) - wl / w * gini_impurity(left) - wr / w * gini_impurity(right);
}

// ---------------------------------------------------------------------------
// Level-wise exact greedy growth. Stats are flat double arrays whose slot 0
// is the summed sample weight; the criterion owns the remaining slots.

namespace {

class GiniCriterion {
 public:
  GiniCriterion(std::span<const std::uint32_t> labels, std::size_t n_classes, std::span<const double> weights,
                double min_leaf_weight)
      : labels_(labels), n_classes_(n_classes), weights_(weights), min_leaf_(min_leaf_weight) {}

  std::size_t width() const { return 1 + n_classes_; }
  std::size_t value_width() const { return n_classes_; }

  void add_row(double* s, std::uint32_t r) const {
    const double w = weights_[r];
    s[0] += w;
    s[1 + labels_[r]] += w;
  }

  bool splittable(const double* s) const {
    return s[0] >= 2.0 * min_leaf_ && gini_impurity(std::span<const double>(s + 1, n_classes_)) > 0.0;
  }

  bool valid(const double* left, const double* right) const {
    return left[0] >= min_leaf_ && right[0] >= min_leaf_ && left[0] > 0.0 && right[0] > 0.0;
  }

  double gain(const double* parent, const double* left, const double* right) const {
    const double w = parent[0];
    return gini_impurity(std::span<const double>(parent + 1, n_classes_)) -
           left[0] / w * gini_impurity(std::span<const double>(left + 1, n_classes_)) -
           right[0] / w * gini_impurity(std::span<const double>(right + 1, n_classes_));
  }

  void leaf_value(const double* s, double* out) const {
    for (std::size_t k = 0; k < n_classes_; ++k) out[k] = s[0] > 0.0 ? s[1 + k] / s[0] : 0.0;
  }

 private:
  std::span<const std::uint32_t> labels_;
  std::size_t n_classes_;
  std::span<const double> weights_;
  double min_leaf_;
};

class NewtonCriterion {
 public:
  NewtonCriterion(std::span<const double> g, std::span<const double> h, std::span<const double> weights,
                  double lambda, double min_child_weight)
      : g_(g), h_(h), weights_(weights), lambda_(lambda), min_child_(min_child_weight) {}

  std::size_t width() const { return 3; }
  std::size_t value_width() const { return 1; }

  void add_row(double* s, std::uint32_t r) const {
    const double w = weights_[r];
    s[0] += w;
    s[1] += w * g_[r];
    s[2] += w * h_[r];
  }

  bool splittable(const double* s) const { return s[0] >= 2.0 && s[2] >= 2.0 * min_child_; }

  bool valid(const double* left, const double* right) const {
    return left[0] > 0.0 && right[0] > 0.0 && left[2] >= min_child_ && right[2] >= min_child_;
  }

  double gain(const double* parent, const double* left, const double* right) const {
    auto score = [this](const double* s) { return s[1] * s[1] / (s[2] + lambda_); };
    return 0.5 * (score(left) + score(right) - score(parent));
  }

  void leaf_value(const double* s, double* out) const { out[0] = -s[1] / (s[2] + lambda_); }

 private:
  std::span<const double> g_;
  std::span<const double> h_;
  std::span<const double> weights_;
  double lambda_;
  double min_child_;
};

struct Candidate {
  std::int32_t node = -1;
  std::vector<std::uint32_t> features;  // to examine in the current round
  std::vector<std::uint32_t> tried;
  std::size_t nonconstant = 0;
  double best_gain = -std::numeric_limits<double>::infinity();
  std::int32_t best_feature = -1;
  double best_threshold = 0.0;
  std::vector<double> best_left;
};

template <typename Criterion>
class Grower {
 public:
  Grower(const ColumnIndex& columns, const Criterion& crit, std::span<const double> weights,
         const TreeGrowth& growth, Rng& rng)
      : x_(columns), crit_(crit), weights_(weights), growth_(growth), rng_(rng), width_(crit.width()) {}

  DecisionTree run() {
    const std::size_t n = x_.n_rows();
    const std::size_t m = x_.n_cols();
    tree_.value_width = crit_.value_width();
    pos_.assign(n, -1);

    tree_.nodes.emplace_back();
    totals_.emplace_back(width_, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      if (weights_[r] > 0.0) {
        pos_[r] = 0;
        crit_.add_row(totals_[0].data(), static_cast<std::uint32_t>(r));
      }
    }

    scratch_.resize(m);
    std::iota(scratch_.begin(), scratch_.end(), 0u);
    mtry_ = growth_.features_per_node == 0 ? m : std::min(growth_.features_per_node, m);

    std::vector<std::int32_t> frontier{0};
    for (std::size_t depth = 0; !frontier.empty(); ++depth) {
      std::vector<Candidate> cands;
      for (auto node : frontier) {
        if (depth < growth_.max_depth && m > 0 && crit_.splittable(totals_[node].data())) {
          Candidate c;
          c.node = node;
          cands.push_back(std::move(c));
        } else {
          make_leaf(node);
        }
      }
      search(cands);

      std::vector<std::int32_t> next;
      std::vector<std::size_t> split_nodes;
      for (auto& c : cands) {
        if (c.best_feature < 0 || !(c.best_gain > growth_.min_gain)) {
          make_leaf(c.node);
          continue;
        }
        split(c, next);
        split_nodes.push_back(static_cast<std::size_t>(c.node));
      }
      partition(split_nodes);
      frontier = std::move(next);
    }
    return std::move(tree_);
  }

 private:
  void make_leaf(std::int32_t node) {
    auto& nd = tree_.nodes[static_cast<std::size_t>(node)];
    nd.weight = totals_[static_cast<std::size_t>(node)][0];
    nd.value_offset = static_cast<std::uint32_t>(tree_.values.size());
    tree_.values.resize(tree_.values.size() + tree_.value_width);
    crit_.leaf_value(totals_[static_cast<std::size_t>(node)].data(), tree_.values.data() + nd.value_offset);
  }

  void split(const Candidate& c, std::vector<std::int32_t>& next) {
    const auto node = static_cast<std::size_t>(c.node);
    const auto left_id = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    tree_.nodes.emplace_back();
    std::vector<double> right(width_);
    for (std::size_t i = 0; i < width_; ++i) right[i] = totals_[node][i] - c.best_left[i];
    totals_.push_back(c.best_left);
    totals_.push_back(std::move(right));

    auto& nd = tree_.nodes[node];
    nd.feature = c.best_feature;
    nd.threshold = c.best_threshold;
    nd.gain = c.best_gain;
    nd.weight = totals_[node][0];
    nd.left = left_id;
    nd.right = left_id + 1;
    next.push_back(left_id);
    next.push_back(left_id + 1);
  }

  void partition(const std::vector<std::size_t>& split_nodes) {
    if (split_nodes.empty()) return;
    std::vector<std::int32_t> next_pos = pos_;
    for (auto node : split_nodes) {
      const auto& nd = tree_.nodes[node];
      for (const auto& e : x_.column(static_cast<std::size_t>(nd.feature))) {
        if (pos_[e.row] == static_cast<std::int32_t>(node)) next_pos[e.row] = e.value <= nd.threshold ? nd.left : nd.right;
      }
    }
    for (std::size_t r = 0; r < pos_.size(); ++r) {
      if (pos_[r] < 0 || next_pos[r] != pos_[r]) continue;
      const auto& nd = tree_.nodes[static_cast<std::size_t>(pos_[r])];
      if (nd.feature >= 0) next_pos[r] = 0.0 <= nd.threshold ? nd.left : nd.right;
    }
    pos_ = std::move(next_pos);
  }

  // Draws up to `count` untried features for a candidate.
  void draw_features(Candidate& c, std::size_t count) {
    const std::size_t m = scratch_.size();
    c.features.clear();
    if (mtry_ >= m) {
      if (c.tried.empty()) {
        c.features = scratch_;
        std::sort(c.features.begin(), c.features.end());
      }
    } else if (c.tried.empty()) {
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng_.uniform_index(m - i);
        std::swap(scratch_[i], scratch_[j]);
        c.features.push_back(scratch_[i]);
      }
    } else {
      std::vector<char> used(m, 0);
      for (auto f : c.tried) used[f] = 1;
      std::vector<std::uint32_t> pool;
      for (std::uint32_t f = 0; f < m; ++f) {
        if (!used[f]) pool.push_back(f);
      }
      for (std::size_t i = 0; i < count && i < pool.size(); ++i) {
        const std::size_t j = i + rng_.uniform_index(pool.size() - i);
        std::swap(pool[i], pool[j]);
        c.features.push_back(pool[i]);
      }
    }
    std::sort(c.features.begin(), c.features.end());
    c.tried.insert(c.tried.end(), c.features.begin(), c.features.end());
  }

  void search(std::vector<Candidate>& cands) {
    for (auto& c : cands) draw_features(c, mtry_);
    std::vector<std::size_t> active(cands.size());
    std::iota(active.begin(), active.end(), 0);
    while (!active.empty()) {
      evaluate(cands, active);
      std::vector<std::size_t> again;
      for (auto i : active) {
        auto& c = cands[i];
        if (mtry_ >= scratch_.size() || c.nonconstant >= mtry_ || c.tried.size() >= scratch_.size()) continue;
        draw_features(c, mtry_ - c.nonconstant);
        if (!c.features.empty()) again.push_back(i);
      }
      active = std::move(again);
    }
  }

  struct ScanState {
    std::vector<double> left;
    std::vector<double> zero;
    double last = 0.0;
    bool has_last = false;
    bool zero_done = false;
    std::size_t groups = 0;
  };

  void evaluate(std::vector<Candidate>& cands, const std::vector<std::size_t>& active) {
    // (feature, candidate) pairs grouped by feature so each column is scanned once.
    std::vector<std::pair<std::uint32_t, std::size_t>> work;
    for (auto i : active) {
      for (auto f : cands[i].features) work.emplace_back(f, i);
    }
    std::sort(work.begin(), work.end());

    if (slot_of_node_.size() < tree_.nodes.size()) slot_of_node_.resize(tree_.nodes.size(), -1);

    for (std::size_t begin = 0; begin < work.size();) {
      const std::uint32_t feature = work[begin].first;
      std::size_t end = begin;
      while (end < work.size() && work[end].first == feature) ++end;

      std::vector<std::size_t> group;
      for (std::size_t i = begin; i < end; ++i) {
        slot_of_node_[static_cast<std::size_t>(cands[work[i].second].node)] = static_cast<std::int32_t>(group.size());
        group.push_back(work[i].second);
      }
      scan_feature(feature, cands, group);
      for (auto ci : group) slot_of_node_[static_cast<std::size_t>(cands[ci].node)] = -1;
      begin = end;
    }
  }

  void scan_feature(std::uint32_t feature, std::vector<Candidate>& cands, const std::vector<std::size_t>& group) {
    const auto column = x_.column(feature);
    std::vector<ScanState> states(group.size());
    for (auto& s : states) {
      s.left.assign(width_, 0.0);
      s.zero.assign(width_, 0.0);
    }

    auto slot_of = [&](std::uint32_t row) -> std::int32_t {
      const auto node = pos_[row];
      return node < 0 ? -1 : slot_of_node_[static_cast<std::size_t>(node)];
    };

    // Zero block stats = node total minus the node's nonzero entries.
    for (const auto& e : column) {
      if (auto s = slot_of(e.row); s >= 0) crit_.add_row(states[static_cast<std::size_t>(s)].zero.data(), e.row);
    }
    for (std::size_t s = 0; s < group.size(); ++s) {
      const auto& total = totals_[static_cast<std::size_t>(cands[group[s]].node)];
      for (std::size_t i = 0; i < width_; ++i) states[s].zero[i] = total[i] - states[s].zero[i];
    }

    auto consider = [&](std::size_t s, double threshold) {
      auto& cand = cands[group[s]];
      const auto& total = totals_[static_cast<std::size_t>(cand.node)];
      right_.resize(width_);
      for (std::size_t i = 0; i < width_; ++i) right_[i] = total[i] - states[s].left[i];
      if (!crit_.valid(states[s].left.data(), right_.data())) return;
      const double gain = crit_.gain(total.data(), states[s].left.data(), right_.data());
      if (gain > cand.best_gain) {
        cand.best_gain = gain;
        cand.best_feature = static_cast<std::int32_t>(feature);
        cand.best_threshold = threshold;
        cand.best_left = states[s].left;
      }
    };

    auto flush_zero = [&](std::size_t s) {
      auto& st = states[s];
      st.zero_done = true;
      if (st.zero[0] <= 1e-12) return;
      if (st.has_last) consider(s, st.last / 2.0);
      for (std::size_t i = 0; i < width_; ++i) st.left[i] += st.zero[i];
      st.last = 0.0;
      st.has_last = true;
      ++st.groups;
    };

    for (const auto& e : column) {
      const auto s32 = slot_of(e.row);
      if (s32 < 0) continue;
      const auto s = static_cast<std::size_t>(s32);
      auto& st = states[s];
      if (!st.zero_done && e.value > 0.0) flush_zero(s);
      if (!st.has_last || e.value != st.last) {
        if (st.has_last) consider(s, st.last + (e.value - st.last) / 2.0);
        ++st.groups;
      }
      crit_.add_row(st.left.data(), e.row);
      st.last = e.value;
      st.has_last = true;
    }
    for (std::size_t s = 0; s < states.size(); ++s) {
      if (!states[s].zero_done) flush_zero(s);
      if (states[s].groups >= 2) ++cands[group[s]].nonconstant;
    }
  }

  const ColumnIndex& x_;
  const Criterion& crit_;
  std::span<const double> weights_;
  TreeGrowth growth_;
  Rng& rng_;
  std::size_t width_;
  std::size_t mtry_ = 0;

  DecisionTree tree_;
  std::vector<std::vector<double>> totals_;
  std::vector<std::int32_t> pos_;
  std::vector<std::int32_t> slot_of_node_;
  std::vector<std::uint32_t> scratch_;
  std::vector<double> right_;
};

}  // namespace

DecisionTree grow_gini_tree(const ColumnIndex& columns, std::span<const std::uint32_t> labels,
                            std::size_t n_classes, std::span<const double> weights, const TreeGrowth& growth,
                            Rng& rng, double min_leaf_weight) {
  const GiniCriterion crit(labels, n_classes, weights, min_leaf_weight);
  return Grower<GiniCriterion>(columns, crit, weights, growth, rng).run();
}

DecisionTree grow_newton_tree(const ColumnIndex& columns, std::span<const double> gradients,
                              std::span<const double> hessians, std::span<const double> weights,
                              const TreeGrowth& growth, Rng& rng, double reg_lambda, double min_child_weight) {
  const NewtonCriterion crit(gradients, hessians, weights, reg_lambda, min_child_weight);
  return Grower<NewtonCriterion>(columns, crit, weights, growth, rng).run();
}

}  // namespace emutriage
