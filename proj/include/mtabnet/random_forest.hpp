#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "mtabnet/errors.hpp"
#include "mtabnet/random.hpp"

namespace mtabnet {

struct ForestConfig {
  std::size_t n_trees = 50;
  std::size_t max_depth = 8;
  std::size_t min_leaf = 1;
  /// Class labels are small non-negative integers stored as doubles.
  bool classification = false;
};

/// CART forest over a dense row-major matrix: bootstrap rows, sqrt(d)
/// candidate features per split, variance (regression) or Gini impurity.
class RandomForest {
 public:
  RandomForest() = default;

  void fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y, const ForestConfig& config,
           std::uint64_t seed) {
    if (x.empty() || x.size() != y.size()) throw DataError("random forest: need matching non-empty x and y");
    config_ = config;
    d_ = x[0].size();
    if (d_ == 0) throw DataError("random forest: no predictor columns");
    n_classes_ = 0;
    if (config.classification) {
      for (double v : y) n_classes_ = std::max(n_classes_, static_cast<std::size_t>(v) + 1);
    }
    trees_.clear();
    Rng rng(seed);
    const std::size_t n = x.size();
    for (std::size_t t = 0; t < config.n_trees; ++t) {
      std::vector<std::size_t> rows(n);
      for (std::size_t& r : rows) r = rng.index(n);
      Tree tree;
      grow(tree, x, y, rows, 0, rng);
      trees_.push_back(std::move(tree));
    }
  }

  double predict(const std::vector<double>& row) const {
    if (trees_.empty()) throw ContractError("random forest: predict before fit");
    if (!config_.classification) {
      double s = 0.0;
      for (const Tree& t : trees_) s += leaf(t, row);
      return s / static_cast<double>(trees_.size());
    }
    std::vector<std::size_t> votes(n_classes_, 0);
    for (const Tree& t : trees_) ++votes[static_cast<std::size_t>(leaf(t, row))];
    return static_cast<double>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }

 private:
  struct Node {
    std::size_t feature = 0;
    double threshold = 0.0;
    std::int64_t left = -1;
    std::int64_t right = -1;
    double value = 0.0;
  };
  using Tree = std::vector<Node>;

  static double leaf(const Tree& t, const std::vector<double>& row) {
    std::size_t i = 0;
    while (t[i].left >= 0) i = static_cast<std::size_t>(row[t[i].feature] <= t[i].threshold ? t[i].left : t[i].right);
    return t[i].value;
  }

  double leaf_value(const std::vector<double>& y, const std::vector<std::size_t>& rows) const {
    if (!config_.classification) {
      double s = 0.0;
      for (std::size_t r : rows) s += y[r];
      return s / static_cast<double>(rows.size());
    }
    std::vector<std::size_t> counts(n_classes_, 0);
    for (std::size_t r : rows) ++counts[static_cast<std::size_t>(y[r])];
    return static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }

  /// Impurity of a partition summary; lower is better.
  struct Stats {
    double n = 0.0, sum = 0.0, sum2 = 0.0;
    std::vector<double> counts;
  };

  double impurity(const Stats& s) const {
    if (s.n == 0.0) return 0.0;
    if (!config_.classification) return s.sum2 - s.sum * s.sum / s.n;
    double g = 1.0;
    for (double c : s.counts) g -= (c / s.n) * (c / s.n);
    return g * s.n;
  }

  void add(Stats& s, double v, double sign) const {
    s.n += sign;
    if (config_.classification) {
      s.counts[static_cast<std::size_t>(v)] += sign;
    } else {
      s.sum += sign * v;
      s.sum2 += sign * v * v;
    }
  }

  std::size_t grow(Tree& tree, const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                   std::vector<std::size_t>& rows, std::size_t depth, Rng& rng) {
    const std::size_t id = tree.size();
    tree.push_back({});
    tree[id].value = leaf_value(y, rows);
    if (depth >= config_.max_depth || rows.size() < 2 * config_.min_leaf) return id;

    Stats total;
    total.counts.assign(n_classes_, 0.0);
    for (std::size_t r : rows) add(total, y[r], 1.0);
    const double parent = impurity(total);
    if (parent <= 1e-12) return id;

    std::vector<std::size_t> features(d_);
    std::iota(features.begin(), features.end(), 0);
    rng.shuffle(features);
    const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d_))));

    double best_gain = 1e-12, best_threshold = 0.0;
    std::size_t best_feature = d_;
    std::vector<std::size_t> order = rows;
    for (std::size_t fi = 0; fi < m; ++fi) {
      const std::size_t f = features[fi];
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a][f] < x[b][f] || (x[a][f] == x[b][f] && a < b);
      });
      Stats left, right = total;
      left.counts.assign(n_classes_, 0.0);
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        add(left, y[order[i]], 1.0);
        add(right, y[order[i]], -1.0);
        const double a = x[order[i]][f], b = x[order[i + 1]][f];
        if (a == b || left.n < config_.min_leaf || right.n < config_.min_leaf) continue;
        const double gain = parent - impurity(left) - impurity(right);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (a + b);
        }
      }
    }
    if (best_feature == d_) return id;

    std::vector<std::size_t> lrows, rrows;
    for (std::size_t r : rows) (x[r][best_feature] <= best_threshold ? lrows : rrows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    tree[id].feature = best_feature;
    tree[id].threshold = best_threshold;
    const std::size_t l = grow(tree, x, y, lrows, depth + 1, rng);
    const std::size_t r = grow(tree, x, y, rrows, depth + 1, rng);
    tree[id].left = static_cast<std::int64_t>(l);
    tree[id].right = static_cast<std::int64_t>(r);
    return id;
  }

  ForestConfig config_;
  std::size_t d_ = 0;
  std::size_t n_classes_ = 0;
  std::vector<Tree> trees_;
};

}  // namespace mtabnet
