#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace bries::dml {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ForestParams {
  int trees = 100;
  int max_depth = 8;
  int min_leaf = 5;
  /// Fraction of features tried at each split; <= 0 means sqrt(p)/p.
  double feature_fraction = 0.0;
  bool bootstrap = true;
  std::uint64_t seed = 0;
  /// Worker threads for tree fitting; 0 picks hardware concurrency. The
  /// fitted forest does not depend on this value.
  int threads = 0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

/// CART regression tree: variance-reduction splits, midpoint thresholds.
class RegressionTree {
 public:
  double predict_point(const Eigen::Ref<const VectorXd>& x) const;
  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }

 private:
  friend class TreeBuilder;
  std::vector<TreeNode> nodes_;
};

class RegressionForest {
 public:
  /// Throws Error(EmptyData) for n < 1 and Error(InvalidConfig) for bad
  /// parameters. Tree t draws from a generator seeded by
  /// splitmix64(seed + t), so results are independent of thread scheduling.
  static RegressionForest fit(const MatrixXd& x, const VectorXd& y, const ForestParams& params);

  /// Mean of the tree outputs.
  double predict_point(const Eigen::Ref<const VectorXd>& x) const;
  VectorXd predict(const MatrixXd& x) const;

  std::size_t size() const noexcept { return trees_.size(); }
  const RegressionTree& tree(std::size_t i) const { return trees_[i]; }

 private:
  std::vector<RegressionTree> trees_;
};

/// Ridge regression on column-standardized inputs with an unpenalized
/// intercept. Zero-variance columns get a zero coefficient.
class RidgeRegression {
 public:
  static RidgeRegression fit(const MatrixXd& x, const VectorXd& y, double penalty);
  double predict_point(const Eigen::Ref<const VectorXd>& x) const;
  VectorXd predict(const MatrixXd& x) const;
  const VectorXd& coefficients() const noexcept { return beta_; }

 private:
  VectorXd mean_, sd_, beta_;
  double intercept_ = 0.0;
};

}  // namespace bries::dml
