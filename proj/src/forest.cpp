#include "bries/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "bries/error.hpp"
#include "bries/util/random.hpp"

namespace bries::dml {

namespace {

// Mean computed as first + mean of offsets, so a constant input returns that
// constant exactly.
double stable_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double first = v.front();
  double acc = 0.0;
  for (double x : v) acc += x - first;
  return first + acc / static_cast<double>(v.size());
}

}  // namespace

class TreeBuilder {
 public:
  TreeBuilder(const MatrixXd& x, const VectorXd& y, const ForestParams& params, int mtry,
              util::Rng& rng)
      : x_(x), y_(y), params_(params), mtry_(mtry), rng_(rng) {
    features_.resize(static_cast<std::size_t>(x.cols()));
    std::iota(features_.begin(), features_.end(), 0);
  }

  RegressionTree build(std::vector<int> rows) {
    RegressionTree tree;
    grow(tree, rows, 0);
    return tree;
  }

 private:
  int grow(RegressionTree& tree, std::vector<int>& rows, int depth) {
    const int node_id = static_cast<int>(tree.nodes_.size());
    tree.nodes_.emplace_back();
    std::vector<double> values;
    values.reserve(rows.size());
    for (int r : rows) values.push_back(y_(r));
    tree.nodes_[static_cast<std::size_t>(node_id)].value = stable_mean(values);

    const int n = static_cast<int>(rows.size());
    if (depth >= params_.max_depth || n < 2 * params_.min_leaf || x_.cols() == 0) return node_id;
    if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); }))
      return node_id;

    double total = 0.0;
    for (double v : values) total += v;
    const double parent_score = total * total / n;

    // Partial Fisher-Yates to pick mtry candidate features.
    for (int k = 0; k < mtry_; ++k) {
      const std::size_t j = static_cast<std::size_t>(k) + rng_.below(features_.size() - static_cast<std::size_t>(k));
      std::swap(features_[static_cast<std::size_t>(k)], features_[j]);
    }

    int best_feature = -1;
    double best_gain = 0.0;
    double best_threshold = 0.0;
    std::vector<int> order(rows);
    for (int k = 0; k < mtry_; ++k) {
      const int f = features_[static_cast<std::size_t>(k)];
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double xa = x_(a, f), xb = x_(b, f);
        return xa < xb || (xa == xb && a < b);
      });
      double left_sum = 0.0;
      for (int i = 0; i < n - 1; ++i) {
        left_sum += y_(order[static_cast<std::size_t>(i)]);
        const int nl = i + 1;
        const int nr = n - nl;
        if (nl < params_.min_leaf) continue;
        if (nr < params_.min_leaf) break;
        const double xv = x_(order[static_cast<std::size_t>(i)], f);
        const double xn = x_(order[static_cast<std::size_t>(i) + 1], f);
        if (xv == xn) continue;
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (xv + xn);
        }
      }
    }
    if (best_feature < 0 || best_gain <= 1e-12 * std::max(1.0, std::abs(parent_score))) return node_id;

    std::vector<int> left_rows, right_rows;
    for (int r : rows) (x_(r, best_feature) <= best_threshold ? left_rows : right_rows).push_back(r);
    if (left_rows.empty() || right_rows.empty()) return node_id;
    rows.clear();
    rows.shrink_to_fit();

    const int l = grow(tree, left_rows, depth + 1);
    const int r = grow(tree, right_rows, depth + 1);
    auto& node = tree.nodes_[static_cast<std::size_t>(node_id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return node_id;
  }

  const MatrixXd& x_;
  const VectorXd& y_;
  const ForestParams& params_;
  int mtry_;
  util::Rng& rng_;
  std::vector<int> features_;
};

double RegressionTree::predict_point(const Eigen::Ref<const VectorXd>& x) const {
  int i = 0;
  while (true) {
    const auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.feature < 0) return node.value;
    i = x(node.feature) <= node.threshold ? node.left : node.right;
  }
}

RegressionForest RegressionForest::fit(const MatrixXd& x, const VectorXd& y, const ForestParams& params) {
  const auto n = x.rows();
  if (n < 1 || y.size() != n) throw Error(ErrorCode::EmptyData, "forest needs matching, non-empty X and y");
  if (params.trees < 1 || params.max_depth < 0 || params.min_leaf < 1)
    throw Error(ErrorCode::InvalidConfig, "forest needs trees >= 1, max_depth >= 0, min_leaf >= 1");
  if (!x.allFinite() || !y.allFinite()) throw Error(ErrorCode::InvalidData, "forest input is not finite");

  const auto p = static_cast<int>(x.cols());
  int mtry = p;
  if (p > 0) {
    const double frac = params.feature_fraction > 0.0 ? params.feature_fraction
                                                      : std::sqrt(static_cast<double>(p)) / p;
    mtry = std::clamp(static_cast<int>(std::lround(frac * p)), 1, p);
  }

  RegressionForest forest;
  forest.trees_.resize(static_cast<std::size_t>(params.trees));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int t = next.fetch_add(1); t < params.trees; t = next.fetch_add(1)) {
      util::Rng rng(util::splitmix64(params.seed + static_cast<std::uint64_t>(t)));
      std::vector<int> rows(static_cast<std::size_t>(n));
      if (params.bootstrap) {
        for (auto& r : rows) r = static_cast<int>(rng.below(static_cast<std::size_t>(n)));
      } else {
        std::iota(rows.begin(), rows.end(), 0);
      }
      TreeBuilder builder(x, y, params, mtry, rng);
      forest.trees_[static_cast<std::size_t>(t)] = builder.build(std::move(rows));
    }
  };

  int threads = params.threads > 0 ? params.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, params.trees);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  return forest;
}

double RegressionForest::predict_point(const Eigen::Ref<const VectorXd>& x) const {
  const double first = trees_.front().predict_point(x);
  double acc = 0.0;
  for (std::size_t t = 1; t < trees_.size(); ++t) acc += trees_[t].predict_point(x) - first;
  return first + acc / static_cast<double>(trees_.size());
}

VectorXd RegressionForest::predict(const MatrixXd& x) const {
  VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_point(x.row(i).transpose());
  return out;
}

RidgeRegression RidgeRegression::fit(const MatrixXd& x, const VectorXd& y, double penalty) {
  const auto n = x.rows();
  const auto p = x.cols();
  if (n < 1 || y.size() != n) throw Error(ErrorCode::EmptyData, "ridge needs matching, non-empty X and y");
  if (penalty < 0.0) throw Error(ErrorCode::InvalidConfig, "ridge penalty must be >= 0");
  RidgeRegression model;
  model.mean_ = x.colwise().mean().transpose();
  model.sd_ = VectorXd::Ones(p);
  MatrixXd z(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double sd = std::sqrt((x.col(j).array() - model.mean_(j)).square().sum() / static_cast<double>(n));
    if (sd > 0.0) {
      model.sd_(j) = sd;
      z.col(j) = (x.col(j).array() - model.mean_(j)) / sd;
    } else {
      model.sd_(j) = 0.0;
      z.col(j).setZero();
    }
  }
  model.intercept_ = y.mean();
  const VectorXd yc = y.array() - model.intercept_;
  MatrixXd gram = z.transpose() * z;
  gram.diagonal().array() += penalty;
  model.beta_ = p == 0 ? VectorXd() : VectorXd(gram.ldlt().solve(z.transpose() * yc));
  for (Eigen::Index j = 0; j < p; ++j)
    if (model.sd_(j) == 0.0) model.beta_(j) = 0.0;
  return model;
}

double RidgeRegression::predict_point(const Eigen::Ref<const VectorXd>& x) const {
  double out = intercept_;
  for (Eigen::Index j = 0; j < beta_.size(); ++j)
    if (sd_(j) > 0.0) out += beta_(j) * (x(j) - mean_(j)) / sd_(j);
  return out;
}

VectorXd RidgeRegression::predict(const MatrixXd& x) const {
  VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_point(x.row(i).transpose());
  return out;
}

}  // namespace bries::dml
