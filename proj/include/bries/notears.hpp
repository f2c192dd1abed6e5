#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bries::notears {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using TabuMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Columns of observations plus the subset designated as treatments.
/// Construct through make_dataset(), which enforces the invariants.
struct CausalDataset {
  std::vector<std::string> columns;
  MatrixXd data;  // n x d, raw units
  std::vector<std::string> treatments;
  std::vector<std::string> warnings;

  Eigen::Index rows() const noexcept { return data.rows(); }
  Eigen::Index cols() const noexcept { return data.cols(); }
  int index_of(const std::string& column) const;  // -1 when absent
  bool is_treatment(int column) const;
};

/// Validates shape, names and values. Throws Error(InvalidData) for
/// non-finite values, duplicate or unknown names, and Error(ConstantColumn)
/// for zero-variance columns. Adds a warning when n < 10 d; the hard n > d
/// requirement is checked by fit(), so small datasets can still be built,
/// exported and inspected.
CausalDataset make_dataset(std::vector<std::string> columns, MatrixXd data,
                           std::vector<std::string> treatments);

struct Standardized {
  MatrixXd z;
  VectorXd mean;
  VectorXd sd;
};

/// Column-wise z-scores (population sd). A column that is already
/// standardized to within 1e-12 is copied unchanged, which makes the
/// operation idempotent bit for bit.
Standardized standardize(const MatrixXd& data);

/// Self loops plus every edge into a treatment column.
TabuMask treatment_tabu(const CausalDataset& dataset);

struct Options {
  double lambda1 = 0.1;
  double omega = 0.3;
  double h_tol = 1e-8;
  double rho_init = 1.0;
  double rho_growth = 10.0;
  double rho_max = 1e16;
  /// Required shrink factor of h between dual updates before rho grows.
  double progress_rate = 0.25;
  int max_outer = 100;
  int inner_max_iter = 100;
  double inner_tol = 1e-10;
  bool record_trace = false;
};

struct Edge {
  int from = 0;
  int to = 0;
  double weight = 0.0;  // standardized units
};

struct WeightedDag {
  std::vector<std::string> columns;
  /// weights(i, j): effect of column i on column j, standardized units.
  MatrixXd weights;
  /// Same effects rescaled to raw units: weights(i, j) * sd_j / sd_i.
  MatrixXd weights_raw;
  std::vector<Edge> edges;
  double lambda1 = 0.0;
  double omega = 0.0;
  /// Threshold actually applied; above `omega` only if thresholding at
  /// `omega` left a cycle.
  double omega_used = 0.0;
  bool omega_raised = false;
  double h_final = 0.0;
  bool converged = false;
  int outer_iterations = 0;
  double rho_final = 0.0;
  /// Per inner solve, the augmented-Lagrangian objective after every
  /// accepted step (only with Options::record_trace).
  std::vector<std::vector<double>> inner_traces;
};

/// Extra forbidden edges on top of treatment_tabu(); return true to forbid
/// the edge from -> to.
using TabuPredicate = std::function<bool(int from, int to)>;

/// Linear NOTEARS: minimizes (1/2n)||X - XW||_F^2 + lambda1 ||W||_1 subject
/// to acyclicity(W) = 0 with an augmented Lagrangian. The inner problem is
/// solved by proximal gradient (soft-thresholding for the L1 term,
/// Barzilai-Borwein step proposals, backtracking so every accepted step is
/// nonincreasing). Tabu entries are held at exactly zero. Data are
/// standardized internally. If rho reaches rho_max before h < h_tol, the
/// last iterate is returned with converged = false.
WeightedDag fit(const CausalDataset& dataset, const Options& options = {},
                const TabuPredicate& extra_tabu = {});

bool is_acyclic(int d, const std::vector<Edge>& edges);

struct Effect {
  std::string treatment;
  std::string outcome;
  double weight = 0.0;
  double weight_raw = 0.0;
};

/// Treatment-row entries of W into every non-treatment column.
std::vector<Effect> treatment_effects(const CausalDataset& dataset, const WeightedDag& dag);

/// "from,to,weight" edge list.
std::string edges_csv(const WeightedDag& dag);
/// Hyperparameters, convergence, edges, treatment effects and the full W.
std::string report_json(const CausalDataset& dataset, const WeightedDag& dag);

}  // namespace bries::notears
