#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bries/error.hpp"
#include "bries/forest.hpp"
#include "bries/notears.hpp"

namespace bries::dml {

enum class Learner { Forest, Ridge };
std::string_view to_string(Learner l) noexcept;
std::optional<Learner> parse_learner(std::string_view s) noexcept;

struct AteProblem {
  VectorXd treatment;   // 0/1
  VectorXd outcome;
  MatrixXd covariates;  // n x p, p may be 0
  int folds = 5;
  Learner learner = Learner::Forest;
  ForestParams forest;
  double ridge_penalty = 1.0;
  std::uint64_t seed = 0;
};

struct FoldStats {
  int fold = 0;
  int n = 0;
  double mean_outcome_residual = 0.0;
  double mean_treatment_residual = 0.0;
  double mean_sq_treatment_residual = 0.0;
};

struct AteEstimate {
  double ate = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_used = 0;
  std::vector<FoldStats> per_fold;
  /// Fold that held out each row; row i's nuisance predictions come from
  /// models fitted on rows whose fold differs.
  std::vector<int> fold_of_row;
  VectorXd outcome_residuals;
  VectorXd treatment_residuals;
};

/// Fold assignment stratified by treatment value: rows of each arm are
/// shuffled with `seed` and dealt round-robin, treated rows first.
std::vector<int> stratified_folds(const VectorXd& treatment, int folds, std::uint64_t seed);

/// Fits the configured learner on (x_train, y_train) and predicts x_test.
VectorXd fit_predict(const AteProblem& problem, const MatrixXd& x_train, const VectorXd& y_train,
                     const MatrixXd& x_test, std::uint64_t seed);

/// Double/debiased ML, partialling-out form with K-fold cross-fitting:
///   Y~ = Y - m(X),  T~ = T - e(X)
///   ate = sum(T~ Y~) / sum(T~^2)
///   se  = sqrt( mean(psi^2) / n ) / mean(T~^2),   psi = T~ (Y~ - T~ ate)
///   ci  = ate -/+ 1.96 se
/// Throws Error(InvalidProblem) for malformed input, Error(DegenerateTreatment)
/// when a training split sees one arm only, Error(NearZeroTreatmentVariance)
/// when sum(T~^2) vanishes.
AteEstimate estimate_ate(const AteProblem& problem);

struct SweepConfig {
  int folds = 5;
  Learner learner = Learner::Forest;
  ForestParams forest;
  double ridge_penalty = 1.0;
  std::uint64_t seed = 0;
};

struct SweepRow {
  std::string treatment;
  std::string outcome;
  Learner learner = Learner::Forest;
  std::optional<AteEstimate> estimate;
  std::optional<Error> error;
};

/// One estimate per treatment column: the other treatment columns are dropped
/// and every remaining non-outcome column is a covariate. A failing treatment
/// is recorded in its row and does not stop the sweep. An unknown outcome, or
/// one that is itself a treatment, throws Error(InvalidProblem) up front.
std::vector<SweepRow> run_treatment_sweep(const notears::CausalDataset& dataset,
                                          const std::string& outcome, const SweepConfig& config);

/// The AteProblem the sweep builds for `treatment`.
AteProblem sweep_problem(const notears::CausalDataset& dataset, const std::string& treatment,
                         const std::string& outcome, const SweepConfig& config);

inline constexpr std::string_view kSweepCsvHeader =
    "treatment,outcome,ate,std_error,ci_low,ci_high,n,learner";

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_json(const std::vector<SweepRow>& rows);

}  // namespace bries::dml
