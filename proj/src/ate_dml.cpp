#include "bries/ate_dml.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "bries/util/random.hpp"
#include "bries/util/text.hpp"

namespace bries::dml {

std::string_view to_string(Learner l) noexcept { return l == Learner::Forest ? "forest" : "ridge"; }

std::optional<Learner> parse_learner(std::string_view s) noexcept {
  if (s == "forest") return Learner::Forest;
  if (s == "ridge") return Learner::Ridge;
  return std::nullopt;
}

std::vector<int> stratified_folds(const VectorXd& treatment, int folds, std::uint64_t seed) {
  util::Rng rng(seed);
  std::vector<int> treated, control;
  for (Eigen::Index i = 0; i < treatment.size(); ++i)
    (treatment(i) == 1.0 ? treated : control).push_back(static_cast<int>(i));
  rng.shuffle(treated);
  rng.shuffle(control);
  std::vector<int> fold_of(static_cast<std::size_t>(treatment.size()), 0);
  int k = 0;
  for (const auto* arm : {&treated, &control})
    for (int row : *arm) fold_of[static_cast<std::size_t>(row)] = k++ % folds;
  return fold_of;
}

VectorXd fit_predict(const AteProblem& problem, const MatrixXd& x_train, const VectorXd& y_train,
                     const MatrixXd& x_test, std::uint64_t seed) {
  if (x_train.cols() == 0) return VectorXd::Constant(x_test.rows(), y_train.mean());
  if (problem.learner == Learner::Ridge)
    return RidgeRegression::fit(x_train, y_train, problem.ridge_penalty).predict(x_test);
  ForestParams params = problem.forest;
  params.seed = seed;
  return RegressionForest::fit(x_train, y_train, params).predict(x_test);
}

namespace {

void validate(const AteProblem& p) {
  const auto n = p.treatment.size();
  if (n == 0) throw Error(ErrorCode::InvalidProblem, "no rows");
  if (p.outcome.size() != n || p.covariates.rows() != n)
    throw Error(ErrorCode::InvalidProblem, "treatment, outcome and covariates differ in length");
  if (p.folds < 2) throw Error(ErrorCode::InvalidProblem, "need at least 2 folds");
  if (!p.outcome.allFinite() || !p.covariates.allFinite())
    throw Error(ErrorCode::InvalidProblem, "missing or non-finite values");
  int treated = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = p.treatment(i);
    if (t != 0.0 && t != 1.0) throw Error(ErrorCode::InvalidProblem, "treatment must be 0/1");
    treated += t == 1.0;
  }
  const int control = static_cast<int>(n) - treated;
  const int need = std::max(5, p.folds);
  if (treated < need || control < need)
    throw Error(ErrorCode::DegenerateTreatment,
                "each treatment arm needs at least " + std::to_string(need) + " rows (treated " +
                    std::to_string(treated) + ", control " + std::to_string(control) + ")");
}

}  // namespace

AteEstimate estimate_ate(const AteProblem& problem) {
  validate(problem);
  const auto n = problem.treatment.size();
  const int K = problem.folds;

  AteEstimate est;
  est.fold_of_row = stratified_folds(problem.treatment, K, problem.seed);
  est.outcome_residuals = VectorXd::Zero(n);
  est.treatment_residuals = VectorXd::Zero(n);

  for (int k = 0; k < K; ++k) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < n; ++i) (est.fold_of_row[static_cast<std::size_t>(i)] == k ? test : train).push_back(i);
    if (test.empty()) continue;

    double t_sum = 0.0;
    for (auto i : train) {
      if (est.fold_of_row[static_cast<std::size_t>(i)] == k) throw std::logic_error("cross-fitting leak");
      t_sum += problem.treatment(i);
    }
    if (t_sum == 0.0 || t_sum == static_cast<double>(train.size()))
      throw Error(ErrorCode::DegenerateTreatment,
                  "fold " + std::to_string(k) + " training split sees one treatment value");

    const MatrixXd x_train = problem.covariates(train, Eigen::all);
    const MatrixXd x_test = problem.covariates(test, Eigen::all);
    const VectorXd y_train = problem.outcome(train);
    const VectorXd t_train = problem.treatment(train);

    const std::uint64_t base = util::splitmix64(problem.seed ^ (0x51ed270b27ull * static_cast<std::uint64_t>(k + 1)));
    const VectorXd m_hat = fit_predict(problem, x_train, y_train, x_test, base);
    const VectorXd e_hat = fit_predict(problem, x_train, t_train, x_test, util::splitmix64(base));

    FoldStats fs;
    fs.fold = k;
    fs.n = static_cast<int>(test.size());
    for (std::size_t j = 0; j < test.size(); ++j) {
      const auto i = test[j];
      est.outcome_residuals(i) = problem.outcome(i) - m_hat(static_cast<Eigen::Index>(j));
      est.treatment_residuals(i) = problem.treatment(i) - e_hat(static_cast<Eigen::Index>(j));
      fs.mean_outcome_residual += est.outcome_residuals(i);
      fs.mean_treatment_residual += est.treatment_residuals(i);
      fs.mean_sq_treatment_residual += est.treatment_residuals(i) * est.treatment_residuals(i);
    }
    fs.mean_outcome_residual /= fs.n;
    fs.mean_treatment_residual /= fs.n;
    fs.mean_sq_treatment_residual /= fs.n;
    est.per_fold.push_back(fs);
  }

  const VectorXd& yr = est.outcome_residuals;
  const VectorXd& tr = est.treatment_residuals;
  const double denom = tr.squaredNorm();
  if (!(denom > 1e-10 * static_cast<double>(n)))
    throw Error(ErrorCode::NearZeroTreatmentVariance,
                "treatment residual variance is ~0; covariates predict treatment almost perfectly");
  est.ate = tr.dot(yr) / denom;

  const double nd = static_cast<double>(n);
  const VectorXd psi = tr.array() * (yr.array() - tr.array() * est.ate);
  const double j = denom / nd;
  est.std_error = std::sqrt(psi.squaredNorm() / nd / nd) / j;
  est.ci_low = est.ate - 1.96 * est.std_error;
  est.ci_high = est.ate + 1.96 * est.std_error;
  est.n_used = static_cast<int>(n);
  return est;
}

AteProblem sweep_problem(const notears::CausalDataset& dataset, const std::string& treatment,
                         const std::string& outcome, const SweepConfig& config) {
  const int t_idx = dataset.index_of(treatment);
  const int y_idx = dataset.index_of(outcome);
  if (t_idx < 0 || !dataset.is_treatment(t_idx))
    throw Error(ErrorCode::InvalidProblem, "'" + treatment + "' is not a treatment column");
  if (y_idx < 0) throw Error(ErrorCode::InvalidProblem, "unknown outcome column '" + outcome + "'");
  if (dataset.is_treatment(y_idx))
    throw Error(ErrorCode::InvalidProblem, "outcome '" + outcome + "' is a treatment column");

  std::vector<int> covariate_cols;
  for (int j = 0; j < static_cast<int>(dataset.cols()); ++j)
    if (j != y_idx && !dataset.is_treatment(j)) covariate_cols.push_back(j);

  AteProblem p;
  p.treatment = dataset.data.col(t_idx);
  p.outcome = dataset.data.col(y_idx);
  p.covariates = dataset.data(Eigen::all, covariate_cols);
  p.folds = config.folds;
  p.learner = config.learner;
  p.forest = config.forest;
  p.ridge_penalty = config.ridge_penalty;
  p.seed = config.seed;
  return p;
}

std::vector<SweepRow> run_treatment_sweep(const notears::CausalDataset& dataset,
                                          const std::string& outcome, const SweepConfig& config) {
  if (dataset.treatments.empty()) throw Error(ErrorCode::InvalidProblem, "dataset has no treatment columns");
  const int y_idx = dataset.index_of(outcome);
  if (y_idx < 0) throw Error(ErrorCode::InvalidProblem, "unknown outcome column '" + outcome + "'");
  if (dataset.is_treatment(y_idx))
    throw Error(ErrorCode::InvalidProblem, "outcome '" + outcome + "' is a treatment column");
  std::vector<SweepRow> rows;
  for (const auto& t : dataset.treatments) {
    SweepRow row{t, outcome, config.learner, std::nullopt, std::nullopt};
    try {
      row.estimate = estimate_ate(sweep_problem(dataset, t, outcome, config));
    } catch (const Error& e) {
      row.error = e;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out(kSweepCsvHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.treatment + ',' + r.outcome + ',';
    if (r.estimate) {
      const auto& e = *r.estimate;
      out += util::format_fixed(e.ate, 6) + ',' + util::format_fixed(e.std_error, 6) + ',' +
             util::format_fixed(e.ci_low, 6) + ',' + util::format_fixed(e.ci_high, 6) + ',' +
             std::to_string(e.n_used);
    } else {
      out += "NA,NA,NA,NA,0";
    }
    out += ',' + std::string(to_string(r.learner)) + '\n';
  }
  return out;
}

std::string sweep_json(const std::vector<SweepRow>& rows) {
  using nlohmann::ordered_json;
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row = {{"treatment", r.treatment}, {"outcome", r.outcome}, {"learner", to_string(r.learner)}};
    if (r.estimate) {
      const auto& e = *r.estimate;
      row["ate"] = e.ate;
      row["std_error"] = e.std_error;
      row["ci_low"] = e.ci_low;
      row["ci_high"] = e.ci_high;
      row["n"] = e.n_used;
      ordered_json folds = ordered_json::array();
      for (const auto& f : e.per_fold)
        folds.push_back({{"fold", f.fold},
                         {"n", f.n},
                         {"mean_outcome_residual", f.mean_outcome_residual},
                         {"mean_treatment_residual", f.mean_treatment_residual},
                         {"mean_sq_treatment_residual", f.mean_sq_treatment_residual}});
      row["per_fold"] = std::move(folds);
    } else if (r.error) {
      row["error"] = r.error->what();
    }
    arr.push_back(std::move(row));
  }
  return arr.dump(2) + "\n";
}

}  // namespace bries::dml
