#include "bries/notears.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

#include <json.hpp>

#include "bries/error.hpp"
#include "bries/linalg/matrix_exp.hpp"
#include "bries/util/text.hpp"

namespace bries::notears {

int CausalDataset::index_of(const std::string& column) const {
  auto it = std::find(columns.begin(), columns.end(), column);
  return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
}

bool CausalDataset::is_treatment(int column) const {
  return std::find(treatments.begin(), treatments.end(), columns[static_cast<std::size_t>(column)]) !=
         treatments.end();
}

CausalDataset make_dataset(std::vector<std::string> columns, MatrixXd data,
                           std::vector<std::string> treatments) {
  const auto n = data.rows();
  const auto d = data.cols();
  if (static_cast<Eigen::Index>(columns.size()) != d)
    throw Error(ErrorCode::InvalidData, "column names do not match data width");
  if (d == 0) throw Error(ErrorCode::InvalidData, "dataset has no columns");
  std::set<std::string> seen;
  for (const auto& c : columns)
    if (!seen.insert(c).second) throw Error(ErrorCode::InvalidData, "duplicate column '" + c + "'");
  for (const auto& t : treatments)
    if (!seen.count(t)) throw Error(ErrorCode::InvalidData, "treatment '" + t + "' is not a column");
  if (!data.allFinite()) throw Error(ErrorCode::InvalidData, "dataset contains missing or non-finite values");
  for (Eigen::Index j = 0; j < d; ++j) {
    const double lo = data.col(j).minCoeff();
    const double hi = data.col(j).maxCoeff();
    if (lo == hi)
      throw Error(ErrorCode::ConstantColumn, "column '" + columns[static_cast<std::size_t>(j)] + "' is constant");
  }
  CausalDataset ds{std::move(columns), std::move(data), std::move(treatments), {}};
  if (n < 10 * d)
    ds.warnings.push_back("only " + std::to_string(n) + " rows for " + std::to_string(d) +
                          " columns; at least 10 per column is recommended");
  return ds;
}

Standardized standardize(const MatrixXd& data) {
  const auto n = static_cast<double>(data.rows());
  Standardized s{data, VectorXd::Zero(data.cols()), VectorXd::Ones(data.cols())};
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const double mean = data.col(j).mean();
    const double sd = std::sqrt((data.col(j).array() - mean).square().sum() / n);
    if (std::abs(mean) < 1e-12 && std::abs(sd - 1.0) < 1e-12) continue;
    s.mean(j) = mean;
    s.sd(j) = sd;
    s.z.col(j) = (data.col(j).array() - mean) / sd;
  }
  return s;
}

TabuMask treatment_tabu(const CausalDataset& dataset) {
  const auto d = dataset.cols();
  TabuMask mask = TabuMask::Constant(d, d, false);
  for (Eigen::Index i = 0; i < d; ++i) mask(i, i) = true;
  for (const auto& t : dataset.treatments) mask.col(dataset.index_of(t)).setConstant(true);
  return mask;
}

namespace {

struct Problem {
  MatrixXd cov;  // X^T X / n on standardized data
  TabuMask tabu;
  double lambda1;
};

struct Eval {
  double smooth = 0.0;  // loss + rho/2 h^2 + alpha h
  double h = 0.0;
  MatrixXd grad;
};

Eval evaluate(const Problem& p, const MatrixXd& w, double rho, double alpha) {
  const auto d = w.rows();
  const MatrixXd resid = MatrixXd::Identity(d, d) - w;
  const double loss = 0.5 * (resid.transpose() * p.cov * resid).trace();
  auto [h, hgrad] = linalg::acyclicity_with_gradient(w);
  Eval e;
  e.h = h;
  e.smooth = loss + 0.5 * rho * h * h + alpha * h;
  e.grad = -(p.cov * resid) + (rho * h + alpha) * hgrad;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      if (p.tabu(i, j)) e.grad(i, j) = 0.0;
  return e;
}

double l1(const MatrixXd& w) { return w.cwiseAbs().sum(); }

MatrixXd prox(const MatrixXd& v, double threshold, const TabuMask& tabu) {
  MatrixXd out = v;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      const double x = v(i, j);
      out(i, j) = tabu(i, j) ? 0.0 : std::copysign(std::max(std::abs(x) - threshold, 0.0), x);
    }
  }
  return out;
}

// Proximal gradient on the augmented Lagrangian for fixed (rho, alpha).
MatrixXd solve_inner(const Problem& p, MatrixXd w, double rho, double alpha, const Options& opt,
                     std::vector<double>* trace) {
  Eval cur = evaluate(p, w, rho, alpha);
  double objective = cur.smooth + p.lambda1 * l1(w);
  if (trace) trace->push_back(objective);
  double step = 1.0;

  for (int it = 0; it < opt.inner_max_iter; ++it) {
    MatrixXd candidate;
    Eval next;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      candidate = prox(w - step * cur.grad, step * p.lambda1, p.tabu);
      next = evaluate(p, candidate, rho, alpha);
      const MatrixXd diff = candidate - w;
      const double model = cur.smooth + (cur.grad.array() * diff.array()).sum() +
                           diff.squaredNorm() / (2.0 * step);
      if (std::isfinite(next.smooth) && next.smooth <= model + 1e-15 * std::abs(model)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double next_objective = next.smooth + p.lambda1 * l1(candidate);
    if (next_objective > objective) break;  // guards round-off; never accept an increase

    const MatrixXd s = candidate - w;
    const MatrixXd y = next.grad - cur.grad;
    const double max_move = s.cwiseAbs().maxCoeff();
    w = std::move(candidate);
    cur = std::move(next);
    const double decrease = objective - next_objective;
    objective = next_objective;
    if (trace) trace->push_back(objective);
    if (max_move < opt.inner_tol || decrease <= 1e-16 * std::max(1.0, std::abs(objective))) break;

    const double sy = (s.array() * y.array()).sum();
    const double ss = s.squaredNorm();
    step = sy > 0.0 ? std::clamp(ss / sy, 1e-20, 1e10) : std::min(step * 2.0, 1e10);
  }
  return w;
}

std::vector<Edge> threshold_edges(const MatrixXd& w, double omega) {
  std::vector<Edge> edges;
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      if (std::abs(w(i, j)) > omega) edges.push_back({static_cast<int>(i), static_cast<int>(j), w(i, j)});
  return edges;
}

}  // namespace

bool is_acyclic(int d, const std::vector<Edge>& edges) {
  std::vector<int> indegree(static_cast<std::size_t>(d), 0);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(d));
  for (const auto& e : edges) {
    out[static_cast<std::size_t>(e.from)].push_back(e.to);
    ++indegree[static_cast<std::size_t>(e.to)];
  }
  std::queue<int> ready;
  for (int v = 0; v < d; ++v)
    if (indegree[static_cast<std::size_t>(v)] == 0) ready.push(v);
  int visited = 0;
  while (!ready.empty()) {
    const int v = ready.front();
    ready.pop();
    ++visited;
    for (int u : out[static_cast<std::size_t>(v)])
      if (--indegree[static_cast<std::size_t>(u)] == 0) ready.push(u);
  }
  return visited == d;
}

constexpr double kSymmetryTilt = 1e-4;

WeightedDag fit(const CausalDataset& dataset, const Options& options, const TabuPredicate& extra_tabu) {
  if (options.lambda1 < 0.0) throw Error(ErrorCode::InvalidConfig, "lambda1 must be >= 0");
  if (!(options.omega > 0.0)) throw Error(ErrorCode::InvalidConfig, "omega must be > 0");
  const auto n = dataset.rows();
  const auto d = dataset.cols();
  if (n <= d)
    throw Error(ErrorCode::TooFewRows, std::to_string(n) + " rows for " + std::to_string(d) +
                                           " columns; need more rows than columns");

  const Standardized std_data = standardize(dataset.data);
  Problem p{std_data.z.transpose() * std_data.z / static_cast<double>(n), treatment_tabu(dataset),
            options.lambda1};
  if (extra_tabu)
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        if (extra_tabu(static_cast<int>(i), static_cast<int>(j))) p.tabu(i, j) = true;

  WeightedDag dag;
  dag.columns = dataset.columns;
  dag.lambda1 = options.lambda1;
  dag.omega = options.omega;

  // On standardized data the score is symmetric under transposition, so
  // i->j and j->i can sit on a saddle where they stay tied while rho grows.
  // Each inner solve starts from the current iterate plus a tiny tilt
  // towards column order, which lets the instability pick a direction.
  MatrixXd tilt = MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i + 1; j < d; ++j)
      if (!p.tabu(i, j)) tilt(i, j) = kSymmetryTilt;
  MatrixXd w = MatrixXd::Zero(d, d);
  double rho = options.rho_init;
  double alpha = 0.0;
  double h = std::numeric_limits<double>::infinity();

  bool solved = false;
  for (int outer = 0; outer < options.max_outer; ++outer) {
    dag.outer_iterations = outer + 1;
    MatrixXd w_new;
    double h_new = h;
    while (rho < options.rho_max) {
      std::vector<double>* trace = nullptr;
      if (options.record_trace) trace = &dag.inner_traces.emplace_back();
      w_new = solve_inner(p, w + tilt, rho, alpha, options, trace);
      h_new = linalg::acyclicity(w_new);
      if (h_new > options.progress_rate * h) {
        rho *= options.rho_growth;
      } else {
        break;
      }
    }
    if (w_new.size() == 0) break;  // rho already at rho_max
    solved = true;
    w = std::move(w_new);
    h = h_new;
    alpha += rho * h;
    if (h <= options.h_tol || rho >= options.rho_max) break;
  }

  if (!solved) h = linalg::acyclicity(w);
  dag.weights = w;
  dag.h_final = h;
  dag.rho_final = rho;
  dag.converged = solved && h <= options.h_tol;

  dag.weights_raw = w;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) dag.weights_raw(i, j) = w(i, j) * std_data.sd(j) / std_data.sd(i);

  dag.omega_used = options.omega;
  dag.edges = threshold_edges(w, options.omega);
  if (!is_acyclic(static_cast<int>(d), dag.edges)) {
    std::vector<double> levels;
    for (const auto& e : dag.edges) levels.push_back(std::abs(e.weight));
    std::sort(levels.begin(), levels.end());
    for (double t : levels) {
      auto edges = threshold_edges(w, t);
      if (is_acyclic(static_cast<int>(d), edges)) {
        dag.omega_used = t;
        dag.omega_raised = true;
        dag.edges = std::move(edges);
        break;
      }
    }
  }
  return dag;
}

std::vector<Effect> treatment_effects(const CausalDataset& dataset, const WeightedDag& dag) {
  std::vector<Effect> out;
  for (const auto& t : dataset.treatments) {
    const int i = dataset.index_of(t);
    for (int j = 0; j < static_cast<int>(dataset.cols()); ++j) {
      if (dataset.is_treatment(j)) continue;
      out.push_back({t, dataset.columns[static_cast<std::size_t>(j)], dag.weights(i, j), dag.weights_raw(i, j)});
    }
  }
  return out;
}

std::string edges_csv(const WeightedDag& dag) {
  std::string out = "from,to,weight\n";
  for (const auto& e : dag.edges)
    out += dag.columns[static_cast<std::size_t>(e.from)] + "," + dag.columns[static_cast<std::size_t>(e.to)] +
           "," + util::format_fixed(e.weight, 6) + "\n";
  return out;
}

std::string report_json(const CausalDataset& dataset, const WeightedDag& dag) {
  using nlohmann::ordered_json;
  ordered_json edges = ordered_json::array();
  for (const auto& e : dag.edges)
    edges.push_back({{"from", dag.columns[static_cast<std::size_t>(e.from)]},
                     {"to", dag.columns[static_cast<std::size_t>(e.to)]},
                     {"weight", e.weight},
                     {"weight_raw", dag.weights_raw(e.from, e.to)}});
  ordered_json effects = ordered_json::array();
  for (const auto& ef : treatment_effects(dataset, dag))
    effects.push_back({{"treatment", ef.treatment},
                       {"outcome", ef.outcome},
                       {"weight", ef.weight},
                       {"weight_raw", ef.weight_raw}});
  ordered_json weights = ordered_json::array();
  for (Eigen::Index i = 0; i < dag.weights.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < dag.weights.cols(); ++j) row.push_back(dag.weights(i, j));
    weights.push_back(std::move(row));
  }
  ordered_json doc = {
      {"method", "notears-linear"},
      {"columns", dag.columns},
      {"treatments", dataset.treatments},
      {"lambda1", dag.lambda1},
      {"omega", dag.omega},
      {"omega_used", dag.omega_used},
      {"omega_raised", dag.omega_raised},
      {"h_final", dag.h_final},
      {"converged", dag.converged},
      {"outer_iterations", dag.outer_iterations},
      {"rho_final", dag.rho_final},
      {"rows", dataset.rows()},
      {"warnings", dataset.warnings},
      {"edges", std::move(edges)},
      {"effects", std::move(effects)},
      {"weights", std::move(weights)},
  };
  return doc.dump(2) + "\n";
}

}  // namespace bries::notears
