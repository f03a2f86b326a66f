#pragma once

// Linear baselines: ridge by a dense symmetric solve, lasso and elastic net by
// cyclic coordinate descent. Multi-output targets are fitted column by column.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mac/data.hpp"
#include "mac/errors.hpp"
#include "mac/metrics.hpp"

namespace mac {

struct LinearModel {
  Eigen::MatrixXd weights;    ///< [features × outputs]
  Eigen::VectorXd intercept;  ///< per output
  double l1 = 0.0;
  double l2 = 0.0;
  bool converged = true;
  std::size_t sweeps = 0;  ///< largest sweep count over outputs
  /// Objective after each sweep, per output (coordinate descent only).
  std::vector<std::vector<double>> objective_trace;

  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd y = x * weights;
    y.rowwise() += intercept.transpose();
    return y;
  }
};

/// Numeric columns as encoded (already z-scored) followed by one-hot blocks
/// for every categorical feature, one column per vocabulary id.
inline Eigen::MatrixXd design_matrix(const EncodedDataset& d, const std::vector<std::size_t>& vocab_sizes) {
  std::size_t cols = d.layout.numeric_count();
  for (auto v : vocab_sizes) cols += v;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.samples[i];
    Eigen::Index c = 0;
    for (double v : s.numeric) x(static_cast<Eigen::Index>(i), c++) = v;
    for (std::size_t f = 0; f < s.tokens.size(); ++f) {
      x(static_cast<Eigen::Index>(i), c + static_cast<Eigen::Index>(s.tokens[f])) = 1.0;
      c += static_cast<Eigen::Index>(vocab_sizes[f]);
    }
  }
  return x;
}

/// Targets in original units.
inline Eigen::MatrixXd target_matrix(const EncodedDataset& d) {
  const std::size_t k = d.layout.outputs.size();
  Eigen::MatrixXd y(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d.samples[i].raw_targets[j];
    }
  }
  return y;
}

namespace detail {

inline void check_problem(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) {
    throw DimensionError("linear fit: X has " + std::to_string(x.rows()) + " rows but y has " +
                         std::to_string(y.rows()));
  }
  if (x.rows() == 0) throw DataError("linear fit: no samples");
}

}  // namespace detail

/// Minimizes ‖y - Xw - b‖² + λ‖w‖² with the intercept left unpenalized.
inline LinearModel ridge_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda) {
  detail::check_problem(x, y);
  if (!(lambda >= 0.0)) throw ContractError("ridge_fit: lambda must be non-negative");
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const Eigen::RowVectorXd y_mean = y.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::MatrixXd yc = y.rowwise() - y_mean;

  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += lambda;
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
    throw SolverError("ridge system is singular (collinear features); use lambda > 0");
  }
  LinearModel m;
  m.l2 = lambda;
  m.weights = llt.solve(xc.transpose() * yc);
  m.intercept = (y_mean - x_mean * m.weights).transpose();
  return m;
}

struct CoordinateDescentOptions {
  double tol = 1e-8;
  std::size_t max_iter = 10000;
};

/// Elastic-net objective for one output on centered data:
/// ‖r‖²/(2n) + λ1‖w‖₁ + (λ2/2)‖w‖².
inline double elasticnet_objective(const Eigen::VectorXd& residual, const Eigen::VectorXd& w, double l1, double l2) {
  const double n = static_cast<double>(residual.size());
  return residual.squaredNorm() / (2.0 * n) + l1 * w.lpNorm<1>() + 0.5 * l2 * w.squaredNorm();
}

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

/// Cyclic coordinate descent; stops once a full sweep moves no weight by more
/// than tol. Hitting max_iter clears `converged` instead of throwing.
inline LinearModel elasticnet_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double l1, double l2,
                                  const CoordinateDescentOptions& opt = {}) {
  detail::check_problem(x, y);
  if (!(l1 >= 0.0) || !(l2 >= 0.0)) throw ContractError("elasticnet_fit: penalties must be non-negative");
  const double n = static_cast<double>(x.rows());
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const Eigen::RowVectorXd y_mean = y.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::VectorXd col_sq = xc.colwise().squaredNorm().transpose() / n;

  LinearModel m;
  m.l1 = l1;
  m.l2 = l2;
  m.weights = Eigen::MatrixXd::Zero(x.cols(), y.cols());
  for (Eigen::Index o = 0; o < y.cols(); ++o) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(x.cols());
    Eigen::VectorXd r = y.col(o).array() - y_mean(o);
    std::vector<double> trace;
    bool done = false;
    std::size_t sweep = 0;
    while (sweep < opt.max_iter) {
      ++sweep;
      double max_change = 0.0;
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (col_sq(j) == 0.0) continue;
        const double old = w(j);
        const double rho = xc.col(j).dot(r) / n + col_sq(j) * old;
        const double updated = soft_threshold(rho, l1) / (col_sq(j) + l2);
        if (updated != old) {
          r -= (updated - old) * xc.col(j);
          w(j) = updated;
          max_change = std::max(max_change, std::abs(updated - old));
        }
      }
      trace.push_back(elasticnet_objective(r, w, l1, l2));
      if (max_change < opt.tol) {
        done = true;
        break;
      }
    }
    m.converged = m.converged && done;
    m.sweeps = std::max(m.sweeps, sweep);
    m.objective_trace.push_back(std::move(trace));
    m.weights.col(o) = w;
  }
  m.intercept = (y_mean - x_mean * m.weights).transpose();
  return m;
}

inline LinearModel lasso_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda,
                             const CoordinateDescentOptions& opt = {}) {
  return elasticnet_fit(x, y, lambda, 0.0, opt);
}

enum class BaselineKind { Ridge, Lasso, ElasticNet };

inline std::string baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::Ridge: return "ridge";
    case BaselineKind::Lasso: return "lasso";
    case BaselineKind::ElasticNet: return "elasticnet";
  }
  return "?";
}

inline BaselineKind parse_baseline(const std::string& name) {
  if (name == "ridge") return BaselineKind::Ridge;
  if (name == "lasso") return BaselineKind::Lasso;
  if (name == "elasticnet" || name == "en") return BaselineKind::ElasticNet;
  throw ConfigError("unknown baseline '" + name + "' (expected ridge, lasso or elasticnet)");
}

/// Elastic net splits λ evenly between the two penalties.
inline LinearModel fit_baseline(BaselineKind kind, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda,
                                const CoordinateDescentOptions& opt = {}) {
  switch (kind) {
    case BaselineKind::Ridge: return ridge_fit(x, y, lambda);
    case BaselineKind::Lasso: return lasso_fit(x, y, lambda, opt);
    case BaselineKind::ElasticNet: return elasticnet_fit(x, y, 0.5 * lambda, 0.5 * lambda, opt);
  }
  throw ContractError("fit_baseline: bad kind");
}

inline std::vector<double> default_lambda_grid() { return {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2}; }

inline MetricsReport linear_report(const LinearModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                   const std::vector<std::string>& outputs) {
  const Eigen::MatrixXd p = m.predict(x);
  std::vector<double> truth, pred;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      truth.push_back(y(i, j));
      pred.push_back(p(i, j));
    }
  }
  return compute_metrics(truth, pred, outputs);
}

struct BaselineSelection {
  BaselineKind kind = BaselineKind::Ridge;
  double lambda = 0.0;
  LinearModel model;
  std::vector<std::pair<double, double>> grid_mae;  ///< (λ, validation MAE)
};

/// Picks λ by validation MAE; ties go to the smaller λ.
inline BaselineSelection select_baseline(BaselineKind kind, const EncodedDataset& train, const EncodedDataset& val,
                                         const std::vector<std::size_t>& vocab_sizes,
                                         const std::vector<double>& grid = default_lambda_grid()) {
  if (grid.empty()) throw ConfigError("empty lambda grid");
  const Eigen::MatrixXd xt = design_matrix(train, vocab_sizes), yt = target_matrix(train);
  const Eigen::MatrixXd xv = design_matrix(val, vocab_sizes), yv = target_matrix(val);
  BaselineSelection best;
  best.kind = kind;
  double best_mae = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    LinearModel m = fit_baseline(kind, xt, yt, lambda);
    const double mae = linear_report(m, xv, yv, val.layout.outputs).aggregate.mae;
    best.grid_mae.emplace_back(lambda, mae);
    if (mae < best_mae) {
      best_mae = mae;
      best.lambda = lambda;
      best.model = std::move(m);
    }
  }
  return best;
}

}  // namespace mac
