#pragma once

#include <Eigen/Dense>
#include <optional>

#include "zdaguard/discretize.hpp"

namespace zdaguard::metrics {

/// Eigenvalues below this relative level count as exact zero: positivity of
/// a metric is a predicate and needs a declared numerical threshold.
constexpr double kZeroEigRel = 1e-10;

struct ExtremeEigen {
  double value = 0.0;
  Eigen::VectorXd vector;
};

enum class Which { Min, Max };

/// Extreme eigenpair of a symmetric matrix. The input may carry a symmetry
/// defect up to 1e-9 in max norm and is symmetrized first.
ExtremeEigen symmetric_extreme_eigen(const Eigen::MatrixXd& M, Which which);

struct MetricValue {
  double value = 0.0;     // clamped: exact 0 when below the zero threshold
  double raw = 0.0;       // unclamped eigenvalue as computed
  bool clamped = false;   // true when |raw| fell below the zero threshold
};

struct MetricReport {
  MetricValue j_con;
  MetricValue j_obs;
  MetricValue j_rob;
  MetricValue j_sen;
  int K = 0;
  int L = 0;
  double q_rob_scale = 1.0;  // identity weight scale used for j_rob

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row(double time = 0.0) const;
};

/// lambda_min of (B)_K (B)_K^T over the terminal block row of the stacked
/// input operator.
MetricValue controllability_metric(const discretize::StackedOperators& ops);

/// Minimum-effort cost to steer from x_S to x_F; unavailable when the
/// terminal map Gramian is singular (distinct from J_con == 0).
std::optional<double> min_effort_cost(const discretize::StackedOperators& ops,
                                      const Eigen::VectorXd& x_S,
                                      const Eigen::VectorXd& x_F);

/// lambda_min of A_stack^T C_stack^T C_stack A_stack.
MetricValue observability_metric(const discretize::StackedOperators& ops);

/// lambda_max of [A, B]^T Q [A, B] with Q positive definite on the stacked
/// state (identity by default).
MetricValue robustness_metric(const discretize::StackedOperators& ops,
                              const Eigen::MatrixXd& q_rob);
MetricValue robustness_metric(const discretize::StackedOperators& ops);

/// lambda_min of [A, B]^T C^T C [A, B]; zero certifies a stealthy
/// (x_S, a) direction.
MetricValue sensitivity_metric(const discretize::StackedOperators& ops);

/// Minimizing unit eigenvector of the sensitivity matrix, split into the
/// x_S part and the stacked attack part.
ExtremeEigen sensitivity_eigenpair(const discretize::StackedOperators& ops);

/// All four metrics with the identity robustness weight.
MetricReport compute_all(const discretize::StackedOperators& ops);

}  // namespace zdaguard::metrics
