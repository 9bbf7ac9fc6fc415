#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "zdaguard/discretize.hpp"
#include "zdaguard/feedback.hpp"

namespace zdaguard::sdp {

/// One linear matrix inequality block F_0 + sum_i x_i F_i >= 0. mats[0] is
/// F_0 and mats[i] multiplies x_i; absent trailing matrices are zero.
struct ConstraintBlock {
  int dim = 0;
  std::vector<Eigen::MatrixXd> mats;  // size <= m + 1

  const Eigen::MatrixXd& coeff(int i) const;
  Eigen::MatrixXd eval(const Eigen::VectorXd& x) const;
};

/// minimize c^T x subject to the PSD blocks and optional equalities G x = h.
struct SdpProblem {
  int num_vars = 0;
  Eigen::VectorXd c;
  std::vector<ConstraintBlock> blocks;
  Eigen::MatrixXd G_eq;  // 0 x num_vars when absent
  Eigen::VectorXd h_eq;

  void validate() const;
  /// Worst constraint violation at x: most negative block eigenvalue and
  /// equality residual, as a nonnegative number.
  double violation(const Eigen::VectorXd& x) const;

  /// Sparse text round-trip (one line per nonzero) for cross-checking
  /// against external solvers.
  std::string to_text() const;
  static SdpProblem from_text(const std::string& text);
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, MaxIter };

struct SdpSolution {
  SolveStatus status = SolveStatus::MaxIter;
  Eigen::VectorXd x;
  double objective = 0.0;
  double duality_gap = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
  std::string message;
  std::vector<std::string> trace;  // one line per interior-point iteration
};

struct SolveOptions {
  int max_iterations = 100;
  double feas_tol = 1e-8;
  double gap_tol = 1e-8;
  double infeas_tol = 1e-7;
  bool record_trace = true;
};

std::string status_name(SolveStatus status);

/// Primal-dual path-following solve (Nesterov-Todd scaling, Mehrotra
/// predictor-corrector, self-dual embedding, dense Schur complement).
/// Blocks are rescaled to unit magnitude before solving.
SdpSolution solve(const SdpProblem& problem, const SolveOptions& opts = {});

/// The interior-point core without the presolve rescaling.
SdpSolution solve_scaled(const SdpProblem& problem, const SolveOptions& opts = {});

/// The 3x3 block matrix whose positive semidefiniteness is equivalent, at
/// fixed matrices, to lambda_max([A,B]^T L^-T Q L^-1 [A,B]) <= gamma:
///   [ Y    E    F  ]        Y = Q^-1 + BB^T + Q^-1 C'K'KCQ^-1 + BKCQ^-1C'K'B^T
///   [ E^T  gI   0  ]  with  E = [A_stack, B_stack]
///   [ F^T  0    I  ]        F = B + Q^-1 C^T K^T
Eigen::MatrixXd schur_embedding_matrix(const discretize::StackedOperators& ops,
                                       const feedback::CausalGainStack& gains,
                                       const Eigen::MatrixXd& q_rob, double gamma);

/// Same block as an SDP constraint with gamma as decision variable
/// `gamma_var` (appended to `problem`).
void append_schur_block(SdpProblem& problem, int gamma_var,
                        const discretize::StackedOperators& ops,
                        const feedback::CausalGainStack& gains,
                        const Eigen::MatrixXd& q_rob);

/// Feasibility of the embedded block at fixed matrices (min eigenvalue
/// above -tol * scale).
bool schur_block_feasible(const Eigen::MatrixXd& block, double rel_tol = 1e-9);

}  // namespace zdaguard::sdp
