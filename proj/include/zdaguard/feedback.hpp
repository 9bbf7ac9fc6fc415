#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "zdaguard/discretize.hpp"

namespace zdaguard::feedback {

/// Causal output-feedback gain stack: block (l, k) maps y_k into u_l and is
/// zeroed whenever t_l < t_k.
struct CausalGainStack {
  /// blocks[l][k] is q x r_k; empty matrices stand for zero blocks.
  std::vector<std::vector<Eigen::MatrixXd>> blocks;
  Eigen::MatrixXd dense;  // q(L+1) x (sum r_k)
  int L = 0;
  int K = 0;
};

/// Applies the causality mask from the step function of the actuation and
/// sensing grids and assembles the dense gain matrix. Block (l, k) must be
/// q x r_k where r_k comes from `ops`.
CausalGainStack assemble_gain(const std::vector<std::vector<Eigen::MatrixXd>>& blocks,
                              const model::SamplingConfig& sampling,
                              const discretize::StackedOperators& ops);

/// Random causal gain stack (for invariance trials); entries ~ U(-scale, scale).
CausalGainStack random_causal_gain(const model::SamplingConfig& sampling,
                                   const discretize::StackedOperators& ops,
                                   std::uint64_t seed, double scale = 1.0);

/// Static consensus feedback expressed as a gain stack: each relative
/// position measurement on edge (i, j) pushes the incident agents together
/// with weight kp (velocity rows, when measured, damp with kd) and the
/// leader's absolute measurement pulls it toward the origin with k_leader.
/// Each actuation instant uses the latest available measurement.
CausalGainStack consensus_output_gain(const model::NetworkInfo& net,
                                      const std::vector<model::Topology>& schedule,
                                      const model::SamplingConfig& sampling,
                                      const discretize::StackedOperators& ops,
                                      double kp, double k_leader, double kd = 0.0);

struct ClosedLoopMap {
  Eigen::MatrixXd L;      // I - B K C, unit block lower triangular
  Eigen::MatrixXd L_inv;  // exact block forward-substitution inverse
};

/// L = I - B_stack K C_stack and its inverse. Throws std::logic_error when
/// the product is not strictly block lower triangular.
ClosedLoopMap closed_loop_map(const discretize::StackedOperators& ops,
                              const CausalGainStack& gains);

/// x_stack = L^{-1} (A_stack x_S + B_stack (v + a)).
Eigen::VectorXd closed_loop_state(const discretize::StackedOperators& ops,
                                  const CausalGainStack& gains,
                                  const Eigen::VectorXd& x_S,
                                  const Eigen::VectorXd& v_seq,
                                  const Eigen::VectorXd& a_seq);

/// Closed-loop attack robustness lambda_max([A,B]^T L^-T Q L^-1 [A,B]).
double closed_loop_robustness(const discretize::StackedOperators& ops,
                              const CausalGainStack& gains,
                              const Eigen::MatrixXd& q_rob);
double closed_loop_robustness(const discretize::StackedOperators& ops,
                              const CausalGainStack& gains);

struct InvarianceTrial {
  int nullity_open = 0;
  int nullity_closed = 0;
  bool equal = false;
};

struct InvarianceReport {
  std::vector<InvarianceTrial> trials;
  bool all_equal = true;
};

/// Checks that the nullspace dimension of C L^{-1} [A, B] matches that of
/// C [A, B] across random causal gain stacks.
InvarianceReport sensitivity_invariance_check(const discretize::StackedOperators& ops,
                                              const model::SamplingConfig& sampling,
                                              int trials, std::uint64_t seed = 0);

/// Singular values below 1e-9 * sigma_max count as zero.
int nullspace_dimension(const Eigen::MatrixXd& M, double rel_tol = 1e-9);

}  // namespace zdaguard::feedback
