#pragma once

#include <Eigen/Dense>
#include <vector>

#include "zdaguard/model.hpp"

namespace zdaguard::discretize {

/// exp(A * t) by scaling-and-squaring with the degree-13 diagonal Pade
/// approximant.
Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& A, double t);

/// Returns (exp(A*tau), int_0^tau exp(A*s) ds) from one augmented
/// exponential.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> exp_with_integral(const Eigen::MatrixXd& A,
                                                              double tau);

/// Zero-order-hold integral over one sensing interval:
///   H = int_{t_k}^{t_k1} exp(A*(t_k1 - tau)) * h(tau - t_l) dtau
/// with h = 1 on [0, dt_u) and 0 elsewhere. Closed form on the overlap
/// window; an empty overlap yields the zero matrix.
Eigen::MatrixXd hold_integral(const Eigen::MatrixXd& A, double t_k, double t_k1,
                              double t_l, double dt_u);

/// Horizon-stacked operators for the sampled system: x_stack = A_stack x_S +
/// B_stack (u + a), y_stack = C_stack x_stack.
struct StackedOperators {
  Eigen::MatrixXd A_stack;  // p(K+1) x p
  Eigen::MatrixXd B_stack;  // p(K+1) x q(L+1)
  Eigen::MatrixXd C_stack;  // (sum of r_k) x p(K+1), block diagonal
  int K = 0;
  int L = 0;
  int p = 0;
  int q = 0;

  std::vector<Eigen::MatrixXd> S;         // S_k = exp(A_k dt_y), k = 0..K-1
  std::vector<Eigen::MatrixXd> B_rows;    // per-interval input rows, p x q(L+1)
  std::vector<Eigen::MatrixXd> C_blocks;  // C_k, k = 0..K
  std::vector<int> r_offsets;             // row offset of C_k inside C_stack

  int state_rows() const { return p * (K + 1); }
  int input_cols() const { return q * (L + 1); }
  int output_rows() const { return static_cast<int>(C_stack.rows()); }

  /// Row selector E_k with x_k = E_k * x_stack.
  Eigen::MatrixXd selector(int k) const;
  /// x_k from a stacked state vector.
  Eigen::VectorXd state_block(const Eigen::VectorXd& x_stack, int k) const;
  /// y_k from a stacked measurement vector (blocks may differ in height).
  Eigen::VectorXd output_block(const Eigen::VectorXd& y_stack, int k) const;
  /// Last block row of B_stack, (B)_K in the controllability metric.
  Eigen::MatrixXd terminal_input_map() const;
  /// [A_stack, B_stack].
  Eigen::MatrixXd state_maps() const;
};

/// Assembles the stacked operators for a per-step topology schedule of
/// length K+1. The topology is held fixed within each sensing interval.
StackedOperators assemble_stacked(const model::SystemModel& sys,
                                  const model::SamplingConfig& sampling,
                                  const std::vector<model::Topology>& schedule);

}  // namespace zdaguard::discretize
