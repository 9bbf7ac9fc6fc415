#pragma once

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <vector>

#include "zdaguard/discretize.hpp"

namespace zdaguard::zda {

struct InvariantZero {
  std::complex<double> z;
  Eigen::VectorXcd x0;  // state direction, ||[x0; u0]|| = 1
  Eigen::VectorXcd u0;  // input direction
  double residual = 0.0;
};

struct ZeroResult {
  enum class Status { Ok, ZerosEverywhere };
  Status status = Status::Ok;
  std::vector<InvariantZero> zeros;
};

/// Finite invariant zeros of the pencil [zI - A, -B; C, 0]: values z where
/// (zI - A) x = B u and C x = 0 admit a nontrivial solution. Identically
/// singular pencils are reported as Status::ZerosEverywhere.
ZeroResult invariant_zeros(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& C);

struct AttackPlan {
  enum class Kind { Intrinsic, Sampling, Enforced };
  Kind kind = Kind::Enforced;
  Eigen::MatrixXd a_seq;   // q x (L+1) held samples
  Eigen::VectorXd x_a0;    // initial-state perturbation
  std::complex<double> z_inv{0.0, 0.0};  // certificate for intrinsic/sampling
  double j_sen = 0.0;                    // certificate for enforced
  Eigen::VectorXd certificate_vector;    // the achieving eigenvector (enforced)
  double claimed_stealthy_until = 0.0;
  double amplitude = 1.0;

  std::string to_json() const;
  static AttackPlan from_json_text(const std::string& text);
  static AttackPlan from_json_file(const std::string& path);
  static std::string kind_name(Kind kind);
};

/// Attack from a continuous-time invariant zero: a(t_l) = e^{z t_l} u0,
/// sampled at the hold instants, with the matching initial-state shift.
/// Complex zeros are realified with cos/sin combinations.
AttackPlan intrinsic_attack(const ZeroResult& zeros, const model::SamplingConfig& sampling,
                            double amplitude = 1.0);

/// Attack from a zero of the discretized pencil: a_k = z^k u0.
AttackPlan sampling_attack(const ZeroResult& discrete_zeros, int hold_steps,
                           double amplitude = 1.0);

/// Attack in the nullspace-ish direction of the sensitivity matrix: the
/// unit minimizing eigenvector split into (x_S, stacked a). Requires the
/// sensitivity metric at or below `stealth_tol`.
AttackPlan enforced_attack(const discretize::StackedOperators& ops,
                           double stealth_tol = 1e-8);

struct StealthReport {
  bool stealthy = false;
  double max_deviation = 0.0;
  std::vector<double> per_step_deviation;
};

/// Simulates the stacked measurement with and without (x_a0, a_seq) and
/// compares per-step output deviations against `tol`.
StealthReport stealthiness_check(const model::SystemModel& sys,
                                 const model::SamplingConfig& sampling,
                                 const std::vector<model::Topology>& schedule,
                                 const AttackPlan& plan, double tol);

struct OutputNullingSubspace {
  Eigen::MatrixXd basis;  // p x d, orthonormal columns spanning V*
  Eigen::MatrixXd F;      // friend gain, (A + B F) V* inside V*
  int dim() const { return static_cast<int>(basis.cols()); }
};

/// Maximal output-nulling controlled invariant subspace by the fixpoint
/// iteration V_{i+1} = ker C intersect A^-1(V_i + im B), plus a friend gain.
OutputNullingSubspace output_nulling_subspace(const Eigen::MatrixXd& A,
                                              const Eigen::MatrixXd& B,
                                              const Eigen::MatrixXd& C);

/// Reveal predicate for a changed measurement map: true iff V* and ker(C_new)
/// intersect only at the origin.
bool reveal_check_output(const OutputNullingSubspace& subspace, const Eigen::MatrixXd& C_new,
                         double rel_tol = 1e-9);

/// Reveal predicate for a changed actuation map: true iff V* and
/// ker((B_new - B_old) F) intersect only at the origin.
bool reveal_check_input(const OutputNullingSubspace& subspace, const Eigen::MatrixXd& B_old,
                        const Eigen::MatrixXd& B_new, double rel_tol = 1e-9);

/// Orthonormal kernel basis with singular values below rel_tol * sigma_max
/// treated as zero.
Eigen::MatrixXd nullspace_basis(const Eigen::MatrixXd& M, double rel_tol = 1e-10);

}  // namespace zdaguard::zda
