#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zdaguard/feedback.hpp"
#include "zdaguard/metrics.hpp"
#include "zdaguard/sdp.hpp"

namespace zdaguard::switching {

// ---------------------------------------------------------------------------
// Literal lifting maps. Each map is linear in its lifted argument and, on a
// rank-1 lifting built from concrete matrices, reproduces the corresponding
// matrix product exactly.

struct LiftingDims {
  int p = 0;        // state dim
  int pk = 0;       // p (K+1)
  int ql = 0;       // q (L+1)
  int r_total = 0;  // stacked measurement rows
  int vec_b() const { return pk * ql; }
  int vec_c() const { return r_total * pk + ql * r_total; }  // [vec C; vec K]
};

struct LiftingMaps {
  LiftingDims dims;

  Eigen::VectorXd vec_of_b(const Eigen::MatrixXd& B_stack) const;
  Eigen::VectorXd vec_of_ck(const Eigen::MatrixXd& C_stack,
                            const Eigen::MatrixXd& K_stack) const;

  /// (B)_K (B)_K^T from X_b = vec(B) vec(B)^T.
  Eigen::MatrixXd phi_b_terminal(const Eigen::MatrixXd& X_b) const;
  /// B B^T from X_b.
  Eigen::MatrixXd phi_b(const Eigen::MatrixXd& X_b) const;
  /// C^T C from X_c = vec(C,K) vec(C,K)^T.
  Eigen::MatrixXd phi_c(const Eigen::MatrixXd& X_c) const;
  /// C^T K^T from X_c.
  Eigen::MatrixXd psi_ck(const Eigen::MatrixXd& X_c) const;
  /// Qinv C^T K^T K C Qinv from X_k = vec(X_c) vec(X_c)^T.
  Eigen::MatrixXd phi_k(const Eigen::MatrixXd& X_k, const Eigen::MatrixXd& q_inv) const;
  /// B^T C^T C B from X_bc = vec(X_b, X_c) vec(X_b, X_c)^T.
  Eigen::MatrixXd psi_bc(const Eigen::MatrixXd& X_bc) const;
  /// B K C Qinv C^T K^T B^T from X_bk = vec(X_b, X_k) vec(X_b, X_k)^T.
  Eigen::MatrixXd pi_bk(const Eigen::MatrixXd& X_bk, const Eigen::MatrixXd& q_inv) const;
};

LiftingMaps lifting_maps(const LiftingDims& dims);

struct Thresholds {
  double c_c = 1e-6;
  double c_o = 1e-8;
  double c_s = 1e-9;
};

/// Feasibility of the lifted constraint system at exact rank-1 liftings of
/// concrete (B, C, K, gamma) against the nonlinear originals.
struct RoundTripReport {
  bool lifted_feasible = false;
  bool nonlinear_feasible = false;
  bool agree() const { return lifted_feasible == nonlinear_feasible; }
};

RoundTripReport verify_lifted_point(const Eigen::MatrixXd& A_stack,
                                    const Eigen::MatrixXd& B_stack,
                                    const Eigen::MatrixXd& C_stack,
                                    const Eigen::MatrixXd& K_stack, int p, double gamma,
                                    const Thresholds& thresholds,
                                    const Eigen::MatrixXd& q_rob, double tol = 1e-7);

// ---------------------------------------------------------------------------
// Affine expressions over registered scalar atoms (SDP variables).

struct AffineExpr {
  double constant = 0.0;
  std::map<int, double> coeffs;

  AffineExpr() = default;
  explicit AffineExpr(double c) : constant(c) {}
  static AffineExpr atom(int id, double scale = 1.0) {
    AffineExpr e;
    e.coeffs[id] = scale;
    return e;
  }
  AffineExpr& operator+=(const AffineExpr& o);
  AffineExpr operator*(double s) const;
};

class ExprMatrix {
 public:
  ExprMatrix() = default;
  ExprMatrix(int rows, int cols)
      : rows_(rows), cols_(cols),
        data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {}
  static ExprMatrix constant(const Eigen::MatrixXd& M);
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  AffineExpr& at(int i, int j) { return data_[idx(i, j)]; }
  const AffineExpr& at(int i, int j) const { return data_[idx(i, j)]; }
  ExprMatrix transpose() const;
  ExprMatrix operator+(const ExprMatrix& o) const;

 private:
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(cols_) +
           static_cast<std::size_t>(j);
  }
  int rows_ = 0, cols_ = 0;
  std::vector<AffineExpr> data_;
};

/// Monomial-canonical atom registry with bordered PSD liftings. Atoms whose
/// monomials coincide are identified, which keeps the relaxation tight and
/// the duplicate-product equalities implicit.
class LiftRegistry {
 public:
  /// Base atom; `binary` marks idempotent variables (theta^2 = theta).
  int add_base_atom(const std::string& name, bool binary);
  int atom_count() const { return static_cast<int>(monomials_.size()); }
  const std::string& name(int atom) const { return names_[static_cast<std::size_t>(atom)]; }

  /// Product of two affine expressions; creates no atoms, fails if a needed
  /// product atom has not been registered by a lifting yet.
  AffineExpr multiply(const AffineExpr& a, const AffineExpr& b) const;
  ExprMatrix multiply(const ExprMatrix& a, const ExprMatrix& b) const;

  struct Lifting {
    std::string name;
    std::vector<int> border;  // atom ids along the border vector
    int block_index = -1;     // bordered PSD block position in the SDP
  };

  /// Registers all pairwise products of the border atoms (reusing existing
  /// monomials) and records the bordered block for emission.
  int add_lifting(const std::string& name, const std::vector<int>& border);
  const std::vector<Lifting>& liftings() const { return liftings_; }

  /// Bordered block [[X, w], [w^T, 1]] as an expression matrix.
  ExprMatrix bordered_block(int lifting_index) const;

  /// Value of every atom at a concrete assignment of the base atoms.
  Eigen::VectorXd evaluate_atoms(const Eigen::VectorXd& base_values) const;

  /// Product-of-base-bounds cap |monomial| <= prod |base|^power; infinity
  /// when some base is unbounded.
  double monomial_bound(int atom, const std::map<int, double>& base_bounds) const;

 private:
  using Monomial = std::vector<std::pair<int, int>>;  // sorted (base, power)
  int intern(const Monomial& m, const std::string& name);
  std::optional<int> find_product(int a, int b) const;
  Monomial merge(int a, int b) const;

  std::vector<Monomial> monomials_;
  std::vector<std::string> names_;
  std::map<Monomial, int> index_;
  std::vector<int> base_atoms_;
  std::vector<bool> binary_;
  std::vector<Lifting> liftings_;
};

// ---------------------------------------------------------------------------
// The lifted topology-switching problem.

enum class GainMode { Zero, Fixed, Joint };

struct SwitchConfig {
  Thresholds thresholds;
  GainMode gain_mode = GainMode::Zero;
  double consensus_kp = 0.0;   // consensus position gain (Fixed mode)
  double consensus_kd = 0.0;   // consensus velocity gain, full-state networks
  double consensus_kl = 0.0;   // leader gain
  double gain_bound = 5.0;     // Joint mode: |g| bound per slot
  double q_rob_scale = 1.0;    // Q_rob = scale * I
  int max_rounds = 25;         // rank iteration rounds
  double rank_tol = 1e-6;      // lambda_2 / lambda_1 target
  std::int64_t sequence_cap = 10000;  // brute-force enumeration cap
};

struct LiftedProblem {
  sdp::SdpProblem sdp;
  LiftRegistry registry;
  int gamma_atom = 0;
  int steps = 0;                                   // K + 1
  std::vector<std::pair<int, int>> slots;          // union edge slots
  std::vector<std::vector<int>> theta_atoms;       // [step][slot] atom or -1 (fixed)
  std::vector<std::vector<double>> theta_fixed;    // fixed value when atom == -1
  std::vector<std::vector<int>> gain_atoms;        // Joint mode, [step][slot]
  // Constant checks that were verified at build time instead of being
  // emitted (e.g. the terminal controllability bound when B is fixed).
  std::vector<std::string> precheck_log;
  // Problem data for extraction and certification.
  model::SystemModel system;
  model::SamplingConfig sampling;
  model::TopologySet topology_set;
  SwitchConfig config;
};

/// Assembles the rank-constrained topology program: objective min gamma,
/// metric threshold constraints, the 3x3 robustness embedding, bordered
/// lifting blocks, per-step zero patterns, box/density rows.
LiftedProblem build_lifted_problem(const model::SystemModel& sys,
                                   const model::SamplingConfig& sampling,
                                   const model::TopologySet& topology_set,
                                   const SwitchConfig& config);

/// Appends Lyapunov decrease blocks V_{k+1} <= alpha V_k for the closed loop
/// along the horizon.
void add_stability_constraint(LiftedProblem& problem,
                              const std::vector<Eigen::MatrixXd>& P_seq, double alpha);

struct SwitchResult {
  std::vector<int> chosen_indices;           // per-step menu index
  std::vector<model::Topology> chosen;       // per-step adjacency
  metrics::MetricReport achieved;            // recomputed from scratch
  double j_rob_closed = 0.0;                 // closed-loop robustness value
  std::string method;                        // shor | rank_iter | brute_force
  double gamma_relaxed = 0.0;                // Shor lower bound when known
  bool relaxation_certified = true;
  double relaxation_gap = 0.0;               // achieved - relaxed
  bool rank_converged = false;
  int rounds = 0;
  std::vector<double> gain_values;           // Joint mode, per (step, slot)

  std::string to_json() const;
};

struct ShorSolution {
  sdp::SdpSolution sdp;
  double gamma = 0.0;
  Eigen::VectorXd atom_values;
  /// True when the solver certified optimality to its full tolerance; a
  /// floor-quality iterate (small violation, gap ~ 1e-5) is still returned
  /// but flagged.
  bool certified = true;
};

/// Shor relaxation: the lifted problem as built (rank constraints dropped).
ShorSolution solve_shor(const LiftedProblem& problem);

/// Convex iteration on the bordered lifting blocks: alternate SDP solves
/// with trailing-eigenspace penalties, then snap each step to the nearest
/// admissible topology and recompute all metrics exactly.
SwitchResult solve_rank_iteration(const LiftedProblem& problem);

/// Worker cap for parallel sections (brute-force enumeration); defaults to
/// one worker for fully serial runs.
void set_parallel_jobs(int jobs);
int parallel_jobs();

/// Exhaustive search over admissible per-step sequences; minimizes the
/// closed-loop robustness metric subject to the metric thresholds.
SwitchResult brute_force_select(const model::SystemModel& sys,
                                const model::SamplingConfig& sampling,
                                const model::TopologySet& topology_set,
                                const SwitchConfig& config);

/// Metrics for one concrete schedule under the configured gain policy:
/// open-loop J_con/J_obs/J_sen plus closed-loop J_rob.
struct ScheduleEvaluation {
  metrics::MetricReport report;
  double j_rob_closed = 0.0;
  bool feasible = false;
};

ScheduleEvaluation evaluate_schedule(const model::SystemModel& sys,
                                     const model::SamplingConfig& sampling,
                                     const std::vector<model::Topology>& schedule,
                                     const SwitchConfig& config);

}  // namespace zdaguard::switching
