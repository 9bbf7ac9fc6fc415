#include "zdaguard/discretize.hpp"

#include <cmath>
#include <stdexcept>

namespace zdaguard::discretize {

namespace {

void check_finite(const Eigen::MatrixXd& M, const char* what) {
  if (!M.allFinite()) throw NumericalError(std::string(what) + ": non-finite entries");
}

/// Degree-13 diagonal Pade approximant of exp(M) for ||M||_1 <= theta_13.
Eigen::MatrixXd pade13(const Eigen::MatrixXd& M) {
  static const double b[] = {64764752532480000.0, 32382376266240000.0,
                             7771770303897600.0,  1187353796428800.0,
                             129060195264000.0,   10559470521600.0,
                             670442572800.0,      33522128640.0,
                             1323241920.0,        40840800.0,
                             960960.0,            16380.0,
                             182.0,               1.0};
  const int n = static_cast<int>(M.rows());
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd M2 = M * M;
  const Eigen::MatrixXd M4 = M2 * M2;
  const Eigen::MatrixXd M6 = M4 * M2;
  const Eigen::MatrixXd U =
      M * (M6 * (b[13] * M6 + b[11] * M4 + b[9] * M2) +
           b[7] * M6 + b[5] * M4 + b[3] * M2 + b[1] * I);
  const Eigen::MatrixXd V = M6 * (b[12] * M6 + b[10] * M4 + b[8] * M2) +
                            b[6] * M6 + b[4] * M4 + b[2] * M2 + b[0] * I;
  return (V - U).partialPivLu().solve(V + U);
}

}  // namespace

Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& A, double t) {
  if (A.rows() != A.cols()) throw std::invalid_argument("matrix_exponential: A not square");
  check_finite(A, "matrix_exponential");
  if (!std::isfinite(t)) throw NumericalError("matrix_exponential: non-finite t");

  Eigen::MatrixXd M = A * t;
  const double theta13 = 5.371920351148152;  // Pade-13 scaling threshold
  const double norm = M.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > theta13) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / theta13)));
    M /= std::pow(2.0, squarings);
  }
  Eigen::MatrixXd E = pade13(M);
  for (int s = 0; s < squarings; ++s) E = E * E;
  return E;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> exp_with_integral(const Eigen::MatrixXd& A,
                                                              double tau) {
  const int n = static_cast<int>(A.rows());
  // exp([[A, I], [0, 0]] tau) = [[e^{A tau}, int_0^tau e^{A s} ds], [0, I]].
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  aug.topLeftCorner(n, n) = A;
  aug.topRightCorner(n, n) = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd E = matrix_exponential(aug, tau);
  return {E.topLeftCorner(n, n), E.topRightCorner(n, n)};
}

Eigen::MatrixXd hold_integral(const Eigen::MatrixXd& A, double t_k, double t_k1,
                              double t_l, double dt_u) {
  if (!(t_k1 > t_k)) throw std::invalid_argument("hold_integral: t_k1 must exceed t_k");
  check_finite(A, "hold_integral");
  const int n = static_cast<int>(A.rows());
  const double lo = std::max(t_k, t_l);
  const double hi = std::min(t_k1, t_l + dt_u);
  if (!(hi > lo)) return Eigen::MatrixXd::Zero(n, n);
  const auto [unused, integral] = exp_with_integral(A, hi - lo);
  (void)unused;
  return matrix_exponential(A, t_k1 - hi) * integral;
}

Eigen::MatrixXd StackedOperators::selector(int k) const {
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(p, p * (K + 1));
  E.middleCols(k * p, p) = Eigen::MatrixXd::Identity(p, p);
  return E;
}

Eigen::VectorXd StackedOperators::state_block(const Eigen::VectorXd& x_stack, int k) const {
  return x_stack.segment(k * p, p);
}

Eigen::VectorXd StackedOperators::output_block(const Eigen::VectorXd& y_stack, int k) const {
  const int rows = static_cast<int>(C_blocks[static_cast<std::size_t>(k)].rows());
  return y_stack.segment(r_offsets[static_cast<std::size_t>(k)], rows);
}

Eigen::MatrixXd StackedOperators::terminal_input_map() const {
  return B_stack.bottomRows(p);
}

Eigen::MatrixXd StackedOperators::state_maps() const {
  Eigen::MatrixXd E(state_rows(), p + input_cols());
  E.leftCols(p) = A_stack;
  E.rightCols(input_cols()) = B_stack;
  return E;
}

StackedOperators assemble_stacked(const model::SystemModel& sys,
                                  const model::SamplingConfig& sampling,
                                  const std::vector<model::Topology>& schedule) {
  const int K = sampling.sensing_steps();
  const int L = sampling.hold_steps();
  if (static_cast<int>(schedule.size()) != K + 1)
    throw std::invalid_argument("schedule length must be K + 1");

  StackedOperators ops;
  ops.K = K;
  ops.L = L;
  ops.p = sys.state_dim;
  ops.q = sys.input_dim;
  const int p = ops.p, q = ops.q;
  const double dt_y = sampling.dt_y.to_double();

  std::vector<model::SystemMatrices> mats;
  mats.reserve(schedule.size());
  for (const auto& topo : schedule) mats.push_back(sys.matrices(topo));

  ops.A_stack = Eigen::MatrixXd::Zero(p * (K + 1), p);
  ops.A_stack.topRows(p) = Eigen::MatrixXd::Identity(p, p);
  ops.B_stack = Eigen::MatrixXd::Zero(p * (K + 1), q * (L + 1));

  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd& A = mats[static_cast<std::size_t>(k)].A;
    check_finite(A, "assemble_stacked");
    ops.S.push_back(matrix_exponential(A, dt_y));

    // Per-interval input rows B_{k,L}: columns H_{k,l} B_k. The overlap of
    // the hold window [t_l, t_l + dt_u) with [t_k, t_{k+1}) is decided in
    // exact rational arithmetic, the lengths then evaluated in double.
    Eigen::MatrixXd row = Eigen::MatrixXd::Zero(p, q * (L + 1));
    const Rational tk = sampling.t_y(k);
    const Rational tk1 = sampling.t_y(k + 1);
    for (int l = 0; l <= L; ++l) {
      const Rational tl = sampling.t_u(l);
      const Rational tl_end = sampling.t_u(l + 1);
      const Rational lo = tk >= tl ? tk : tl;
      const Rational hi = tk1 <= tl_end ? tk1 : tl_end;
      if (!(lo < hi)) continue;
      const double span = (hi - lo).to_double();
      const double tail = (tk1 - hi).to_double();
      const auto [unused, integral] = exp_with_integral(A, span);
      (void)unused;
      const Eigen::MatrixXd H = matrix_exponential(A, tail) * integral;
      row.middleCols(l * q, q) = H * mats[static_cast<std::size_t>(k)].B;
    }
    ops.B_rows.push_back(row);

    // Recurrences: A-block row k+1 = S_k * row k; B-block row k+1 =
    // S_k * row k + B_{k,L}.
    ops.A_stack.middleRows((k + 1) * p, p) =
        ops.S.back() * ops.A_stack.middleRows(k * p, p);
    ops.B_stack.middleRows((k + 1) * p, p) =
        ops.S.back() * ops.B_stack.middleRows(k * p, p) + row;
  }

  int total_rows = 0;
  for (int k = 0; k <= K; ++k) {
    ops.C_blocks.push_back(mats[static_cast<std::size_t>(k)].C);
    ops.r_offsets.push_back(total_rows);
    total_rows += static_cast<int>(mats[static_cast<std::size_t>(k)].C.rows());
  }
  ops.C_stack = Eigen::MatrixXd::Zero(total_rows, p * (K + 1));
  for (int k = 0; k <= K; ++k) {
    const auto& C = ops.C_blocks[static_cast<std::size_t>(k)];
    ops.C_stack.block(ops.r_offsets[static_cast<std::size_t>(k)], k * p, C.rows(), p) = C;
  }
  return ops;
}

}  // namespace zdaguard::discretize
