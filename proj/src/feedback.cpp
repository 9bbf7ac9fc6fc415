#include "zdaguard/feedback.hpp"

#include <random>

namespace zdaguard::feedback {

CausalGainStack assemble_gain(const std::vector<std::vector<Eigen::MatrixXd>>& blocks,
                              const model::SamplingConfig& sampling,
                              const discretize::StackedOperators& ops) {
  const int L = ops.L, K = ops.K, q = ops.q;
  if (static_cast<int>(blocks.size()) != L + 1)
    throw std::invalid_argument("assemble_gain: need L + 1 block rows");

  CausalGainStack stack;
  stack.L = L;
  stack.K = K;
  stack.blocks.assign(static_cast<std::size_t>(L + 1), {});
  stack.dense = Eigen::MatrixXd::Zero(q * (L + 1), ops.output_rows());

  for (int l = 0; l <= L; ++l) {
    if (static_cast<int>(blocks[static_cast<std::size_t>(l)].size()) != K + 1)
      throw std::invalid_argument("assemble_gain: need K + 1 block columns");
    stack.blocks[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(K + 1));
    for (int k = 0; k <= K; ++k) {
      const Eigen::MatrixXd& blk = blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)];
      const int r_k = static_cast<int>(ops.C_blocks[static_cast<std::size_t>(k)].rows());
      // f_s(t_l - t_k): keep only measurements already taken.
      const bool causal = sampling.t_u(l) >= sampling.t_y(k);
      if (blk.size() == 0 || !causal) {
        stack.blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] =
            Eigen::MatrixXd::Zero(q, r_k);
        continue;
      }
      if (blk.rows() != q || blk.cols() != r_k)
        throw std::invalid_argument("assemble_gain: block (" + std::to_string(l) + "," +
                                    std::to_string(k) + ") has wrong dimensions");
      stack.blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] = blk;
      stack.dense.block(l * q, ops.r_offsets[static_cast<std::size_t>(k)], q, r_k) = blk;
    }
  }
  return stack;
}

CausalGainStack random_causal_gain(const model::SamplingConfig& sampling,
                                   const discretize::StackedOperators& ops,
                                   std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<std::vector<Eigen::MatrixXd>> blocks(static_cast<std::size_t>(ops.L + 1));
  for (int l = 0; l <= ops.L; ++l) {
    blocks[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(ops.K + 1));
    for (int k = 0; k <= ops.K; ++k) {
      const int r_k = static_cast<int>(ops.C_blocks[static_cast<std::size_t>(k)].rows());
      Eigen::MatrixXd blk(ops.q, r_k);
      for (int i = 0; i < blk.rows(); ++i)
        for (int j = 0; j < blk.cols(); ++j) blk(i, j) = dist(rng);
      blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] = blk;
    }
  }
  return assemble_gain(blocks, sampling, ops);
}

CausalGainStack consensus_output_gain(const model::NetworkInfo& net,
                                      const std::vector<model::Topology>& schedule,
                                      const model::SamplingConfig& sampling,
                                      const discretize::StackedOperators& ops,
                                      double kp, double k_leader, double kd) {
  const int mpa = net.measures_per_axis();
  std::vector<std::vector<Eigen::MatrixXd>> blocks(static_cast<std::size_t>(ops.L + 1));
  for (int l = 0; l <= ops.L; ++l) {
    blocks[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(ops.K + 1));
    // Latest sensing instant at or before t_l.
    int k_latest = 0;
    for (int k = 0; k <= ops.K; ++k)
      if (sampling.t_y(k) <= sampling.t_u(l)) k_latest = k;
    const auto edges = schedule[static_cast<std::size_t>(k_latest)].edges();
    const int r_k = static_cast<int>(ops.C_blocks[static_cast<std::size_t>(k_latest)].rows());
    Eigen::MatrixXd gain = Eigen::MatrixXd::Zero(ops.q, r_k);
    int row = 0;
    for (const auto& [i, j] : edges) {
      for (int d = 0; d < net.dims; ++d)
        for (int m = 0; m < mpa; ++m) {
          const double w = m == 0 ? kp : kd;
          gain(i * net.dims + d, row) -= w;  // measurement is x_i - x_j
          gain(j * net.dims + d, row) += w;
          ++row;
        }
    }
    for (int d = 0; d < net.dims; ++d)
      for (int m = 0; m < mpa; ++m) {
        gain(net.leader * net.dims + d, row) -= m == 0 ? k_leader : kd;
        ++row;
      }
    blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(k_latest)] = gain;
  }
  return assemble_gain(blocks, sampling, ops);
}

ClosedLoopMap closed_loop_map(const discretize::StackedOperators& ops,
                              const CausalGainStack& gains) {
  if (gains.dense.rows() != ops.input_cols() || gains.dense.cols() != ops.output_rows())
    throw std::invalid_argument("closed_loop_map: gain dimensions do not match operators");
  const int n = ops.state_rows();
  const int p = ops.p;
  const Eigen::MatrixXd BKC = ops.B_stack * gains.dense * ops.C_stack;

  // The feedback term must be strictly block lower triangular in p-blocks;
  // anything else indicates a causality bug upstream.
  const double scale = std::max(1.0, BKC.cwiseAbs().maxCoeff());
  for (int bi = 0; bi <= ops.K; ++bi)
    for (int bj = bi; bj <= ops.K; ++bj)
      if (BKC.block(bi * p, bj * p, p, p).cwiseAbs().maxCoeff() > 1e-9 * scale)
        throw std::logic_error("closed_loop_map: B K C is not strictly block lower triangular");

  ClosedLoopMap out;
  out.L = Eigen::MatrixXd::Identity(n, n) - BKC;
  // Unit block lower triangular: invert by block forward substitution.
  out.L_inv = Eigen::MatrixXd::Identity(n, n);
  for (int bi = 1; bi <= ops.K; ++bi)
    for (int bj = 0; bj < bi; ++bj) {
      Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p, p);
      for (int bk = bj; bk < bi; ++bk)
        acc += BKC.block(bi * p, bk * p, p, p) * out.L_inv.block(bk * p, bj * p, p, p);
      out.L_inv.block(bi * p, bj * p, p, p) = acc;
    }
  return out;
}

Eigen::VectorXd closed_loop_state(const discretize::StackedOperators& ops,
                                  const CausalGainStack& gains,
                                  const Eigen::VectorXd& x_S,
                                  const Eigen::VectorXd& v_seq,
                                  const Eigen::VectorXd& a_seq) {
  if (x_S.size() != ops.p || v_seq.size() != ops.input_cols() ||
      a_seq.size() != ops.input_cols())
    throw std::invalid_argument("closed_loop_state: dimension mismatch");
  const ClosedLoopMap map = closed_loop_map(ops, gains);
  return map.L_inv * (ops.A_stack * x_S + ops.B_stack * (v_seq + a_seq));
}

double closed_loop_robustness(const discretize::StackedOperators& ops,
                              const CausalGainStack& gains,
                              const Eigen::MatrixXd& q_rob) {
  const ClosedLoopMap map = closed_loop_map(ops, gains);
  const Eigen::MatrixXd E = map.L_inv * ops.state_maps();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(E.transpose() * q_rob * E);
  return es.eigenvalues().maxCoeff();
}

double closed_loop_robustness(const discretize::StackedOperators& ops,
                              const CausalGainStack& gains) {
  const ClosedLoopMap map = closed_loop_map(ops, gains);
  const Eigen::MatrixXd E = map.L_inv * ops.state_maps();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(E.transpose() * E);
  return es.eigenvalues().maxCoeff();
}

int nullspace_dimension(const Eigen::MatrixXd& M, double rel_tol) {
  if (M.rows() == 0 || M.cols() == 0) return static_cast<int>(M.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  const double cutoff = rel_tol * sv(0);
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++rank;
  return static_cast<int>(M.cols()) - rank;
}

InvarianceReport sensitivity_invariance_check(const discretize::StackedOperators& ops,
                                              const model::SamplingConfig& sampling,
                                              int trials, std::uint64_t seed) {
  InvarianceReport report;
  const Eigen::MatrixXd open = ops.C_stack * ops.state_maps();
  const int nullity_open = nullspace_dimension(open);
  for (int t = 0; t < trials; ++t) {
    const CausalGainStack gains = random_causal_gain(sampling, ops, seed + 1000 + t);
    const ClosedLoopMap map = closed_loop_map(ops, gains);
    const Eigen::MatrixXd closed = ops.C_stack * map.L_inv * ops.state_maps();
    InvarianceTrial trial;
    trial.nullity_open = nullity_open;
    trial.nullity_closed = nullspace_dimension(closed);
    trial.equal = trial.nullity_open == trial.nullity_closed;
    report.all_equal = report.all_equal && trial.equal;
    report.trials.push_back(trial);
  }
  return report;
}

}  // namespace zdaguard::feedback
