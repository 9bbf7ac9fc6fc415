#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "zdaguard/feedback.hpp"

using namespace zdaguard;
using namespace zdaguard::feedback;

namespace {

model::Topology node1() {
  model::Topology t;
  t.adjacency = Eigen::MatrixXi::Zero(1, 1);
  return t;
}

model::SystemModel fixed_model(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                               const Eigen::MatrixXd& C) {
  model::SystemModel sys;
  sys.state_dim = static_cast<int>(A.rows());
  sys.input_dim = static_cast<int>(B.cols());
  sys.output_dim = static_cast<int>(C.rows());
  sys.matrix_map = [A, B, C](const model::Topology&) {
    return model::SystemMatrices{A, B, C};
  };
  return sys;
}

struct Fixture {
  model::SamplingConfig sampling;
  discretize::StackedOperators ops;
};

Fixture make_fixture(std::uint64_t seed, const std::string& dt_u = "0.5",
                     const std::string& dt_y = "1.0", const std::string& t_f = "2.0") {
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
  const Eigen::MatrixXd B = oracles::random_matrix(rng, 3, 2);
  const Eigen::MatrixXd C = oracles::random_matrix(rng, 2, 3);
  Fixture f{model::SamplingConfig::from_strings(dt_u, dt_y, t_f), {}};
  f.ops = discretize::assemble_stacked(
      fixed_model(A, B, C), f.sampling,
      std::vector<model::Topology>(f.sampling.sensing_steps() + 1, node1()));
  return f;
}

}  // namespace

TEST_CASE("all-zero gain blocks assemble to the zero matrix") {
  const auto f = make_fixture(1);
  std::vector<std::vector<Eigen::MatrixXd>> blocks(
      static_cast<std::size_t>(f.ops.L + 1),
      std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(f.ops.K + 1)));
  const auto stack = assemble_gain(blocks, f.sampling, f.ops);
  CHECK(stack.dense.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("synchronous causality mask keeps block (l,k) iff l >= k") {
  const auto f = make_fixture(2, "1.0", "1.0", "3.0");
  std::vector<std::vector<Eigen::MatrixXd>> blocks(
      static_cast<std::size_t>(f.ops.L + 1),
      std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(f.ops.K + 1)));
  for (auto& row : blocks)
    for (auto& blk : row) blk = Eigen::MatrixXd::Ones(f.ops.q, 2);
  const auto stack = assemble_gain(blocks, f.sampling, f.ops);
  for (int l = 0; l <= f.ops.L; ++l)
    for (int k = 0; k <= f.ops.K; ++k) {
      const bool kept = stack.blocks[l][k].cwiseAbs().maxCoeff() > 0;
      CHECK(kept == (l >= k));
    }
}

TEST_CASE("asynchronous mask: t_u = 0.5 lags t_y = 1.0") {
  const auto f = make_fixture(3, "0.5", "1.0", "2.0");
  std::vector<std::vector<Eigen::MatrixXd>> blocks(
      static_cast<std::size_t>(f.ops.L + 1),
      std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(f.ops.K + 1)));
  for (auto& row : blocks)
    for (auto& blk : row) blk = Eigen::MatrixXd::Ones(f.ops.q, 2);
  const auto stack = assemble_gain(blocks, f.sampling, f.ops);
  // Block (l=1, k=1) pairs t_u = 0.5 with t_y = 1.0 and must be zeroed.
  CHECK(stack.blocks[1][1].cwiseAbs().maxCoeff() == 0.0);
  CHECK(stack.blocks[2][1].cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("wrong block dimensions are rejected") {
  const auto f = make_fixture(4);
  std::vector<std::vector<Eigen::MatrixXd>> blocks(
      static_cast<std::size_t>(f.ops.L + 1),
      std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(f.ops.K + 1)));
  blocks[1][0] = Eigen::MatrixXd::Ones(f.ops.q + 1, 2);
  CHECK_THROWS_AS(assemble_gain(blocks, f.sampling, f.ops), std::invalid_argument);
}

TEST_CASE("closed-loop map: zero gains give L = I, random causal gains give det 1") {
  const auto f = make_fixture(5);
  std::vector<std::vector<Eigen::MatrixXd>> zero_blocks(
      static_cast<std::size_t>(f.ops.L + 1),
      std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(f.ops.K + 1)));
  const auto zero_gain = assemble_gain(zero_blocks, f.sampling, f.ops);
  const auto map0 = closed_loop_map(f.ops, zero_gain);
  CHECK((map0.L - Eigen::MatrixXd::Identity(f.ops.state_rows(), f.ops.state_rows()))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    const auto gains = random_causal_gain(f.sampling, f.ops, 100 + trial);
    const auto map = closed_loop_map(f.ops, gains);
    CHECK(std::abs(map.L.determinant() - 1.0) < 1e-9);
    const Eigen::MatrixXd prod = map.L * map.L_inv;
    CHECK((prod - Eigen::MatrixXd::Identity(prod.rows(), prod.cols())).cwiseAbs().maxCoeff() <
          1e-10);
  }
}

TEST_CASE("acausal hold/measurement products vanish: H_{k,l} kappa_{l,j} = 0 for k+1 <= j") {
  const auto f = make_fixture(6);
  const auto gains = random_causal_gain(f.sampling, f.ops, 7);
  const Eigen::MatrixXd BKC = f.ops.B_stack * gains.dense * f.ops.C_stack;
  for (int bi = 0; bi <= f.ops.K; ++bi)
    for (int bj = bi; bj <= f.ops.K; ++bj)
      CHECK(BKC.block(bi * f.ops.p, bj * f.ops.p, f.ops.p, f.ops.p).cwiseAbs().maxCoeff() <
            1e-12);
}

TEST_CASE("closed-loop state equals open loop at zero gains and is linear") {
  const auto f = make_fixture(8);
  std::mt19937_64 rng(9);
  const Eigen::VectorXd x_S = oracles::random_matrix(rng, f.ops.p, 1);
  const Eigen::VectorXd v = oracles::random_matrix(rng, f.ops.input_cols(), 1);
  const Eigen::VectorXd a = oracles::random_matrix(rng, f.ops.input_cols(), 1);

  std::vector<std::vector<Eigen::MatrixXd>> zero_blocks(
      static_cast<std::size_t>(f.ops.L + 1),
      std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(f.ops.K + 1)));
  const auto zero_gain = assemble_gain(zero_blocks, f.sampling, f.ops);
  const Eigen::VectorXd x_open = f.ops.A_stack * x_S + f.ops.B_stack * (v + a);
  CHECK((closed_loop_state(f.ops, zero_gain, x_S, v, a) - x_open).cwiseAbs().maxCoeff() <
        1e-12);

  const auto gains = random_causal_gain(f.sampling, f.ops, 11);
  const Eigen::VectorXd once = closed_loop_state(f.ops, gains, x_S, v, a);
  const Eigen::VectorXd twice = closed_loop_state(
      f.ops, gains, Eigen::VectorXd(2 * x_S), Eigen::VectorXd(2 * v), Eigen::VectorXd(2 * a));
  CHECK((twice - 2 * once).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, once.norm()));
}

TEST_CASE("closed-loop state matches a step-by-step recursion") {
  const auto f = make_fixture(12, "0.5", "0.5", "2.0");
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto gains = random_causal_gain(f.sampling, f.ops, 50 + trial, 0.4);
    const Eigen::VectorXd x_S = oracles::random_matrix(rng, f.ops.p, 1);
    const Eigen::VectorXd v = oracles::random_matrix(rng, f.ops.input_cols(), 1);
    const Eigen::VectorXd a = oracles::random_matrix(rng, f.ops.input_cols(), 1);
    const Eigen::VectorXd x_stack = closed_loop_state(f.ops, gains, x_S, v, a);

    // Recursion: advance one sensing interval at a time; u_l is assembled
    // from already-produced outputs only.
    const int p = f.ops.p, q = f.ops.q;
    std::vector<Eigen::VectorXd> xs{x_S};
    std::vector<Eigen::VectorXd> ys;
    for (int k = 0; k <= f.ops.K; ++k) {
      if (k > 0) {
        Eigen::VectorXd u_full(f.ops.input_cols());
        for (int l = 0; l <= f.ops.L; ++l) {
          Eigen::VectorXd ul = v.segment(l * q, q) + a.segment(l * q, q);
          for (int j = 0; j < static_cast<int>(ys.size()); ++j)
            ul += gains.blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)] *
                  ys[static_cast<std::size_t>(j)];
          u_full.segment(l * q, q) = ul;
        }
        xs.push_back(f.ops.S[static_cast<std::size_t>(k - 1)] * xs.back() +
                     f.ops.B_rows[static_cast<std::size_t>(k - 1)] * u_full);
      }
      ys.push_back(f.ops.C_blocks[static_cast<std::size_t>(k)] * xs.back());
    }
    for (int k = 0; k <= f.ops.K; ++k)
      CHECK((x_stack.segment(k * p, p) - xs[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() <
            1e-8);
  }
}

TEST_CASE("stealthiness rank is invariant under causal output feedback") {
  // Wide map: nullspace present; tall map: nullspace absent.
  const auto stealthy = make_fixture(21, "0.5", "1.0", "2.0");
  const auto report = sensitivity_invariance_check(stealthy.ops, stealthy.sampling, 50, 1);
  CHECK(report.all_equal);
  CHECK(report.trials.front().nullity_open >= 1);

  std::mt19937_64 rng(23);
  const Eigen::MatrixXd A = oracles::random_stable(rng, 2);
  const Eigen::MatrixXd B = oracles::random_matrix(rng, 2, 1);
  const Eigen::MatrixXd C = oracles::random_matrix(rng, 4, 2);
  const auto sampling = model::SamplingConfig::from_strings("1.0", "1.0", "3.0");
  const auto tall_ops = discretize::assemble_stacked(
      fixed_model(A, B, C), sampling,
      std::vector<model::Topology>(sampling.sensing_steps() + 1, node1()));
  const auto tall_report = sensitivity_invariance_check(tall_ops, sampling, 50, 2);
  CHECK(tall_report.all_equal);
  CHECK(tall_report.trials.front().nullity_open == 0);
}
