#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "zdaguard/discretize.hpp"

using namespace zdaguard;
using namespace zdaguard::discretize;

namespace {

model::Topology single_node() {
  model::Topology t;
  t.adjacency = Eigen::MatrixXi::Zero(1, 1);
  return t;
}

/// Wraps fixed matrices as a SystemModel with a constant topology map.
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

}  // namespace

TEST_CASE("matrix exponential at t = 0 is the identity") {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd A = oracles::random_matrix(rng, 5, 5, 3.0);
  const Eigen::MatrixXd E = matrix_exponential(A, 0.0);
  CHECK((E - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("matrix exponential of a diagonal matrix") {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2);
  A(0, 0) = std::log(2.0);
  const Eigen::MatrixXd E = matrix_exponential(A, 1.0);
  CHECK(E(0, 0) == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(E(1, 1) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(std::abs(E(0, 1)) < 1e-14);
  CHECK(std::abs(E(1, 0)) < 1e-14);
}

TEST_CASE("matrix exponential matches the truncated series oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd A = oracles::random_matrix(rng, 4, 4);
    A *= 0.9 / std::max(1.0, A.cwiseAbs().rowwise().sum().maxCoeff());
    const Eigen::MatrixXd expected = oracles::expm_series(A, 1.0);
    const Eigen::MatrixXd got = matrix_exponential(A, 1.0);
    CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("matrix exponential semigroup property") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd A = oracles::random_matrix(rng, 5, 5);
    std::uniform_real_distribution<double> dist(0.05, 1.5);
    const double s = dist(rng), t = dist(rng);
    const Eigen::MatrixXd lhs = matrix_exponential(A, s + t);
    const Eigen::MatrixXd rhs = matrix_exponential(A, s) * matrix_exponential(A, t);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, lhs.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("matrix exponential rejects non-finite input") {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2);
  A(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(matrix_exponential(A, 1.0), NumericalError);
}

TEST_CASE("hold integral with A = 0 and contained window is dt_u * I") {
  const Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 3);
  // Window [0.2, 0.5) inside [0, 1).
  const Eigen::MatrixXd H = hold_integral(A, 0.0, 1.0, 0.2, 0.3);
  CHECK((H - 0.3 * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("hold integral with disjoint window is zero") {
  const Eigen::MatrixXd A = Eigen::MatrixXd::Random(3, 3);
  const Eigen::MatrixXd H = hold_integral(A, 0.0, 1.0, 2.0, 0.5);
  CHECK(H.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hold integral matches quadrature on partial overlap") {
  // Scalar a != 0, window [0.75, 1.25) against the interval [0, 1).
  const double a = -0.8;
  Eigen::MatrixXd A(1, 1);
  A(0, 0) = a;
  const Eigen::MatrixXd H = hold_integral(A, 0.0, 1.0, 0.75, 0.5);
  const Eigen::MatrixXd expected = oracles::integrate_matrix(
      [&](double tau) -> Eigen::MatrixXd {
        Eigen::MatrixXd v(1, 1);
        v(0, 0) = std::exp(a * (1.0 - tau));  // h is 1 on [0.75, 1.25)
        return v;
      },
      0.75, 1.0);
  CHECK(std::abs(H(0, 0) - expected(0, 0)) < 1e-10);

  // Matrix case with the window overhanging the left edge.
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd M = oracles::random_matrix(rng, 3, 3);
  const Eigen::MatrixXd Hm = hold_integral(M, 1.0, 2.0, 0.6, 0.7);
  const Eigen::MatrixXd expected_m = oracles::integrate_matrix(
      [&](double tau) -> Eigen::MatrixXd { return oracles::expm_series(M, 2.0 - tau); },
      1.0, 1.3);
  CHECK((Hm - expected_m).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("stacked operators: K = 1 gives A_stack = [I; S_0]") {
  std::mt19937_64 rng(17);
  const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
  const auto sys = fixed_model(A, oracles::random_matrix(rng, 3, 2),
                               oracles::random_matrix(rng, 1, 3));
  const auto sampling = model::SamplingConfig::from_strings("0.5", "1.0", "1.0");
  REQUIRE(sampling.sensing_steps() == 1);
  const auto ops = assemble_stacked(sys, sampling, {single_node(), single_node()});
  CHECK((ops.A_stack.topRows(3) - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((ops.A_stack.bottomRows(3) - matrix_exponential(A, 1.0)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("stacked operators: first block row of B_stack is zero") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 3; ++trial) {
    const int p = 2 + trial, q = 1 + trial % 2;
    const auto sys = fixed_model(oracles::random_stable(rng, p),
                                 oracles::random_matrix(rng, p, q),
                                 oracles::random_matrix(rng, 2, p));
    const auto sampling = model::SamplingConfig::from_strings("0.5", "1.0", "2.0");
    const auto ops = assemble_stacked(
        sys, sampling, std::vector<model::Topology>(3, single_node()));
    CHECK(ops.B_stack.topRows(p).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("stacked operators: impulse propagation matches exact recursion for A = 0") {
  const int p = 2, q = 2;
  const Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  const Eigen::MatrixXd B = (Eigen::MatrixXd(p, q) << 1.0, 0.5, -0.25, 2.0).finished();
  const auto sys = fixed_model(A, B, Eigen::MatrixXd::Identity(p, p));
  const auto sampling = model::SamplingConfig::from_strings("1.0", "1.0", "3.0");
  const int K = sampling.sensing_steps();
  const int L = sampling.hold_steps();
  REQUIRE(K == 3);
  REQUIRE(L == 2);
  const auto ops = assemble_stacked(sys, sampling,
                                    std::vector<model::Topology>(K + 1, single_node()));

  Eigen::VectorXd u = Eigen::VectorXd::Zero(q * (L + 1));
  u(0) = 1.0;  // impulse on the first held input
  const Eigen::VectorXd x_stack = ops.B_stack * u;

  // Exact recursion for A = 0: x_{k+1} = x_k + B u_held * dt.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd u_held = Eigen::VectorXd::Zero(q);
    if (k == 0) u_held(0) = 1.0;
    x += B * u_held * 1.0;
    CHECK((x_stack.segment((k + 1) * p, p) - x).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("stacked trajectory matches RK4 reference with held inputs") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 4; ++trial) {
    const int p = 3, q = 2;
    const Eigen::MatrixXd A = oracles::random_stable(rng, p);
    const Eigen::MatrixXd B = oracles::random_matrix(rng, p, q);
    const auto sys = fixed_model(A, B, Eigen::MatrixXd::Identity(p, p));
    const auto sampling = model::SamplingConfig::from_strings("0.4", "0.6", "1.8");
    const int K = sampling.sensing_steps();
    const int L = sampling.hold_steps();
    const auto ops = assemble_stacked(sys, sampling,
                                      std::vector<model::Topology>(K + 1, single_node()));

    const Eigen::VectorXd x0 = oracles::random_matrix(rng, p, 1);
    const Eigen::VectorXd useq = oracles::random_matrix(rng, q * (L + 1), 1);
    const Eigen::VectorXd x_stack = ops.A_stack * x0 + ops.B_stack * useq;
    for (int k = 1; k <= K; ++k) {
      const Eigen::VectorXd ref =
          oracles::rk4_held(A, B, useq, 0.4, L, x0, 0.6 * k, 0.6 / 1000.0);
      CHECK((x_stack.segment(k * p, p) - ref).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("synchronous sampling reduces per-interval rows to one block") {
  std::mt19937_64 rng(29);
  const int p = 3, q = 2;
  const auto sys = fixed_model(oracles::random_stable(rng, p),
                               oracles::random_matrix(rng, p, q),
                               oracles::random_matrix(rng, 1, p));
  const auto sampling = model::SamplingConfig::from_strings("1.0", "1.0", "3.0");
  const auto ops = assemble_stacked(
      sys, sampling, std::vector<model::Topology>(4, single_node()));
  REQUIRE(ops.L == 2);
  for (int k = 0; k < ops.K; ++k) {
    int nonzero_blocks = 0;
    for (int l = 0; l <= ops.L; ++l) {
      if (ops.B_rows[k].middleCols(l * q, q).cwiseAbs().maxCoeff() > 0) {
        ++nonzero_blocks;
        CHECK(l == std::min(k, ops.L));
      }
    }
    CHECK(nonzero_blocks == 1);
  }
}

TEST_CASE("assemble_stacked rejects a schedule of the wrong length") {
  std::mt19937_64 rng(31);
  const auto sys = fixed_model(oracles::random_stable(rng, 2),
                               oracles::random_matrix(rng, 2, 1),
                               oracles::random_matrix(rng, 1, 2));
  const auto sampling = model::SamplingConfig::from_strings("1.0", "1.0", "2.0");
  CHECK_THROWS_AS(assemble_stacked(sys, sampling, {single_node()}), std::invalid_argument);
}

TEST_CASE("exact rational grid decides window edges that floats would blur") {
  // dt_u = 0.1 and dt_y = 0.3: 3*dt_u == dt_y exactly in rational arithmetic,
  // while accumulated doubles drift. The hold window of l = 3 must not leak
  // into sensing interval k = 0.
  const auto sampling = model::SamplingConfig::from_strings("0.1", "0.3", "0.9");
  CHECK(sampling.t_u(3) == sampling.t_y(1));
  CHECK(sampling.sensing_steps() == 3);
  CHECK(sampling.hold_steps() == 8);

  const Eigen::MatrixXd A = Eigen::MatrixXd::Zero(1, 1);
  const Eigen::MatrixXd B = Eigen::MatrixXd::Identity(1, 1);
  const auto sys = fixed_model(A, B, Eigen::MatrixXd::Identity(1, 1));
  const auto ops = assemble_stacked(sys, sampling,
                                    std::vector<model::Topology>(4, single_node()));
  // Interval k = 0 covers holds l = 0, 1, 2 only.
  CHECK(ops.B_rows[0].middleCols(3, 1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ops.B_rows[0].leftCols(3).cwiseAbs().minCoeff() > 0.0);
}
