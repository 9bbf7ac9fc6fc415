#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "zdaguard/metrics.hpp"

using namespace zdaguard;
using namespace zdaguard::metrics;

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

discretize::StackedOperators assemble(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                      const Eigen::MatrixXd& C, const std::string& dt_u,
                                      const std::string& dt_y, const std::string& t_f) {
  const auto sampling = model::SamplingConfig::from_strings(dt_u, dt_y, t_f);
  return discretize::assemble_stacked(
      fixed_model(A, B, C), sampling,
      std::vector<model::Topology>(sampling.sensing_steps() + 1, node1()));
}

}  // namespace

TEST_CASE("extreme eigen: identity and diagonal cases") {
  const auto top = symmetric_extreme_eigen(Eigen::MatrixXd::Identity(3, 3), Which::Max);
  CHECK(top.value == doctest::Approx(1.0));
  CHECK(top.vector.norm() == doctest::Approx(1.0));

  Eigen::MatrixXd D = Eigen::VectorXd::LinSpaced(3, 0, 2).asDiagonal();
  D(0, 0) = 3;
  D(1, 1) = 1;
  D(2, 2) = 2;
  const auto bottom = symmetric_extreme_eigen(D, Which::Min);
  CHECK(bottom.value == doctest::Approx(1.0));
  CHECK(std::abs(bottom.vector(1)) == doctest::Approx(1.0));
}

TEST_CASE("extreme eigen matches the Jacobi oracle on random symmetric matrices") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd M = oracles::random_matrix(rng, 8, 8, 2.0);
    M = Eigen::MatrixXd(0.5 * (M + M.transpose()));
    const Eigen::VectorXd ev = oracles::jacobi_eigenvalues(M);
    CHECK(symmetric_extreme_eigen(M, Which::Min).value ==
          doctest::Approx(ev(0)).epsilon(1e-9));
    CHECK(symmetric_extreme_eigen(M, Which::Max).value ==
          doctest::Approx(ev(7)).epsilon(1e-9));
    const auto pair = symmetric_extreme_eigen(M, Which::Max);
    CHECK((M * pair.vector - pair.value * pair.vector).norm() <= 1e-9 * M.norm());
  }
}

TEST_CASE("extreme eigen input guards") {
  Eigen::MatrixXd bad(2, 2);
  bad << 0, 1, -1, 0;  // skew, defect too large
  CHECK_THROWS_AS(symmetric_extreme_eigen(bad, Which::Min), std::invalid_argument);
  Eigen::MatrixXd nan = Eigen::MatrixXd::Zero(2, 2);
  nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(symmetric_extreme_eigen(nan, Which::Min), NumericalError);
}

TEST_CASE("controllability metric on a terminal identity map") {
  discretize::StackedOperators ops;
  ops.p = 3;
  ops.q = 3;
  ops.K = 1;
  ops.L = 0;
  ops.A_stack = Eigen::MatrixXd::Identity(6, 3);
  ops.B_stack = Eigen::MatrixXd::Zero(6, 3);
  ops.B_stack.bottomRows(3) = Eigen::MatrixXd::Identity(3, 3);
  ops.C_stack = Eigen::MatrixXd::Identity(6, 6);
  CHECK(controllability_metric(ops).value == doctest::Approx(1.0));
}

TEST_CASE("an actuator-less agent makes the network uncontrollable") {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(4, 4);
  A(0, 1) = 1.0;
  A(2, 3) = 1.0;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(4, 2);
  B(1, 0) = 1.0;  // second agent's actuator column left zero
  const auto ops = assemble(A, B, Eigen::MatrixXd::Identity(4, 4), "1.0", "1.0", "3.0");
  const auto j_con = controllability_metric(ops);
  CHECK(j_con.value == 0.0);
  CHECK(std::abs(j_con.raw) < 1e-10);
  CHECK_FALSE(min_effort_cost(ops, Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4))
                  .has_value());
}

TEST_CASE("minimum-effort cost matches the KKT least-squares oracle") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 8; ++trial) {
    const Eigen::MatrixXd A = oracles::random_stable(rng, 2);
    const Eigen::MatrixXd B = oracles::random_matrix(rng, 2, 2);
    const auto ops = assemble(A, B, Eigen::MatrixXd::Identity(2, 2), "1.0", "1.0", "2.0");
    const Eigen::VectorXd x_S = oracles::random_matrix(rng, 2, 1);
    const Eigen::VectorXd x_F = oracles::random_matrix(rng, 2, 1);
    const auto cost = min_effort_cost(ops, x_S, x_F);
    REQUIRE(cost.has_value());
    const Eigen::VectorXd dx = x_F - ops.A_stack.bottomRows(2) * x_S;
    const double expected = oracles::min_norm_cost(ops.terminal_input_map(), dx);
    CHECK(*cost == doctest::Approx(expected).epsilon(1e-8));
  }
}

TEST_CASE("observability metric basics and the recursive Gramian oracle") {
  std::mt19937_64 rng(47);
  const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
  const Eigen::MatrixXd B = oracles::random_matrix(rng, 3, 1);

  const auto ops_id = assemble(A, B, Eigen::MatrixXd::Identity(3, 3), "1.0", "1.0", "2.0");
  CHECK(observability_metric(ops_id).value > 0.0);

  const auto ops_zero = assemble(A, B, Eigen::MatrixXd::Zero(2, 3), "1.0", "1.0", "2.0");
  CHECK(observability_metric(ops_zero).value == 0.0);

  for (int trial = 0; trial < 6; ++trial) {
    const Eigen::MatrixXd At = oracles::random_stable(rng, 3);
    const Eigen::MatrixXd Ct = oracles::random_matrix(rng, 2, 3);
    const auto ops = assemble(At, B, Ct, "1.0", "1.0", "3.0");
    // Recursive observability Gramian: sum over k of Phi_k^T C^T C Phi_k.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(3, 3);
    Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(3, 3);
    for (int k = 0; k <= ops.K; ++k) {
      gram += phi.transpose() * Ct.transpose() * Ct * phi;
      if (k < ops.K) phi = ops.S[static_cast<std::size_t>(k)] * phi;
    }
    const double expected = oracles::jacobi_eigenvalues(gram)(0);
    CHECK(observability_metric(ops).raw == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("robustness metric: identity A-row block and Rayleigh quotients") {
  discretize::StackedOperators ops;
  ops.p = 2;
  ops.q = 1;
  ops.K = 1;
  ops.L = 0;
  ops.A_stack = Eigen::MatrixXd::Zero(4, 2);
  ops.A_stack.topRows(2) = Eigen::MatrixXd::Identity(2, 2);
  ops.B_stack = Eigen::MatrixXd::Zero(4, 1);
  ops.C_stack = Eigen::MatrixXd::Identity(4, 4);
  CHECK(robustness_metric(ops).value == doctest::Approx(1.0));

  std::mt19937_64 rng(53);
  const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
  const Eigen::MatrixXd B = oracles::random_matrix(rng, 3, 2);
  const auto real_ops = assemble(A, B, Eigen::MatrixXd::Identity(3, 3), "0.5", "1.0", "2.0");
  const double j_rob = robustness_metric(real_ops).value;
  const Eigen::MatrixXd E = real_ops.state_maps();
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd w(E.cols());
    for (int j = 0; j < w.size(); ++j) w(j) = dist(rng);
    w.normalize();
    CHECK((E * w).squaredNorm() <= j_rob + 1e-9);
  }
  const auto pair = symmetric_extreme_eigen(E.transpose() * E, Which::Max);
  CHECK((E * pair.vector).squaredNorm() == doctest::Approx(j_rob).epsilon(1e-9));
}

TEST_CASE("robustness metric scales linearly in the weight") {
  std::mt19937_64 rng(59);
  const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
  const Eigen::MatrixXd B = oracles::random_matrix(rng, 3, 2);
  const auto ops = assemble(A, B, Eigen::MatrixXd::Identity(3, 3), "1.0", "1.0", "2.0");
  const Eigen::MatrixXd Q = oracles::random_spd(rng, ops.state_rows());
  const double base = robustness_metric(ops, Q).value;
  const double scaled = robustness_metric(ops, Eigen::MatrixXd(10.0 * Q)).value;
  CHECK(scaled == doctest::Approx(10.0 * base).epsilon(1e-10));
  CHECK_THROWS_AS(robustness_metric(ops, Eigen::MatrixXd(-Q)), std::invalid_argument);
}

TEST_CASE("sensitivity metric basics") {
  std::mt19937_64 rng(61);
  const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
  const Eigen::MatrixXd B = oracles::random_matrix(rng, 3, 2);

  const auto ops_zero_c = assemble(A, B, Eigen::MatrixXd::Zero(2, 3), "1.0", "1.0", "2.0");
  CHECK(sensitivity_metric(ops_zero_c).value == 0.0);

  // No attack channel: q = 0 leaves only the initial-state columns.
  const auto ops_no_b =
      assemble(A, Eigen::MatrixXd::Zero(3, 0), Eigen::MatrixXd::Identity(3, 3), "1.0",
               "1.0", "2.0");
  const Eigen::MatrixXd CA = ops_no_b.C_stack * ops_no_b.A_stack;
  const double expected = oracles::jacobi_eigenvalues(CA.transpose() * CA)(0);
  CHECK(sensitivity_metric(ops_no_b).value == doctest::Approx(expected));
  CHECK(sensitivity_metric(ops_no_b).value > 0.0);
}

TEST_CASE("sensitivity equals the squared smallest singular value") {
  std::mt19937_64 rng(67);
  for (int trial = 0; trial < 8; ++trial) {
    const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
    const Eigen::MatrixXd B = oracles::random_matrix(rng, 3, 1);
    const Eigen::MatrixXd C = oracles::random_matrix(rng, 4, 3);
    const auto ops = assemble(A, B, C, "0.5", "0.5", "2.0");
    const Eigen::MatrixXd CE = ops.C_stack * ops.state_maps();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(CE);
    const double smin = svd.singularValues()(svd.singularValues().size() - 1);
    CHECK(sensitivity_metric(ops).raw == doctest::Approx(smin * smin).epsilon(1e-9));
  }
}

TEST_CASE("appending a sensing step never decreases the observability form") {
  std::mt19937_64 rng(71);
  const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
  const Eigen::MatrixXd B = oracles::random_matrix(rng, 3, 1);
  const Eigen::MatrixXd C = oracles::random_matrix(rng, 2, 3);
  const auto short_ops = assemble(A, B, C, "1.0", "1.0", "2.0");
  const auto long_ops = assemble(A, B, C, "1.0", "1.0", "3.0");
  const Eigen::MatrixXd G_short =
      (short_ops.C_stack * short_ops.A_stack).transpose() * (short_ops.C_stack * short_ops.A_stack);
  const Eigen::MatrixXd G_long =
      (long_ops.C_stack * long_ops.A_stack).transpose() * (long_ops.C_stack * long_ops.A_stack);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd x(3);
    for (int j = 0; j < 3; ++j) x(j) = dist(rng);
    CHECK(x.dot(G_long * x) >= x.dot(G_short * x) - 1e-12);
  }
}

TEST_CASE("synchronous controllability equals the recursive Gramian") {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
    const Eigen::MatrixXd B = oracles::random_matrix(rng, 3, 2);
    const auto ops = assemble(A, B, Eigen::MatrixXd::Identity(3, 3), "1.0", "1.0", "3.0");
    // G_{k+1} = S G S^T + Bd Bd^T with the one-interval held-input matrix.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(3, 3);
    for (int k = 0; k < ops.K; ++k) {
      const Eigen::MatrixXd Bd =
          ops.B_rows[static_cast<std::size_t>(k)].middleCols(std::min(k, ops.L) * 2, 2);
      gram = ops.S[static_cast<std::size_t>(k)] * gram *
                 ops.S[static_cast<std::size_t>(k)].transpose() +
             Bd * Bd.transpose();
    }
    const double expected = oracles::jacobi_eigenvalues(gram)(0);
    CHECK(controllability_metric(ops).raw == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("report invariants: nonnegative values, j_rob >= j_sen for C = I, Q = I") {
  std::mt19937_64 rng(79);
  const Eigen::MatrixXd A = oracles::random_stable(rng, 3);
  const Eigen::MatrixXd B = oracles::random_matrix(rng, 3, 2);
  const auto ops = assemble(A, B, Eigen::MatrixXd::Identity(3, 3), "0.5", "1.0", "2.0");
  const MetricReport report = compute_all(ops);
  CHECK(report.j_con.value >= 0.0);
  CHECK(report.j_obs.value >= 0.0);
  CHECK(report.j_rob.value >= 0.0);
  CHECK(report.j_sen.value >= 0.0);
  CHECK(report.j_rob.value >= report.j_sen.value);
  CHECK(report.to_json().find("j_sen") != std::string::npos);
}
