// Acceptance suite: one pass/fail line per criterion, tolerances pinned in
// code. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "zdaguard/sim.hpp"

using namespace zdaguard;

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

struct Criterion {
  int id;
  std::string name;
  std::function<bool(std::string&)> body;
};

// --- criterion 1: discretization vs RK4 ------------------------------------

bool criterion_discretization(std::string& detail) {
  std::mt19937_64 rng(101);
  const std::vector<std::pair<std::string, std::string>> grids = {
      {"0.5", "1.0"}, {"0.25", "0.5"}, {"1.0", "1.0"}, {"0.4", "0.6"}};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int p = 2 + static_cast<int>(rng() % 7);  // p <= 8
    const int q = 1 + static_cast<int>(rng() % 2);
    const int K = 1 + static_cast<int>(rng() % 4);  // K <= 4
    const auto& [dtu, dty] = grids[trial % grids.size()];
    const double dt_y = Rational::parse_decimal(dty).to_double();
    char tf_text[32];
    std::snprintf(tf_text, sizeof tf_text, "%.10g", K * dt_y);
    const auto sampling = model::SamplingConfig::from_strings(dtu, dty, tf_text);
    if (sampling.sensing_steps() != K) return false;

    const Eigen::MatrixXd A = oracles::random_stable(rng, p);
    const Eigen::MatrixXd B = oracles::random_matrix(rng, p, q);
    const auto sys = fixed_model(A, B, Eigen::MatrixXd::Identity(p, p));
    const auto ops = discretize::assemble_stacked(
        sys, sampling, std::vector<model::Topology>(static_cast<std::size_t>(K + 1), node1()));

    const Eigen::VectorXd x0 = oracles::random_matrix(rng, p, 1);
    const Eigen::VectorXd useq = oracles::random_matrix(rng, ops.input_cols(), 1);
    const Eigen::VectorXd x_stack = ops.A_stack * x0 + ops.B_stack * useq;
    const double dt_u = sampling.dt_u.to_double();
    for (int k = 1; k <= K; ++k) {
      const Eigen::VectorXd ref = oracles::rk4_held(A, B, useq, dt_u, ops.L, x0,
                                                    dt_y * k, dt_y / 1000.0);
      worst = std::max(worst, (x_stack.segment(k * p, p) - ref).cwiseAbs().maxCoeff());
    }
  }
  detail = "max deviation " + std::to_string(worst);
  return worst < 1e-6;
}

// --- criterion 2: metric oracles --------------------------------------------

bool criterion_metric_oracles(std::string& detail) {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int p = 2 + static_cast<int>(rng() % 3);
    const int q = 2;
    const Eigen::MatrixXd A = oracles::random_stable(rng, p);
    const Eigen::MatrixXd B = oracles::random_matrix(rng, p, q);
    const Eigen::MatrixXd C = oracles::random_matrix(rng, 2, p);
    const auto sampling = model::SamplingConfig::from_strings("1.0", "1.0", "3.0");
    const auto sys = fixed_model(A, B, C);
    const auto ops = discretize::assemble_stacked(
        sys, sampling, std::vector<model::Topology>(4, node1()));

    // Minimum-effort controllability cost vs KKT least squares (the least
    // squares system is only meaningful on invertible terminal Gramians).
    const Eigen::MatrixXd BK = ops.terminal_input_map();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gram_eig(BK * BK.transpose(),
                                                            Eigen::EigenvaluesOnly);
    if (gram_eig.eigenvalues().minCoeff() > 1e-6) {
      const Eigen::VectorXd xs = oracles::random_matrix(rng, p, 1);
      const Eigen::VectorXd xf = oracles::random_matrix(rng, p, 1);
      const auto cost = metrics::min_effort_cost(ops, xs, xf);
      if (!cost.has_value()) return false;
      const Eigen::VectorXd dx = xf - ops.A_stack.bottomRows(p) * xs;
      worst = std::max(worst,
                       std::abs(*cost - oracles::min_norm_cost(BK, dx)) /
                           std::max(1.0, std::abs(*cost)));
    }

    // Observability vs the recursive Gramian.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(p, p);
    for (int k = 0; k <= ops.K; ++k) {
      gram += phi.transpose() * C.transpose() * C * phi;
      if (k < ops.K) phi = ops.S[static_cast<std::size_t>(k)] * phi;
    }
    worst = std::max(worst, std::abs(metrics::observability_metric(ops).raw -
                                     oracles::jacobi_eigenvalues(gram)(0)));

    // Sensitivity vs the squared smallest singular value; a map with more
    // columns than rows has structural zero singular values that the thin
    // SVD does not list.
    const Eigen::MatrixXd CE = ops.C_stack * ops.state_maps();
    double smin = 0.0;
    if (CE.rows() >= CE.cols()) {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(CE);
      smin = svd.singularValues()(svd.singularValues().size() - 1);
    }
    worst = std::max(worst, std::abs(metrics::sensitivity_metric(ops).raw - smin * smin));
  }
  detail = "max oracle deviation " + std::to_string(worst);
  return worst < 1e-8;
}

// --- shared six-agent cluster fixture ---------------------------------------

struct ClusterFixture {
  model::Scenario scenario;
  model::Topology stealthy;
  model::Topology revealing;
  int steps = 12;
};

ClusterFixture cluster_fixture() {
  ClusterFixture f;
  f.stealthy =
      model::topology_from_edges(6, {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}});
  f.revealing =
      model::topology_from_edges(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 5}});
  f.scenario.model_spec.agents = 6;
  f.scenario.model_spec.dims = 3;
  f.scenario.sampling = model::SamplingConfig::from_strings("0.5", "1.0", "12.0");
  f.scenario.noise = {0.0, 0.0};
  f.scenario.seed = 3;
  f.scenario.target.kind = model::TargetSpec::Kind::Setpoint;
  f.scenario.target.setpoints = Eigen::MatrixXd::Zero(6, 3);
  f.scenario.detector.threshold = 1e-4;
  f.scenario.detector.window = 2;
  f.scenario.controller = {0.5, 1.0, 0.5};
  return f;
}

// --- criterion 3: stealth synthesis and reveal -------------------------------

bool criterion_stealth(std::string& detail) {
  const ClusterFixture f = cluster_fixture();
  const std::vector<model::Topology> constant(static_cast<std::size_t>(f.steps + 1),
                                              f.stealthy);
  const auto sys = f.scenario.build_model(f.stealthy);
  const auto ops = discretize::assemble_stacked(sys, f.scenario.sampling, constant);
  const auto plan = zda::enforced_attack(ops);

  // Full-horizon stealth at unit amplitude, noise free.
  const auto stealth =
      zda::stealthiness_check(sys, f.scenario.sampling, constant, plan, 1e-8);
  if (!stealth.stealthy) {
    detail = "deviation " + std::to_string(stealth.max_deviation);
    return false;
  }

  // Switch mid-run; detector must fire within 2 sensing steps.
  const int switch_step = 6;
  std::vector<model::Topology> switched = constant;
  for (int k = switch_step; k <= f.steps; ++k)
    switched[static_cast<std::size_t>(k)] = f.revealing;
  sim::RunOptions opt;
  opt.with_noise = false;
  opt.plan = &plan;
  opt.attack_amplitude = 5.0;
  opt.attacker_topology = f.stealthy;
  const sim::SimTrace quiet = sim::run(f.scenario, constant, opt);
  const sim::SimTrace loud = sim::run(f.scenario, switched, opt);
  detail = "deviation " + std::to_string(stealth.max_deviation) + ", detection at step " +
           std::to_string(loud.first_detection_step) + " after switch at " +
           std::to_string(switch_step);
  return quiet.first_detection_step == -1 && loud.first_detection_step >= switch_step &&
         loud.first_detection_step <= switch_step + 2;
}

// --- criterion 4: feedback invariance ----------------------------------------

bool criterion_feedback_invariance(std::string& detail) {
  // Stealthy fixture: the six-agent cluster topology over the metric horizon.
  ClusterFixture f = cluster_fixture();
  f.scenario.sampling = model::SamplingConfig::from_strings("0.5", "1.0", "2.0");
  const auto sys6 = f.scenario.build_model(f.stealthy);
  const auto ops6 = discretize::assemble_stacked(
      sys6, f.scenario.sampling, std::vector<model::Topology>(3, f.stealthy));
  const auto report6 =
      feedback::sensitivity_invariance_check(ops6, f.scenario.sampling, 50, 404);

  // Non-stealthy fixture: complete 4-agent graph with full-state exchange.
  const auto k4 = model::topology_from_edges(
      4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
  const auto sys4 =
      model::build_double_integrator_network(4, 1, k4, 0, model::MeasureMode::FullState);
  const auto sampling4 = model::SamplingConfig::from_strings("1.0", "1.0", "2.0");
  const auto ops4 = discretize::assemble_stacked(
      sys4, sampling4, std::vector<model::Topology>(3, k4));
  const auto report4 = feedback::sensitivity_invariance_check(ops4, sampling4, 50, 405);

  detail = "nullities " + std::to_string(report6.trials.front().nullity_open) + " and " +
           std::to_string(report4.trials.front().nullity_open) + ", 100 trials";
  return report6.all_equal && report4.all_equal &&
         report6.trials.front().nullity_open >= 1 &&
         report4.trials.front().nullity_open == 0;
}

// --- criterion 5: Schur equivalence ------------------------------------------

bool criterion_schur(std::string& detail) {
  std::mt19937_64 rng(505);
  int disagreements = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int p = 2 + static_cast<int>(rng() % 2);
    const int q = 1 + static_cast<int>(rng() % 2);
    const int r = 1 + static_cast<int>(rng() % 2);
    const Eigen::MatrixXd A = oracles::random_stable(rng, p);
    const Eigen::MatrixXd B = oracles::random_matrix(rng, p, q);
    const Eigen::MatrixXd C = oracles::random_matrix(rng, r, p);
    const auto sampling = model::SamplingConfig::from_strings("0.5", "1.0", "2.0");
    const auto ops = discretize::assemble_stacked(
        fixed_model(A, B, C), sampling, std::vector<model::Topology>(3, node1()));
    const auto gains = feedback::random_causal_gain(sampling, ops, 500 + trial, 0.3);
    const Eigen::MatrixXd Q = oracles::random_spd(rng, ops.state_rows(), 1.0);
    const double lam = feedback::closed_loop_robustness(ops, gains, Q);
    std::uniform_real_distribution<double> mix(0.0, 1.0);
    const double factor = mix(rng) < 0.5 ? 1.0 - 0.5 * mix(rng) - 1e-3 : 1.0 + mix(rng) + 1e-3;
    const double gamma = lam * factor;
    const bool feasible =
        sdp::schur_block_feasible(sdp::schur_embedding_matrix(ops, gains, Q, gamma));
    if (feasible != (lam <= gamma)) ++disagreements;
  }
  detail = std::to_string(disagreements) + " disagreements in 100 pairs";
  return disagreements == 0;
}

// --- criterion 6: lifted round trip ------------------------------------------

bool criterion_round_trip(std::string& detail) {
  std::mt19937_64 rng(606);
  int agreements = 0;
  for (int trial = 0; trial < 50; ++trial) {
    // Smallest meaningful stacked shapes keep the level-three lifting dense
    // but tractable.
    switching::LiftingDims dims;
    dims.p = 1;
    dims.pk = 2;
    dims.ql = 1;
    dims.r_total = 2;
    Eigen::MatrixXd A = oracles::random_matrix(rng, dims.pk, dims.p);
    A(0, 0) = 1.0;
    Eigen::MatrixXd B = oracles::random_matrix(rng, dims.pk, dims.ql);
    B.row(0).setZero();
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(dims.r_total, dims.pk);
    C(0, 0) = oracles::random_matrix(rng, 1, 1)(0, 0);
    C(1, 1) = oracles::random_matrix(rng, 1, 1)(0, 0);
    Eigen::MatrixXd Kg = Eigen::MatrixXd::Zero(dims.ql, dims.r_total);
    Kg.col(0) = oracles::random_matrix(rng, dims.ql, 1);
    const Eigen::MatrixXd Q = oracles::random_spd(rng, dims.pk, 0.5);

    const Eigen::MatrixXd L =
        Eigen::MatrixXd::Identity(dims.pk, dims.pk) - B * Kg * C;
    Eigen::MatrixXd E(dims.pk, dims.p + dims.ql);
    E.leftCols(dims.p) = A;
    E.rightCols(dims.ql) = B;
    const Eigen::MatrixXd M =
        (L.partialPivLu().solve(E)).transpose() * Q * L.partialPivLu().solve(E);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
    std::uniform_real_distribution<double> mix(0.1, 0.9);
    const double gamma = (trial % 2 == 0) ? es.eigenvalues().maxCoeff() * (1.0 + mix(rng))
                                          : es.eigenvalues().maxCoeff() * (1.0 - mix(rng));
    const switching::Thresholds th{1e-9, 1e-9, 1e-9};
    const auto report =
        switching::verify_lifted_point(A, B, C, Kg, dims.p, gamma, th, Q, 1e-7);
    if (report.agree()) ++agreements;
  }
  detail = std::to_string(agreements) + "/50 agreements";
  return agreements == 50;
}

// --- criterion 7: relaxation ordering ----------------------------------------

bool criterion_relaxation(std::string& detail) {
  // Pool: connected 4-node graphs with at least 4 edges (dense enough for a
  // positive sensitivity metric at K = 2 with full-state exchange).
  Eigen::MatrixXd positions(4, 2);
  positions << 0, 0, 1, 0, 0, 1, 1, 1;
  std::vector<model::Topology> pool;
  for (const auto& topo : model::enumerate_feasible_topologies(positions, 2.0, 1.0))
    if (topo.edge_count() >= 4) pool.push_back(topo);
  if (pool.size() < 10) return false;

  std::mt19937_64 rng(707);
  const auto sampling = model::SamplingConfig::from_strings("1.0", "1.0", "2.0");
  switching::SwitchConfig config;
  config.thresholds = {1e-6, 1e-8, 1e-9};
  config.gain_mode = switching::GainMode::Fixed;
  config.consensus_kp = 0.15;
  config.consensus_kd = 0.25;
  config.consensus_kl = 0.12;

  int instances = 0, recovered = 0, certified = 0;
  double worst_bound_slack = -1e300;
  for (int trial = 0; instances < 20 && trial < 60; ++trial) {
    std::vector<model::Topology> menu;
    std::set<std::size_t> used;
    while (menu.size() < 3) {
      const std::size_t pick = rng() % pool.size();
      if (used.insert(pick).second) menu.push_back(pool[pick]);
    }
    auto sys = model::build_double_integrator_network(4, 1, menu.front(), 0,
                                                      model::MeasureMode::FullState);
    // Heterogeneous actuator strengths vary the instances and break the
    // exact graph-symmetry ties in the objective.
    Eigen::VectorXd actuator(4);
    std::uniform_real_distribution<double> strength(0.8, 1.25);
    for (int i = 0; i < 4; ++i) actuator(i) = strength(rng);
    const auto base_map = sys.matrix_map;
    sys.matrix_map = [base_map, actuator](const model::Topology& t) {
      auto mats = base_map(t);
      for (int i = 0; i < 4; ++i) mats.B.col(i) *= actuator(i);
      return mats;
    };
    model::TopologySet set;
    set.density_cap = 1.0;
    set.steps.assign(3, menu);

    switching::SwitchResult brute;
    try {
      brute = switching::brute_force_select(sys, sampling, set, config);
    } catch (const InfeasibleError&) {
      continue;  // instance outside the family
    }
    const auto lp = switching::build_lifted_problem(sys, sampling, set, config);
    const auto shor = switching::solve_shor(lp);
    certified += shor.certified ? 1 : 0;
    worst_bound_slack = std::max(worst_bound_slack, shor.gamma - brute.j_rob_closed);
    if (shor.gamma > brute.j_rob_closed + 1e-7) {
      detail = "bound violated by " + std::to_string(shor.gamma - brute.j_rob_closed);
      return false;
    }

    const auto iter = switching::solve_rank_iteration(lp);
    if (iter.j_rob_closed < shor.gamma - 1e-6) {
      detail = "achieved value below the relaxation bound";
      return false;
    }
    // A non-unique argmin counts as recovered when the certified value
    // matches the brute-force minimum.
    if (iter.chosen_indices == brute.chosen_indices ||
        std::abs(iter.j_rob_closed - brute.j_rob_closed) <=
            1e-9 * (1.0 + brute.j_rob_closed))
      ++recovered;
    ++instances;
  }
  char buffer[192];
  std::snprintf(buffer, sizeof buffer,
                "%d instances, argmin recovered %d, %d solver-certified, worst bound "
                "slack %.3g",
                instances, recovered, certified, worst_bound_slack);
  detail = buffer;
  return instances >= 20 && recovered * 5 >= instances * 4;  // >= 80%
}

// --- criterion 8: table pattern at 24 agents ----------------------------------

bool criterion_table_pattern(std::string& detail) {
  const int N = 24, dims = 2, total_steps = 12;
  const auto positions_at = [&](double t) {
    Eigen::MatrixXd pos(N, dims);
    for (int i = 0; i < N; ++i) {
      const double ang = 2 * M_PI * i / N + 0.15 * t;
      const double rad = 10.0 + 2.0 * std::sin(0.4 * t + 0.7 * i);
      pos(i, 0) = rad * std::cos(ang);
      pos(i, 1) = rad * std::sin(ang);
    }
    return pos;
  };

  model::Scenario scenario;
  scenario.model_spec.agents = N;
  scenario.model_spec.dims = dims;
  scenario.model_spec.measure = model::MeasureMode::FullState;
  scenario.sampling = model::SamplingConfig::from_strings("0.5", "1.0", "2.0");
  scenario.noise = {1e-4, 5e-3};
  scenario.seed = 8;
  scenario.controller = {0.15, 0.25, 0.12};

  switching::SwitchConfig config;
  config.thresholds = {1e-6, 1e-8, 1e-9};
  config.gain_mode = switching::GainMode::Fixed;
  config.consensus_kp = scenario.controller.kp;
  config.consensus_kd = scenario.controller.kd;
  config.consensus_kl = scenario.controller.k_leader;

  const auto chain0 = model::geometric_topology(positions_at(0.0), 4.5);
  const auto sys = scenario.build_model(chain0);

  // Receding-horizon optimized switching: per window, brute-force over the
  // per-step geometric menus and apply the first step of the argmin.
  const int K = scenario.sampling.sensing_steps();
  std::vector<model::Topology> switched;
  int distinct = 0;
  for (int s = 0; s + K <= total_steps; ++s) {
    model::TopologySet set;
    set.density_cap = 0.4;
    for (int k = 0; k <= K; ++k) {
      std::vector<model::Topology> menu;
      for (double r : {4.5, 6.0, 8.0}) {
        const auto topo = model::geometric_topology(positions_at(s + k), r);
        if (!topo.connected() || topo.density() > 0.4) continue;
        bool dup = false;
        for (const auto& m : menu) dup = dup || m == topo;
        if (!dup) menu.push_back(topo);
      }
      if (menu.empty()) return false;
      set.steps.push_back(menu);
    }
    const auto choice = switching::brute_force_select(sys, scenario.sampling, set, config);
    switched.push_back(choice.chosen.front());
    if (s > 0 && !(switched[switched.size() - 1] == switched[switched.size() - 2]))
      ++distinct;
  }
  // Pad the tail of the horizon with the last choice.
  while (static_cast<int>(switched.size()) < total_steps + 1)
    switched.push_back(switched.back());

  // No-switching baseline: two disjoint communication rings.
  std::vector<std::pair<int, int>> cluster_edges;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 12; ++i)
      cluster_edges.emplace_back(12 * c + i, 12 * c + (i + 1) % 12);
  const auto clustered = model::topology_from_edges(N, cluster_edges);
  const std::vector<model::Topology> baseline(static_cast<std::size_t>(total_steps + 1),
                                              clustered);

  const auto with_switch = sim::metrics_over_time(scenario, switched);
  const auto without = sim::metrics_over_time(scenario, baseline);

  const double sen_ratio =
      with_switch.average.j_sen.raw / std::max(std::abs(without.average.j_sen.raw), 1e-18);
  bool thresholds_hold = true;
  for (const auto& window : with_switch.windows)
    thresholds_hold = thresholds_hold && window.j_con.raw >= config.thresholds.c_c &&
                      window.j_obs.raw >= config.thresholds.c_o;

  char buffer[256];
  std::snprintf(buffer, sizeof buffer,
                "J_sen %.3g vs %.3g (ratio %.2g), J_rob %.4g vs %.4g, %d switches",
                with_switch.average.j_sen.raw, without.average.j_sen.raw, sen_ratio,
                with_switch.j_rob_closed_average, without.j_rob_closed_average, distinct);
  detail = buffer;
  return sen_ratio >= 1e4 &&
         with_switch.j_rob_closed_average < without.j_rob_closed_average &&
         thresholds_hold;
}

// --- criterion 9: cart-pole demo ----------------------------------------------

bool criterion_cartpole(std::string& detail) {
  const auto sys = model::build_cartpole();
  const auto mats = sys.matrices(node1());
  const auto zeros = zda::invariant_zeros(mats.A, mats.B, mats.C);
  bool unstable_zero = false;
  for (const auto& z : zeros.zeros)
    if (z.z.real() > 0.1 && std::abs(z.z.imag()) < 1e-8) unstable_zero = true;
  if (!unstable_zero) {
    detail = "no unstable invariant zero found";
    return false;
  }
  const auto demo = sim::run_cartpole_demo();
  char buffer[192];
  std::snprintf(buffer, sizeof buffer,
                "zero %.4f, growth %.3g, output deviation %.3g, envelope ratio %.3g",
                demo.zero_used.real(), demo.state_growth, demo.output_deviation,
                demo.estimate_envelope_attacked /
                    std::max(demo.estimate_envelope_nominal, 1e-12));
  detail = buffer;
  return demo.state_growth >= 10.0 && demo.output_deviation <= 1e-6 &&
         demo.estimate_envelope_attacked <=
             10.0 * std::max(demo.estimate_envelope_nominal, 1e-12);
}

// --- criterion 10: SDP solver health -------------------------------------------

bool criterion_sdp_health(std::string& detail) {
  // Analytic instance.
  sdp::SdpProblem analytic;
  analytic.num_vars = 1;
  analytic.c = Eigen::VectorXd::Ones(1);
  sdp::ConstraintBlock blk;
  blk.dim = 2;
  blk.mats.resize(2);
  blk.mats[0] = (Eigen::MatrixXd(2, 2) << 0, 1, 1, 0).finished();
  blk.mats[1] = Eigen::MatrixXd::Identity(2, 2);
  analytic.blocks.push_back(blk);
  const auto sol = sdp::solve(analytic);
  if (sol.status != sdp::SolveStatus::Optimal || std::abs(sol.x(0) - 1.0) > 1e-6 ||
      sol.duality_gap > 1e-7 * (1 + std::abs(sol.objective))) {
    detail = "analytic instance failed";
    return false;
  }

  std::mt19937_64 rng(1010);
  int passed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + static_cast<int>(rng() % 5);
    const int dim = 2 + static_cast<int>(rng() % 3);
    sdp::SdpProblem prob;
    prob.num_vars = m;
    prob.c = Eigen::VectorXd::Zero(m);
    const Eigen::VectorXd x0 = oracles::random_matrix(rng, m, 1);
    sdp::ConstraintBlock random_blk;
    random_blk.dim = dim;
    random_blk.mats.resize(static_cast<std::size_t>(m + 1));
    Eigen::MatrixXd sumx = Eigen::MatrixXd::Zero(dim, dim);
    const Eigen::MatrixXd Z0 = oracles::random_spd(rng, dim, 0.3);
    for (int i = 0; i < m; ++i) {
      Eigen::MatrixXd Fi = oracles::random_matrix(rng, dim, dim);
      Fi = Eigen::MatrixXd(0.5 * (Fi + Fi.transpose()));
      random_blk.mats[static_cast<std::size_t>(i + 1)] = Fi;
      sumx += x0(i) * Fi;
      prob.c(i) += (Fi.array() * Z0.array()).sum();
    }
    random_blk.mats[0] = oracles::random_spd(rng, dim, 0.5) - sumx;
    prob.blocks.push_back(std::move(random_blk));
    const auto s = sdp::solve(prob);
    if (s.status == sdp::SolveStatus::Optimal && s.max_violation <= 1e-7 &&
        s.duality_gap <= 1e-7 * (1.0 + std::abs(s.objective)))
      ++passed;
  }
  detail = std::to_string(passed) + "/100 KKT-clean solves";
  return passed == 100;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "discretization fidelity vs RK4 (1e-6, 20 systems)", criterion_discretization},
      {2, "metric oracles (1e-8, 20 instances each)", criterion_metric_oracles},
      {3, "stealth synthesis and reveal on the 6-agent fixture", criterion_stealth},
      {4, "feedback invariance of the stealth nullity (100 trials)",
       criterion_feedback_invariance},
      {5, "Schur embedding equivalence (100 pairs)", criterion_schur},
      {6, "lifted round trip on concrete points (50 trials)", criterion_round_trip},
      {7, "relaxation ordering and argmin recovery (20 instances)", criterion_relaxation},
      {8, "24-agent switching pattern (J_sen ratio, J_rob ordering)",
       criterion_table_pattern},
      {9, "cart-pole intrinsic ZDA demo", criterion_cartpole},
      {10, "SDP solver health (analytic + 100-run KKT suite)", criterion_sdp_health},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string accumulated_detail;
    bool ok = false;
    try {
      ok = criterion.body(accumulated_detail);
    } catch (const std::exception& e) {
      accumulated_detail = std::string("exception: ") + e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %2d: %s — %s (%.1f s)\n", ok ? "PASS" : "FAIL",
                criterion.id, criterion.name.c_str(), accumulated_detail.c_str(), seconds);
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures == 0) std::printf("all 10 acceptance criteria passed\n");
  return failures;
}
