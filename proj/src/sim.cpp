#include "zdaguard/sim.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace zdaguard::sim {

namespace {

/// Per-interval data of the sampled system under a (possibly long) schedule.
struct IntervalModel {
  Eigen::MatrixXd S;                      // state transition over one interval
  std::vector<std::pair<int, Eigen::MatrixXd>> holds;  // (l, H_{k,l} B)
  Eigen::MatrixXd C;                      // C_k at the interval start
};

struct SampledRun {
  model::SamplingConfig grid;  // t_f stretched to the schedule length
  std::vector<IntervalModel> intervals;
  std::vector<Eigen::MatrixXd> C_blocks;  // per sensing step, incl. terminal
  int p = 0, q = 0, steps = 0, holds_total = 0;
};

SampledRun build_run(const model::SystemModel& sys, const model::SamplingConfig& sampling,
                     const std::vector<model::Topology>& schedule) {
  SampledRun run;
  run.steps = static_cast<int>(schedule.size()) - 1;
  if (run.steps < 1) throw std::invalid_argument("sim: schedule must cover >= 1 interval");
  const Rational tf = sampling.dt_y * run.steps;
  model::SamplingConfig grid = sampling;
  grid.t_f = tf;  // stretched horizon; the text field is not re-parsed
  run.grid = grid;
  run.p = sys.state_dim;
  run.q = sys.input_dim;
  run.holds_total = static_cast<int>(tf.ceil_div(sampling.dt_u));

  const double dt_y = sampling.dt_y.to_double();
  for (int k = 0; k <= run.steps; ++k) {
    const auto mats = sys.matrices(schedule[static_cast<std::size_t>(k)]);
    run.C_blocks.push_back(mats.C);
    if (k == run.steps) break;
    IntervalModel interval;
    interval.S = discretize::matrix_exponential(mats.A, dt_y);
    interval.C = mats.C;
    const Rational tk = grid.t_y(k);
    const Rational tk1 = grid.t_y(k + 1);
    for (int l = 0; l < run.holds_total; ++l) {
      const Rational tl = grid.t_u(l);
      const Rational tl_end = grid.t_u(l + 1);
      const Rational lo = tk >= tl ? tk : tl;
      const Rational hi = tk1 <= tl_end ? tk1 : tl_end;
      if (!(lo < hi)) continue;
      const auto [unused, integral] =
          discretize::exp_with_integral(mats.A, (hi - lo).to_double());
      (void)unused;
      const Eigen::MatrixXd H =
          discretize::matrix_exponential(mats.A, (tk1 - hi).to_double()) * integral;
      interval.holds.emplace_back(l, Eigen::MatrixXd(H * mats.B));
    }
    run.intervals.push_back(std::move(interval));
  }
  return run;
}

Eigen::VectorXd gaussian(std::mt19937_64& rng, int n, double std_dev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = std_dev > 0 ? std_dev * dist(rng) : 0.0;
  return v;
}

/// Reference position/velocity of every agent at time t.
void target_state(const model::Scenario& scenario, double t, Eigen::VectorXd& pos,
                  Eigen::VectorXd& vel, Eigen::VectorXd& acc) {
  const int agents = scenario.model_spec.agents;
  const int dims = scenario.model_spec.dims;
  pos = Eigen::VectorXd::Zero(agents * dims);
  vel = Eigen::VectorXd::Zero(agents * dims);
  acc = Eigen::VectorXd::Zero(agents * dims);
  if (scenario.target.kind == model::TargetSpec::Kind::Setpoint) {
    if (scenario.target.setpoints.size() > 0)
      for (int i = 0; i < agents; ++i)
        for (int d = 0; d < dims; ++d) pos(i * dims + d) = scenario.target.setpoints(i, d);
    return;
  }
  const double a = scenario.target.amplitude;
  const double w = scenario.target.omega;
  for (int i = 0; i < agents; ++i)
    for (int d = 0; d < dims; ++d) {
      const double phase = 0.5 * i + 0.25 * d;
      pos(i * dims + d) = a * std::sin(w * t + phase);
      vel(i * dims + d) = a * w * std::cos(w * t + phase);
      acc(i * dims + d) = -a * w * w * std::sin(w * t + phase);
    }
}

}  // namespace

Eigen::MatrixXd steady_state_kalman_gain(const Eigen::MatrixXd& S,
                                         const Eigen::MatrixXd& C, double process_var,
                                         double sensor_var) {
  const int p = static_cast<int>(S.rows());
  const int r = static_cast<int>(C.rows());
  const double qv = std::max(process_var, 1e-12);
  const double rv = std::max(sensor_var, 1e-12);
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(p, p);
  for (int iter = 0; iter < 2000; ++iter) {
    const Eigen::MatrixXd innov = C * P * C.transpose() +
                                  rv * Eigen::MatrixXd::Identity(r, r);
    const Eigen::MatrixXd gain = P * C.transpose() * innov.llt().solve(
                                     Eigen::MatrixXd::Identity(r, r));
    const Eigen::MatrixXd next =
        S * (P - gain * C * P) * S.transpose() +
        qv * Eigen::MatrixXd::Identity(p, p);
    const double delta = (next - P).cwiseAbs().maxCoeff();
    P = 0.5 * (next + next.transpose());
    if (delta < 1e-13 * std::max(1.0, P.cwiseAbs().maxCoeff())) break;
  }
  const Eigen::MatrixXd innov = C * P * C.transpose() +
                                rv * Eigen::MatrixXd::Identity(r, r);
  return S * P * C.transpose() * innov.llt().solve(Eigen::MatrixXd::Identity(r, r));
}

SimTrace run(const model::Scenario& scenario,
             const std::vector<model::Topology>& schedule, const RunOptions& options) {
  const model::SystemModel sys = scenario.build_model(schedule.front());
  const SampledRun sampled = build_run(sys, scenario.sampling, schedule);
  const int p = sampled.p, q = sampled.q, steps = sampled.steps;

  // Seeded noise streams; identical scenarios produce identical traces.
  std::mt19937_64 rng(scenario.seed);
  const double proc_std = options.with_noise ? scenario.noise.process_std : 0.0;
  const double sens_std = options.with_noise ? scenario.noise.sensor_std : 0.0;

  // Observer gains per distinct topology.
  std::vector<Eigen::MatrixXd> L_obs(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k)
    L_obs[static_cast<std::size_t>(k)] = steady_state_kalman_gain(
        sampled.intervals[static_cast<std::size_t>(k)].S,
        sampled.intervals[static_cast<std::size_t>(k)].C,
        scenario.noise.process_std * scenario.noise.process_std,
        scenario.noise.sensor_std * scenario.noise.sensor_std);

  // Detector threshold: configured, or mu + sigma_mult * sigma from a
  // noise-only calibration pass of this very loop.
  double threshold = scenario.detector.threshold;
  if (threshold < 0) {
    model::Scenario calib = scenario;
    calib.detector.threshold = 0.0;  // sentinel: no recursion past one level
    RunOptions calib_options;
    calib_options.plan = nullptr;
    calib_options.control = options.control;
    calib_options.gain_stack = options.gain_stack;
    const SimTrace calib_trace = run(calib, schedule, calib_options);
    double mean = 0.0, sq = 0.0;
    for (const auto& res : calib_trace.residual) {
      mean += res.norm();
      sq += res.squaredNorm() > 0 ? res.norm() * res.norm() : 0.0;
    }
    const double n = std::max<std::size_t>(calib_trace.residual.size(), 1);
    mean /= n;
    const double var = std::max(sq / n - mean * mean, 0.0);
    threshold = mean + scenario.detector.threshold_sigma * std::sqrt(var) + 1e-12;
  }

  // Attack stream over the hold grid.
  Eigen::MatrixXd attack = Eigen::MatrixXd::Zero(q, sampled.holds_total);
  Eigen::VectorXd x_attack_shift = Eigen::VectorXd::Zero(p);
  const model::Topology assumed =
      options.attacker_topology.value_or(schedule.front());
  if (options.plan != nullptr) {
    const auto& plan = *options.plan;
    if (plan.a_seq.rows() != q)
      throw std::invalid_argument("sim: attack plan input dimension mismatch");
    x_attack_shift = options.attack_amplitude * plan.x_a0;
    for (int l = 0; l < static_cast<int>(plan.a_seq.cols()); ++l) {
      const int dest = options.attack_start_step + l;
      if (dest >= sampled.holds_total) break;
      attack.col(dest) = options.attack_amplitude * plan.a_seq.col(l);
    }
  }
  std::mt19937_64 attack_rng(scenario.seed ^ 0x9e3779b97f4a7c15ull);

  // Nullspace attacker machinery: past the plan's horizon (or at seeded
  // random steps) the attacker keeps the output of its own deviation state
  // nulled under the topology it assumes, interval by interval.
  const auto assumed_mats = sys.matrices(assumed);
  const Eigen::MatrixXd S_assumed = discretize::matrix_exponential(
      assumed_mats.A, scenario.sampling.dt_y.to_double());
  Eigen::VectorXd attacker_dev = x_attack_shift;
  const bool nullspace_attacker =
      (options.plan != nullptr &&
       options.plan->kind == zda::AttackPlan::Kind::Enforced) ||
      options.random_attack_probability > 0;
  const int plan_hold_end =
      options.plan == nullptr
          ? 0
          : options.attack_start_step + static_cast<int>(options.plan->a_seq.cols());

  SimTrace trace;
  trace.schedule = schedule;
  trace.detector_threshold = threshold;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd xhat = Eigen::VectorXd::Zero(p);
  x += x_attack_shift;

  const auto net = sys.network;
  int consecutive = 0;
  bool attack_rejected = false;

  // Extra seeded enforced attacks at random steps (demo scenarios).
  std::vector<int> random_attack_steps;
  if (options.random_attack_probability > 0) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int k = 0; k < steps; ++k)
      if (coin(attack_rng) < options.random_attack_probability)
        random_attack_steps.push_back(k);
  }

  for (int k = 0; k <= steps; ++k) {
    const double t_k = scenario.sampling.dt_y.to_double() * k;
    const Eigen::MatrixXd& C_k = sampled.C_blocks[static_cast<std::size_t>(k)];

    const Eigen::VectorXd noise_y = gaussian(rng, static_cast<int>(C_k.rows()), sens_std);
    const Eigen::VectorXd y = C_k * x + noise_y;
    const Eigen::VectorXd res = y - C_k * xhat;

    trace.time.push_back(t_k);
    trace.state.push_back(x);
    trace.estimate.push_back(xhat);
    trace.output.push_back(y);
    trace.residual.push_back(res);

    if (res.norm() > threshold && threshold > 0) {
      ++consecutive;
    } else {
      consecutive = 0;
    }
    const bool flag = consecutive >= scenario.detector.window;
    trace.detected.push_back(flag);
    if (flag && trace.first_detection_step < 0) trace.first_detection_step = k;
    if (flag && options.reject_on_detection) attack_rejected = true;

    // Tracking error on measured positions.
    if (net.has_value()) {
      Eigen::VectorXd ref_pos, ref_vel, ref_acc;
      target_state(scenario, t_k, ref_pos, ref_vel, ref_acc);
      double err = 0.0;
      for (int i = 0; i < net->agents; ++i)
        for (int d = 0; d < net->dims; ++d) {
          const double e = x(net->pos_index(i, d)) - ref_pos(i * net->dims + d);
          err += e * e;
        }
      trace.tracking_error.push_back(std::sqrt(err));
    } else {
      trace.tracking_error.push_back(x.norm());
    }
    if (k == steps) break;

    // Control for every hold instant inside [t_k, t_{k+1}).
    const IntervalModel& interval = sampled.intervals[static_cast<std::size_t>(k)];
    Eigen::VectorXd u_interval = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd a_interval = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd x_next = interval.S * x;
    Eigen::VectorXd xhat_prop = interval.S * xhat +
                                L_obs[static_cast<std::size_t>(k)] * res;

    // Nullspace continuation: choose the free attack samples of this
    // interval (those not pinned by the plan) so the assumed-topology
    // output of the deviation state stays nulled. Random-step attacks add
    // a kernel direction on top, still stealthy under the assumed topology.
    if (nullspace_attacker && !attack_rejected) {
      std::vector<int> free_holds;
      for (const auto& [l, HB] : interval.holds) {
        (void)HB;
        if (l >= plan_hold_end) free_holds.push_back(l);
      }
      if (!free_holds.empty()) {
        Eigen::MatrixXd stacked(p, static_cast<int>(free_holds.size()) * q);
        int col = 0;
        for (const auto& [l, HB] : interval.holds) {
          if (std::find(free_holds.begin(), free_holds.end(), l) == free_holds.end())
            continue;
          stacked.middleCols(col * q, q) = HB;
          ++col;
        }
        const Eigen::VectorXd rhs = -assumed_mats.C * S_assumed * attacker_dev;
        const Eigen::MatrixXd lhs = assumed_mats.C * stacked;
        Eigen::VectorXd sol =
            lhs.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
        const bool kick_now =
            std::find(random_attack_steps.begin(), random_attack_steps.end(), k) !=
            random_attack_steps.end();
        if (kick_now) {
          const Eigen::MatrixXd kernel = zda::nullspace_basis(lhs, 1e-9);
          if (kernel.cols() > 0)
            sol += options.attack_amplitude *
                   (kernel * gaussian(attack_rng, static_cast<int>(kernel.cols()), 1.0));
        }
        int idx = 0;
        for (int l : free_holds) {
          attack.col(l) = sol.segment(idx * q, q);
          ++idx;
        }
      }
    }

    for (const auto& [l, HB] : interval.holds) {
      Eigen::VectorXd u_l = Eigen::VectorXd::Zero(q);
      switch (options.control) {
        case ControlMode::None:
          break;
        case ControlMode::GainStack: {
          if (options.gain_stack == nullptr)
            throw std::invalid_argument("sim: GainStack mode requires gains");
          // u_l = sum_j kappa_{l,j} y_j over already-produced measurements.
          for (int j = 0; j < static_cast<int>(trace.output.size()); ++j) {
            const auto& blocks = options.gain_stack->blocks;
            if (l < static_cast<int>(blocks.size()) &&
                j < static_cast<int>(blocks[static_cast<std::size_t>(l)].size())) {
              const Eigen::MatrixXd& blk =
                  blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];
              if (blk.size() > 0 &&
                  blk.cols() == trace.output[static_cast<std::size_t>(j)].size())
                u_l += blk * trace.output[static_cast<std::size_t>(j)];
            }
          }
          break;
        }
        case ControlMode::ObserverConsensus: {
          if (!net.has_value())
            throw std::invalid_argument("sim: consensus control needs network structure");
          const double t_l = scenario.sampling.dt_u.to_double() * l;
          Eigen::VectorXd ref_pos, ref_vel, ref_acc;
          target_state(scenario, t_l, ref_pos, ref_vel, ref_acc);
          const auto& topo = schedule[static_cast<std::size_t>(k)];
          const auto edges = topo.edges();
          const double kp = scenario.controller.kp;
          const double kd = scenario.controller.kd;
          const double kl = scenario.controller.k_leader;
          for (int i = 0; i < net->agents; ++i)
            for (int d = 0; d < net->dims; ++d) {
              double u_val = ref_acc(i * net->dims + d);
              const double pos_err =
                  xhat(net->pos_index(i, d)) - ref_pos(i * net->dims + d);
              double vel_err = 0.0;
              if (net->order > 1)
                vel_err = xhat(net->pos_index(i, d) + 1) - ref_vel(i * net->dims + d);
              u_val -= kd * vel_err;
              if (i == net->leader) u_val -= kl * pos_err;
              u_l(i * net->dims + d) += u_val;
            }
          for (const auto& [i, j] : edges)
            for (int d = 0; d < net->dims; ++d) {
              const double rel =
                  (xhat(net->pos_index(i, d)) - ref_pos(i * net->dims + d)) -
                  (xhat(net->pos_index(j, d)) - ref_pos(j * net->dims + d));
              u_l(i * net->dims + d) -= kp * rel;
              u_l(j * net->dims + d) += kp * rel;
            }
          break;
        }
      }

      Eigen::VectorXd a_l = attack_rejected ? Eigen::VectorXd::Zero(q)
                                            : Eigen::VectorXd(attack.col(l));
      x_next += HB * (u_l + a_l);
      xhat_prop += HB * u_l;  // the defender cannot measure the attack
      u_interval = u_l;
      a_interval = a_l;
    }

    // Attacker's deviation model under the assumed topology.
    if (nullspace_attacker && !attack_rejected) {
      Eigen::VectorXd dev_next = S_assumed * attacker_dev;
      for (const auto& [l, HB] : interval.holds) dev_next += HB * attack.col(l);
      attacker_dev = dev_next;
    }

    const Eigen::VectorXd noise_x = gaussian(rng, p, proc_std);
    x = x_next + noise_x;
    xhat = xhat_prop;
    trace.control.push_back(u_interval);
    trace.attack.push_back(a_interval);
  }

  if (options.with_window_metrics &&
      steps >= scenario.sampling.sensing_steps()) {
    const MetricsOverTime series = metrics_over_time(scenario, schedule);
    trace.window_reports = series.windows;
  }
  return trace;
}

CartPoleDemo run_cartpole_demo(double dt, double t_f, double amplitude,
                               std::uint64_t seed) {
  CartPoleDemo demo;
  const auto sys = model::build_cartpole();
  model::Topology node;
  node.adjacency = Eigen::MatrixXi::Zero(1, 1);
  const auto mats = sys.matrices(node);

  char dt_text[32];
  std::snprintf(dt_text, sizeof dt_text, "%.10g", dt);
  char tf_text[32];
  std::snprintf(tf_text, sizeof tf_text, "%.10g", t_f);
  const auto sampling =
      model::SamplingConfig::from_strings(dt_text, dt_text, tf_text);
  const int steps = sampling.sensing_steps();

  // Intrinsic ZDA from the unstable invariant zero.
  const auto zeros = zda::invariant_zeros(mats.A, mats.B, mats.C);
  const auto plan = zda::intrinsic_attack(zeros, sampling, amplitude);
  demo.zero_used = plan.z_inv;

  // LQR on the sampled pair, applied to the Kalman estimate.
  const Eigen::MatrixXd S = discretize::matrix_exponential(mats.A, dt);
  const auto [unused, integral] = discretize::exp_with_integral(mats.A, dt);
  (void)unused;
  const Eigen::MatrixXd Bd = integral * mats.B;
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(4, 4);
  for (int iter = 0; iter < 20000; ++iter) {
    const Eigen::MatrixXd BtPB =
        Bd.transpose() * P * Bd + Eigen::MatrixXd::Identity(1, 1);
    const Eigen::MatrixXd next = S.transpose() * P * S -
                                 S.transpose() * P * Bd * BtPB.llt().solve(
                                     Bd.transpose() * P * S) +
                                 Eigen::MatrixXd::Identity(4, 4);
    const double delta = (next - P).cwiseAbs().maxCoeff();
    P = 0.5 * (next + next.transpose());
    if (delta < 1e-12 * std::max(1.0, P.cwiseAbs().maxCoeff())) break;
  }
  const Eigen::MatrixXd K_lqr =
      (Bd.transpose() * P * Bd + Eigen::MatrixXd::Identity(1, 1))
          .llt()
          .solve(Bd.transpose() * P * S);
  const Eigen::MatrixXd L_obs =
      steady_state_kalman_gain(S, mats.C, 1e-8, 5e-3 * 5e-3);

  const auto simulate = [&](bool with_attack) {
    SimTrace trace;
    std::mt19937_64 rng(seed);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
    if (with_attack) x += plan.x_a0;
    Eigen::VectorXd xhat = Eigen::VectorXd::Zero(4);
    for (int k = 0; k <= steps; ++k) {
      const Eigen::VectorXd y =
          mats.C * x + gaussian(rng, 1, 5e-3);
      const Eigen::VectorXd res = y - mats.C * xhat;
      trace.time.push_back(k * dt);
      trace.state.push_back(x);
      trace.estimate.push_back(xhat);
      trace.output.push_back(y);
      trace.residual.push_back(res);
      trace.detected.push_back(false);
      trace.tracking_error.push_back(x.norm());
      if (k == steps) break;
      const Eigen::VectorXd u = -K_lqr * xhat;
      Eigen::VectorXd a = Eigen::VectorXd::Zero(1);
      if (with_attack && k < plan.a_seq.cols()) a = plan.a_seq.col(k);
      const Eigen::VectorXd w = gaussian(rng, 4, 1e-4);
      x = S * x + Bd * (u + a) + w;
      xhat = S * xhat + Bd * u + L_obs * res;
      trace.control.push_back(u);
      trace.attack.push_back(a);
    }
    return trace;
  };

  demo.nominal = simulate(false);
  demo.attacked = simulate(true);

  for (const auto& e : demo.nominal.estimate)
    demo.estimate_envelope_nominal = std::max(demo.estimate_envelope_nominal, e.norm());
  for (const auto& e : demo.attacked.estimate)
    demo.estimate_envelope_attacked = std::max(demo.estimate_envelope_attacked, e.norm());
  const Eigen::VectorXd diff = demo.attacked.state.back() - demo.nominal.state.back();
  demo.state_growth = plan.x_a0.norm() > 0 ? diff.norm() / plan.x_a0.norm() : 0.0;
  for (std::size_t k = 0; k < demo.nominal.output.size(); ++k)
    demo.output_deviation = std::max(
        demo.output_deviation,
        (demo.attacked.output[k] - demo.nominal.output[k]).norm());
  return demo;
}

MetricsOverTime metrics_over_time(const model::Scenario& scenario,
                                  const std::vector<model::Topology>& schedule) {
  const model::SystemModel sys = scenario.build_model(schedule.front());
  const int K = scenario.sampling.sensing_steps();
  const int total = static_cast<int>(schedule.size()) - 1;
  if (total < K) throw std::invalid_argument("metrics_over_time: schedule shorter than K");

  switching::SwitchConfig config;
  config.gain_mode = switching::GainMode::Fixed;
  config.consensus_kp = scenario.controller.kp;
  config.consensus_kd = scenario.controller.kd;
  config.consensus_kl = scenario.controller.k_leader;
  config.thresholds = {1e-300, 1e-300, 1e-300};  // evaluation only

  MetricsOverTime out;
  double sum_con = 0, sum_obs = 0, sum_rob = 0, sum_sen = 0, sum_closed = 0;
  double sum_con_raw = 0, sum_obs_raw = 0, sum_rob_raw = 0, sum_sen_raw = 0;
  for (int s = 0; s + K < static_cast<int>(schedule.size()); ++s) {
    const std::vector<model::Topology> window(schedule.begin() + s,
                                              schedule.begin() + s + K + 1);
    const auto eval = switching::evaluate_schedule(sys, scenario.sampling, window, config);
    out.window_start.push_back(scenario.sampling.dt_y.to_double() * s);
    out.windows.push_back(eval.report);
    out.j_rob_closed.push_back(eval.j_rob_closed);
    sum_con += eval.report.j_con.value;
    sum_obs += eval.report.j_obs.value;
    sum_rob += eval.report.j_rob.value;
    sum_sen += eval.report.j_sen.value;
    sum_con_raw += eval.report.j_con.raw;
    sum_obs_raw += eval.report.j_obs.raw;
    sum_rob_raw += eval.report.j_rob.raw;
    sum_sen_raw += eval.report.j_sen.raw;
    sum_closed += eval.j_rob_closed;
  }
  const double n = static_cast<double>(out.windows.size());
  out.average.j_con.value = sum_con / n;
  out.average.j_obs.value = sum_obs / n;
  out.average.j_rob.value = sum_rob / n;
  out.average.j_sen.value = sum_sen / n;
  out.average.j_con.raw = sum_con_raw / n;
  out.average.j_obs.raw = sum_obs_raw / n;
  out.average.j_rob.raw = sum_rob_raw / n;
  out.average.j_sen.raw = sum_sen_raw / n;
  out.average.K = K;
  out.average.L = scenario.sampling.hold_steps();
  out.j_rob_closed_average = sum_closed / n;
  return out;
}

// ---------------------------------------------------------------------------

std::string SimTrace::csv_header(int p) {
  std::ostringstream out;
  out << "time,detected,residual_norm,tracking_error";
  for (int i = 0; i < p; ++i) out << ",x" << i;
  for (int i = 0; i < p; ++i) out << ",xhat" << i;
  out << ",control_norm,attack_norm";
  return out.str();
}

std::string SimTrace::csv() const {
  std::ostringstream out;
  out.precision(17);
  const int p = state.empty() ? 0 : static_cast<int>(state.front().size());
  out << csv_header(p) << "\n";
  for (std::size_t k = 0; k < time.size(); ++k) {
    out << time[k] << ',' << (detected[k] ? 1 : 0) << ',' << residual[k].norm() << ','
        << tracking_error[k];
    for (int i = 0; i < p; ++i) out << ',' << state[k](i);
    for (int i = 0; i < p; ++i) out << ',' << estimate[k](i);
    const double un = k < control.size() ? control[k].norm() : 0.0;
    const double an = k < attack.size() ? attack[k].norm() : 0.0;
    out << ',' << un << ',' << an << "\n";
  }
  return out.str();
}

std::string SimTrace::summary_json() const {
  nlohmann::ordered_json doc;
  doc["steps"] = time.size();
  doc["detector_threshold"] = detector_threshold;
  doc["first_detection_step"] = first_detection_step;
  double max_res = 0, final_err = tracking_error.empty() ? 0 : tracking_error.back();
  for (const auto& r : residual) max_res = std::max(max_res, r.norm());
  doc["max_residual_norm"] = max_res;
  doc["final_tracking_error"] = final_err;
  int detections = 0;
  for (bool f : detected) detections += f ? 1 : 0;
  doc["detected_steps"] = detections;
  return doc.dump(2);
}

std::string MetricsOverTime::csv() const {
  // One row per sliding window; the trailing summary row carries time = -1.
  std::ostringstream out;
  out.precision(17);
  out << metrics::MetricReport::csv_header() << ",j_rob_closed\n";
  for (std::size_t i = 0; i < windows.size(); ++i)
    out << windows[i].csv_row(window_start[i]) << ',' << j_rob_closed[i] << "\n";
  out << average.csv_row(-1.0) << ',' << j_rob_closed_average << "\n";
  return out.str();
}

}  // namespace zdaguard::sim
