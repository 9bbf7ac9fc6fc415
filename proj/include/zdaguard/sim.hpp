#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "zdaguard/feedback.hpp"
#include "zdaguard/metrics.hpp"
#include "zdaguard/switching.hpp"
#include "zdaguard/zda.hpp"

namespace zdaguard::sim {

struct SimTrace {
  std::vector<double> time;                  // sensing instants
  std::vector<Eigen::VectorXd> state;        // x_k
  std::vector<Eigen::VectorXd> estimate;     // xhat_k
  std::vector<Eigen::VectorXd> output;       // y_k (with sensor noise)
  std::vector<Eigen::VectorXd> residual;     // y_k - C_k xhat_k
  std::vector<Eigen::VectorXd> control;      // held input over [t_k, t_k+1)
  std::vector<Eigen::VectorXd> attack;       // held attack over the interval
  std::vector<bool> detected;                // window-filtered detector flag
  std::vector<double> tracking_error;        // position error vs target
  double detector_threshold = 0.0;
  int first_detection_step = -1;
  std::vector<model::Topology> schedule;
  /// Sliding-window metric reports (filled when requested).
  std::vector<metrics::MetricReport> window_reports;

  std::string csv() const;          // one row per sensing step
  std::string summary_json() const;
  static std::string csv_header(int p);
};

enum class ControlMode { None, ObserverConsensus, GainStack };

struct RunOptions {
  const zda::AttackPlan* plan = nullptr;
  double attack_amplitude = 1.0;
  int attack_start_step = 0;
  bool with_noise = true;
  ControlMode control = ControlMode::ObserverConsensus;
  const feedback::CausalGainStack* gain_stack = nullptr;  // GainStack mode
  /// Attacker's assumed topology for nullspace continuation past the plan
  /// horizon; defaults to the first schedule entry.
  std::optional<model::Topology> attacker_topology;
  /// Extra enforced attacks injected at seeded random steps.
  double random_attack_probability = 0.0;
  /// Zero the attack stream once the detector fires (countermeasure
  /// stand-in).
  bool reject_on_detection = false;
  /// Fill SimTrace::window_reports with sliding-horizon metrics.
  bool with_window_metrics = false;
};

/// Simulates the exact sampled closed loop with process/sensor noise, a
/// per-interval steady-state Kalman observer, and a residual detector.
SimTrace run(const model::Scenario& scenario,
             const std::vector<model::Topology>& schedule, const RunOptions& options);

struct CartPoleDemo {
  SimTrace nominal;   // same seed, no attack
  SimTrace attacked;  // intrinsic ZDA injected from t = 0
  double estimate_envelope_nominal = 0.0;
  double estimate_envelope_attacked = 0.0;
  double state_growth = 0.0;      // ||x_att(t_F) - x_nom(t_F)|| / ||x_a0||
  double output_deviation = 0.0;  // max_k ||y_att - y_nom|| (noise cancels)
  std::complex<double> zero_used;
};

/// Cart-pole balancing under an intrinsic ZDA with an LQR on the Kalman
/// estimate: the estimate hugs the nominal run while the true state drifts.
CartPoleDemo run_cartpole_demo(double dt = 0.002, double t_f = 2.0,
                               double amplitude = 1e-8, std::uint64_t seed = 7);

struct MetricsOverTime {
  std::vector<double> window_start;          // time of each window
  std::vector<metrics::MetricReport> windows;
  std::vector<double> j_rob_closed;
  metrics::MetricReport average;             // arithmetic mean row
  double j_rob_closed_average = 0.0;

  std::string csv() const;
};

/// Sliding-horizon metric evaluation along a schedule: each window spans the
/// scenario's metric horizon K; the closed-loop robustness uses the
/// scenario's consensus controller.
MetricsOverTime metrics_over_time(const model::Scenario& scenario,
                                  const std::vector<model::Topology>& schedule);

/// Steady-state discrete Riccati fixpoint (predictor form); returns the
/// observer gain L with xhat+ = S xhat + B u + L (y - C xhat).
Eigen::MatrixXd steady_state_kalman_gain(const Eigen::MatrixXd& S,
                                         const Eigen::MatrixXd& C, double process_var,
                                         double sensor_var);

}  // namespace zdaguard::sim
