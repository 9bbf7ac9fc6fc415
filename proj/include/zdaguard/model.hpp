#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zdaguard/common.hpp"

namespace zdaguard::model {

/// Undirected communication graph over N agents, entries in {0,1}, zero
/// diagonal.
struct Topology {
  Eigen::MatrixXi adjacency;

  int agents() const { return static_cast<int>(adjacency.rows()); }
  int edge_count() const;
  double density() const;
  bool connected() const;
  /// Sorted (i, j) pairs with i < j.
  std::vector<std::pair<int, int>> edges() const;
  /// Lexicographic key on the flattened adjacency, for deterministic ordering.
  std::string flat_key() const;
  void validate(bool require_symmetric = true) const;

  bool operator==(const Topology& o) const { return adjacency == o.adjacency; }
};

Topology topology_from_edges(int agents, const std::vector<std::pair<int, int>>& edges);

/// Admissible topologies per sensing step k.
struct TopologySet {
  std::vector<std::vector<Topology>> steps;
  double density_cap = 1.0;

  void validate() const;
  const std::vector<Topology>& at_step(int k) const {
    return steps.at(static_cast<std::size_t>(k));
  }
};

struct SystemMatrices {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;
};

/// Extra structure carried by networked models; used to build consensus
/// gains and topology-affine measurement maps.
struct NetworkInfo {
  int agents = 0;
  int dims = 0;
  int leader = 0;
  int order = 2;  // states per axis: 2 = (position, velocity), 1 = position
  bool full_state_measurements = false;
  int state_per_agent() const { return order * dims; }
  /// Measured coordinates per axis per edge: position, or the full chain.
  int measures_per_axis() const { return full_state_measurements ? order : 1; }
  /// Stacked index of coordinate m (0 = position, 1 = velocity) of agent i,
  /// axis d.
  int coord_index(int agent, int axis, int m = 0) const {
    return agent * order * dims + order * axis + m;
  }
  int pos_index(int agent, int axis) const { return coord_index(agent, axis, 0); }
};

/// Continuous-time model family: a map from a topology to (A, B, C).
struct SystemModel {
  int state_dim = 0;   // p
  int input_dim = 0;   // q
  int output_dim = 0;  // r for the topology the model was built with
  bool a_fixed = true;
  std::function<SystemMatrices(const Topology&)> matrix_map;
  std::optional<NetworkInfo> network;

  SystemMatrices matrices(const Topology& topo) const;
};

/// Sampling configuration. Periods are kept as exact rationals parsed from
/// decimal strings so grid comparisons at hold-window edges are exact.
struct SamplingConfig {
  std::string dt_u_text = "1.0";
  std::string dt_y_text = "1.0";
  std::string t_f_text = "1.0";

  Rational dt_u;
  Rational dt_y;
  Rational t_f;

  static SamplingConfig from_strings(const std::string& dt_u,
                                     const std::string& dt_y,
                                     const std::string& t_f);

  /// Sensing horizon K = floor(t_f / dt_y).
  int sensing_steps() const { return static_cast<int>(t_f.floor_div(dt_y)); }
  /// Hold horizon: number of actuation instants strictly before t_f, minus
  /// one. Instants at or after t_f cannot influence the horizon and would
  /// put identically zero columns in the stacked input operator.
  int hold_steps() const { return static_cast<int>(t_f.ceil_div(dt_u)) - 1; }

  Rational t_u(std::int64_t l) const { return dt_u * l; }
  Rational t_y(std::int64_t k) const { return dt_y * k; }

  void validate() const;
};

struct NoiseSpec {
  double process_std = 1e-4;
  double sensor_std = 5e-3;
};

struct TargetSpec {
  enum class Kind { Setpoint, Sinusoid };
  Kind kind = Kind::Setpoint;
  Eigen::MatrixXd setpoints;  // agents x dims, used by Setpoint
  double amplitude = 0.0;     // Sinusoid
  double omega = 0.0;
};

enum class MeasureMode { Position, FullState };

struct ModelSpec {
  enum class Kind { DoubleIntegratorNetwork, CartPole };
  Kind kind = Kind::DoubleIntegratorNetwork;
  int agents = 2;
  int dims = 1;
  MeasureMode measure = MeasureMode::Position;
};

struct TopologySourceSpec {
  enum class Mode { Explicit, Enumerate, GeometricMenu };
  Mode mode = Mode::Explicit;
  std::vector<Topology> explicit_list;  // Explicit
  double radius = 0.0;                  // Enumerate
  std::vector<double> radii;            // GeometricMenu
  double density_cap = 1.0;
  Eigen::MatrixXd positions;  // agents x dims, Enumerate / GeometricMenu
};

struct DetectorSpec {
  double threshold = -1.0;  // < 0: calibrate from a noise-only run
  int window = 2;
  double threshold_sigma = 5.0;
};

struct ControllerSpec {
  double kp = 1.0;
  double kd = 2.0;
  double k_leader = 1.0;
};

/// Full experiment description; immutable after construction.
struct Scenario {
  ModelSpec model_spec;
  SamplingConfig sampling;
  TopologySourceSpec topology;
  NoiseSpec noise;
  std::uint64_t seed = 0;
  TargetSpec target;
  DetectorSpec detector;
  ControllerSpec controller;

  SystemModel build_model(const Topology& reference) const;
  /// Resolves the topology source into per-step admissible sets.
  TopologySet resolve_topology_set() const;

  static Scenario from_json_file(const std::string& path);
  static Scenario from_json_text(const std::string& text);
  std::string to_json_text() const;
};

/// Network of N double integrators in `dims` axes. A is block-diagonal
/// double-integrator dynamics and does not depend on the topology; B routes
/// one force input per agent per axis; C emits relative measurements along
/// the edges of the topology plus the leader's absolute measurement. Pass
/// leader = -1 for a leaderless network (relative measurements only).
/// MeasureMode::Position exchanges positions only; FullState exchanges the
/// relative state (positions and velocities).
SystemModel build_double_integrator_network(int agents, int dims, const Topology& topo,
                                            int leader = 0,
                                            MeasureMode measure = MeasureMode::Position);

/// Linearized cart-pole about the upright equilibrium, cart position as the
/// only measurement. Single constant topology.
SystemModel build_cartpole();

/// Network of first-order agents x_i' = -leak x_i + u_i with the same
/// relative-position measurement structure. Open-loop stable for leak > 0;
/// used where a contracting fixture is needed.
SystemModel build_leaky_integrator_network(int agents, int dims, const Topology& topo,
                                           double leak, int leader = 0);

/// All connected topologies whose edges join agents within `radius`,
/// density-capped, ordered lexicographically on the flattened adjacency.
/// Returns an empty vector when no connected admissible graph exists.
std::vector<Topology> enumerate_feasible_topologies(const Eigen::MatrixXd& positions,
                                                    double radius, double density_cap);

/// The single geometric graph at `radius` (all pairs within range).
Topology geometric_topology(const Eigen::MatrixXd& positions, double radius);

}  // namespace zdaguard::model
