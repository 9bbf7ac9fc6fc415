#include "zdaguard/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace zdaguard::model {

using json = nlohmann::ordered_json;

int Topology::edge_count() const {
  int n = agents(), count = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (adjacency(i, j) != 0) ++count;
  return count;
}

double Topology::density() const {
  const int n = agents();
  if (n < 2) return 0.0;
  return static_cast<double>(edge_count()) / (0.5 * n * (n - 1));
}

bool Topology::connected() const {
  const int n = agents();
  if (n == 0) return false;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (adjacency(i, j) != 0) parent[find(i)] = find(j);
  const int root = find(0);
  for (int i = 1; i < n; ++i)
    if (find(i) != root) return false;
  return true;
}

std::vector<std::pair<int, int>> Topology::edges() const {
  std::vector<std::pair<int, int>> out;
  const int n = agents();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (adjacency(i, j) != 0) out.emplace_back(i, j);
  return out;
}

std::string Topology::flat_key() const {
  std::string key;
  key.reserve(static_cast<std::size_t>(adjacency.size()));
  for (int i = 0; i < adjacency.rows(); ++i)
    for (int j = 0; j < adjacency.cols(); ++j)
      key.push_back(adjacency(i, j) != 0 ? '1' : '0');
  return key;
}

void Topology::validate(bool require_symmetric) const {
  if (adjacency.rows() != adjacency.cols())
    throw std::invalid_argument("topology adjacency must be square");
  for (int i = 0; i < adjacency.rows(); ++i) {
    if (adjacency(i, i) != 0)
      throw std::invalid_argument("topology adjacency must have zero diagonal");
    for (int j = 0; j < adjacency.cols(); ++j) {
      if (adjacency(i, j) != 0 && adjacency(i, j) != 1)
        throw std::invalid_argument("topology adjacency entries must be 0 or 1");
      if (require_symmetric && adjacency(i, j) != adjacency(j, i))
        throw std::invalid_argument("topology adjacency must be symmetric");
    }
  }
}

Topology topology_from_edges(int agents, const std::vector<std::pair<int, int>>& edges) {
  Topology topo;
  topo.adjacency = Eigen::MatrixXi::Zero(agents, agents);
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= agents || j >= agents || i == j)
      throw std::invalid_argument("edge endpoints out of range");
    topo.adjacency(i, j) = 1;
    topo.adjacency(j, i) = 1;
  }
  return topo;
}

void TopologySet::validate() const {
  if (density_cap <= 0.0 || density_cap > 1.0)
    throw std::invalid_argument("density_cap must lie in (0, 1]");
  for (const auto& step : steps)
    for (const auto& topo : step) {
      topo.validate();
      if (topo.density() > density_cap + 1e-12)
        throw std::invalid_argument("topology exceeds density cap");
    }
}

SystemMatrices SystemModel::matrices(const Topology& topo) const {
  SystemMatrices m = matrix_map(topo);
  if (m.A.rows() != state_dim || m.A.cols() != state_dim ||
      m.B.rows() != state_dim || m.B.cols() != input_dim ||
      m.C.cols() != state_dim)
    throw std::invalid_argument("matrix_map returned wrong dimensions");
  return m;
}

SamplingConfig SamplingConfig::from_strings(const std::string& dt_u,
                                            const std::string& dt_y,
                                            const std::string& t_f) {
  SamplingConfig cfg;
  cfg.dt_u_text = dt_u;
  cfg.dt_y_text = dt_y;
  cfg.t_f_text = t_f;
  cfg.dt_u = Rational::parse_decimal(dt_u);
  cfg.dt_y = Rational::parse_decimal(dt_y);
  cfg.t_f = Rational::parse_decimal(t_f);
  cfg.validate();
  return cfg;
}

void SamplingConfig::validate() const {
  const Rational zero(0, 1);
  if (!(dt_u > zero) || !(dt_y > zero))
    throw std::invalid_argument("sampling periods must be positive");
  if (t_f < dt_u || t_f < dt_y)
    throw std::invalid_argument("t_f must be at least max(dt_u, dt_y)");
  if (sensing_steps() < 1 || hold_steps() < 1)
    throw std::invalid_argument("horizons K and L must both be >= 1");
}

namespace {

SystemMatrices double_integrator_matrices(int agents, int dims, const Topology& topo,
                                          int leader, MeasureMode measure) {
  const int p = 2 * dims * agents;
  const int q = dims * agents;
  const int mpa = measure == MeasureMode::FullState ? 2 : 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(p, q);
  for (int i = 0; i < agents; ++i) {
    for (int d = 0; d < dims; ++d) {
      const int pos = i * 2 * dims + 2 * d;
      A(pos, pos + 1) = 1.0;
      B(pos + 1, i * dims + d) = 1.0;
    }
  }
  const auto edge_list = topo.edges();
  const int r = mpa * dims * (static_cast<int>(edge_list.size()) + (leader >= 0 ? 1 : 0));
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(r, p);
  int row = 0;
  for (const auto& [i, j] : edge_list) {
    for (int d = 0; d < dims; ++d)
      for (int m = 0; m < mpa; ++m) {
        C(row, i * 2 * dims + 2 * d + m) = 1.0;
        C(row, j * 2 * dims + 2 * d + m) = -1.0;
        ++row;
      }
  }
  if (leader >= 0) {
    for (int d = 0; d < dims; ++d)
      for (int m = 0; m < mpa; ++m) {
        C(row, leader * 2 * dims + 2 * d + m) = 1.0;
        ++row;
      }
  }
  return {A, B, C};
}

}  // namespace

SystemModel build_double_integrator_network(int agents, int dims, const Topology& topo,
                                            int leader, MeasureMode measure) {
  if (agents < 2) throw std::invalid_argument("need at least 2 agents");
  if (dims < 1 || dims > 3) throw std::invalid_argument("dims must be 1, 2, or 3");
  if (topo.agents() != agents)
    throw std::invalid_argument("topology size does not match agent count");
  if (leader >= agents) throw std::invalid_argument("leader index out of range");
  topo.validate();

  SystemModel model;
  model.state_dim = 2 * dims * agents;
  model.input_dim = dims * agents;
  model.a_fixed = true;
  NetworkInfo info;
  info.agents = agents;
  info.dims = dims;
  info.leader = leader >= 0 ? leader : 0;
  info.order = 2;
  info.full_state_measurements = measure == MeasureMode::FullState;
  model.network = info;
  model.matrix_map = [agents, dims, leader, measure](const Topology& t) {
    if (t.agents() != agents)
      throw std::invalid_argument("topology size does not match agent count");
    return double_integrator_matrices(agents, dims, t, leader, measure);
  };
  model.output_dim = static_cast<int>(model.matrices(topo).C.rows());
  return model;
}

SystemModel build_cartpole() {
  // Cart mass M, pole mass m, pole inertia I about its center, half-length l,
  // cart friction b. State [x, xdot, phi, phidot], force input, position output.
  const double M = 0.5, m = 0.2, b = 0.1, l = 0.3, I = 0.006, g = 9.8;
  const double denom = I * (M + m) + M * m * l * l;

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(4, 4);
  A(0, 1) = 1.0;
  A(1, 1) = -(I + m * l * l) * b / denom;
  A(1, 2) = m * m * g * l * l / denom;
  A(2, 3) = 1.0;
  A(3, 1) = -m * l * b / denom;
  A(3, 2) = m * g * l * (M + m) / denom;

  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(4, 1);
  B(1, 0) = (I + m * l * l) / denom;
  B(3, 0) = m * l / denom;

  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(1, 4);
  C(0, 0) = 1.0;

  SystemModel model;
  model.state_dim = 4;
  model.input_dim = 1;
  model.output_dim = 1;
  model.a_fixed = true;
  model.matrix_map = [A, B, C](const Topology&) { return SystemMatrices{A, B, C}; };
  return model;
}

SystemModel build_leaky_integrator_network(int agents, int dims, const Topology& topo,
                                           double leak, int leader) {
  if (agents < 2) throw std::invalid_argument("need at least 2 agents");
  if (dims < 1 || dims > 3) throw std::invalid_argument("dims must be 1, 2, or 3");
  if (topo.agents() != agents)
    throw std::invalid_argument("topology size does not match agent count");
  if (leader >= agents) throw std::invalid_argument("leader index out of range");
  topo.validate();

  SystemModel model;
  model.state_dim = dims * agents;
  model.input_dim = dims * agents;
  model.a_fixed = true;
  NetworkInfo info;
  info.agents = agents;
  info.dims = dims;
  info.leader = leader >= 0 ? leader : 0;
  info.order = 1;
  model.network = info;
  model.matrix_map = [agents, dims, leak, leader](const Topology& t) {
    if (t.agents() != agents)
      throw std::invalid_argument("topology size does not match agent count");
    const int p = dims * agents;
    SystemMatrices m;
    m.A = -leak * Eigen::MatrixXd::Identity(p, p);
    m.B = Eigen::MatrixXd::Identity(p, p);
    const auto edge_list = t.edges();
    const int r = dims * static_cast<int>(edge_list.size()) + (leader >= 0 ? dims : 0);
    m.C = Eigen::MatrixXd::Zero(r, p);
    int row = 0;
    for (const auto& [i, j] : edge_list)
      for (int d = 0; d < dims; ++d) {
        m.C(row, i * dims + d) = 1.0;
        m.C(row, j * dims + d) = -1.0;
        ++row;
      }
    if (leader >= 0)
      for (int d = 0; d < dims; ++d) {
        m.C(row, leader * dims + d) = 1.0;
        ++row;
      }
    return m;
  };
  model.output_dim = static_cast<int>(model.matrices(topo).C.rows());
  return model;
}

Topology geometric_topology(const Eigen::MatrixXd& positions, double radius) {
  const int n = static_cast<int>(positions.rows());
  Topology topo;
  topo.adjacency = Eigen::MatrixXi::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((positions.row(i) - positions.row(j)).norm() <= radius) {
        topo.adjacency(i, j) = 1;
        topo.adjacency(j, i) = 1;
      }
  return topo;
}

std::vector<Topology> enumerate_feasible_topologies(const Eigen::MatrixXd& positions,
                                                    double radius, double density_cap) {
  if (radius <= 0.0) throw std::invalid_argument("radius must be positive");
  const int n = static_cast<int>(positions.rows());
  std::vector<std::pair<int, int>> candidates;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((positions.row(i) - positions.row(j)).norm() <= radius)
        candidates.emplace_back(i, j);

  const std::size_t e = candidates.size();
  if (e > 22)
    throw std::invalid_argument(
        "too many candidate edges to enumerate exhaustively (limit 22); use a "
        "geometric menu instead");

  std::vector<Topology> out;
  const double max_edges = 0.5 * n * (n - 1);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << e); ++mask) {
    std::vector<std::pair<int, int>> edges;
    for (std::size_t b = 0; b < e; ++b)
      if (mask & (std::uint64_t{1} << b)) edges.push_back(candidates[b]);
    if (max_edges > 0 && static_cast<double>(edges.size()) / max_edges > density_cap + 1e-12)
      continue;
    Topology topo = topology_from_edges(n, edges);
    if (!topo.connected()) continue;
    out.push_back(std::move(topo));
  }
  std::sort(out.begin(), out.end(), [](const Topology& a, const Topology& b) {
    return a.flat_key() < b.flat_key();
  });
  return out;
}

// ---------------------------------------------------------------------------
// JSON ingestion

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path, what);
}

const json& require(const json& node, const std::string& key, const std::string& path) {
  auto it = node.find(key);
  if (it == node.end()) fail(path + "." + key, "missing required field");
  return *it;
}

double number_at(const json& node, const std::string& path) {
  if (!node.is_number()) fail(path, "expected a number");
  return node.get<double>();
}

Eigen::MatrixXd matrix_at(const json& node, const std::string& path) {
  if (!node.is_array()) fail(path, "expected an array of rows");
  const auto rows = node.size();
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const auto cols = node[0].size();
  Eigen::MatrixXd out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!node[i].is_array() || node[i].size() != cols)
      fail(path + "[" + std::to_string(i) + "]", "ragged matrix rows");
    for (std::size_t j = 0; j < cols; ++j)
      out(static_cast<int>(i), static_cast<int>(j)) =
          number_at(node[i][j], path + "[" + std::to_string(i) + "]");
  }
  return out;
}

Topology topology_at(const json& node, const std::string& path) {
  const Eigen::MatrixXd m = matrix_at(node, path);
  Topology topo;
  topo.adjacency = m.cast<int>();
  if ((m - topo.adjacency.cast<double>()).cwiseAbs().maxCoeff() > 0)
    fail(path, "adjacency entries must be integers 0 or 1");
  try {
    topo.validate();
  } catch (const std::exception& e) {
    fail(path, e.what());
  }
  return topo;
}

std::string sampling_field(const json& node, const std::string& key, const std::string& path) {
  const json& v = require(node, key, path);
  const std::string p = path + "." + key;
  if (v.is_string()) {
    try {
      Rational::parse_decimal(v.get<std::string>());
    } catch (const std::exception& e) {
      fail(p, e.what());
    }
    return v.get<std::string>();
  }
  if (v.is_number()) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v.get<double>());
    std::string text(buf, res.ptr);
    try {
      Rational::parse_decimal(text);
    } catch (const std::exception& e) {
      fail(p, std::string("pass a plain decimal string: ") + e.what());
    }
    return text;
  }
  fail(p, "expected a decimal string like \"0.5\"");
}

}  // namespace

Scenario Scenario::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail("$", std::string("invalid JSON: ") + e.what());
  }

  Scenario sc;
  const json& model = require(doc, "model", "$");
  const std::string type = require(model, "type", "$.model").get<std::string>();
  if (type == "double_integrator_network") {
    sc.model_spec.kind = ModelSpec::Kind::DoubleIntegratorNetwork;
    sc.model_spec.agents = require(model, "agents", "$.model").get<int>();
    sc.model_spec.dims = require(model, "dims", "$.model").get<int>();
    if (sc.model_spec.agents < 2) fail("$.model.agents", "need at least 2 agents");
    if (sc.model_spec.dims < 1 || sc.model_spec.dims > 3)
      fail("$.model.dims", "dims must be 1, 2, or 3");
    if (model.contains("measurements")) {
      const std::string mode = model["measurements"].get<std::string>();
      if (mode == "position") sc.model_spec.measure = MeasureMode::Position;
      else if (mode == "full_state") sc.model_spec.measure = MeasureMode::FullState;
      else fail("$.model.measurements", "expected 'position' or 'full_state'");
    }
  } else if (type == "cartpole") {
    sc.model_spec.kind = ModelSpec::Kind::CartPole;
    sc.model_spec.agents = 1;
    sc.model_spec.dims = 1;
  } else {
    fail("$.model.type", "unknown model type '" + type + "'");
  }

  const json& sampling = require(doc, "sampling", "$");
  try {
    sc.sampling = SamplingConfig::from_strings(
        sampling_field(sampling, "dt_u", "$.sampling"),
        sampling_field(sampling, "dt_y", "$.sampling"),
        sampling_field(sampling, "t_f", "$.sampling"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    fail("$.sampling", e.what());
  }

  if (doc.contains("topology_set")) {
    const json& ts = doc["topology_set"];
    const std::string mode = require(ts, "mode", "$.topology_set").get<std::string>();
    if (ts.contains("density_cap"))
      sc.topology.density_cap = number_at(ts["density_cap"], "$.topology_set.density_cap");
    if (mode == "explicit") {
      sc.topology.mode = TopologySourceSpec::Mode::Explicit;
      const json& list = require(ts, "topologies", "$.topology_set");
      if (!list.is_array() || list.empty())
        fail("$.topology_set.topologies", "expected a non-empty array");
      for (std::size_t i = 0; i < list.size(); ++i)
        sc.topology.explicit_list.push_back(
            topology_at(list[i], "$.topology_set.topologies[" + std::to_string(i) + "]"));
    } else if (mode == "enumerate") {
      sc.topology.mode = TopologySourceSpec::Mode::Enumerate;
      sc.topology.radius = number_at(require(ts, "radius", "$.topology_set"),
                                     "$.topology_set.radius");
      sc.topology.positions = matrix_at(require(ts, "positions", "$.topology_set"),
                                        "$.topology_set.positions");
    } else if (mode == "geometric_menu") {
      sc.topology.mode = TopologySourceSpec::Mode::GeometricMenu;
      const json& radii = require(ts, "radii", "$.topology_set");
      if (!radii.is_array() || radii.empty())
        fail("$.topology_set.radii", "expected a non-empty array");
      for (std::size_t i = 0; i < radii.size(); ++i)
        sc.topology.radii.push_back(
            number_at(radii[i], "$.topology_set.radii[" + std::to_string(i) + "]"));
      sc.topology.positions = matrix_at(require(ts, "positions", "$.topology_set"),
                                        "$.topology_set.positions");
    } else {
      fail("$.topology_set.mode", "unknown mode '" + mode + "'");
    }
  } else if (sc.model_spec.kind != ModelSpec::Kind::CartPole) {
    fail("$.topology_set", "missing required field");
  }

  if (doc.contains("noise")) {
    const json& noise = doc["noise"];
    if (noise.contains("process_std"))
      sc.noise.process_std = number_at(noise["process_std"], "$.noise.process_std");
    if (noise.contains("sensor_std"))
      sc.noise.sensor_std = number_at(noise["sensor_std"], "$.noise.sensor_std");
    if (sc.noise.process_std < 0 || sc.noise.sensor_std < 0)
      fail("$.noise", "noise standard deviations must be >= 0");
  }
  if (doc.contains("seed")) sc.seed = doc["seed"].get<std::uint64_t>();

  if (doc.contains("target")) {
    const json& target = doc["target"];
    const std::string kind = require(target, "type", "$.target").get<std::string>();
    if (kind == "setpoint") {
      sc.target.kind = TargetSpec::Kind::Setpoint;
      if (target.contains("setpoints"))
        sc.target.setpoints = matrix_at(target["setpoints"], "$.target.setpoints");
    } else if (kind == "sinusoid") {
      sc.target.kind = TargetSpec::Kind::Sinusoid;
      sc.target.amplitude = number_at(require(target, "amplitude", "$.target"),
                                      "$.target.amplitude");
      sc.target.omega = number_at(require(target, "omega", "$.target"), "$.target.omega");
    } else {
      fail("$.target.type", "unknown target type '" + kind + "'");
    }
  }

  if (doc.contains("detector")) {
    const json& det = doc["detector"];
    if (det.contains("threshold"))
      sc.detector.threshold = number_at(det["threshold"], "$.detector.threshold");
    if (det.contains("window")) sc.detector.window = det["window"].get<int>();
    if (det.contains("threshold_sigma"))
      sc.detector.threshold_sigma =
          number_at(det["threshold_sigma"], "$.detector.threshold_sigma");
  }
  if (doc.contains("controller")) {
    const json& ctl = doc["controller"];
    if (ctl.contains("kp")) sc.controller.kp = number_at(ctl["kp"], "$.controller.kp");
    if (ctl.contains("kd")) sc.controller.kd = number_at(ctl["kd"], "$.controller.kd");
    if (ctl.contains("k_leader"))
      sc.controller.k_leader = number_at(ctl["k_leader"], "$.controller.k_leader");
  }
  return sc;
}

Scenario Scenario::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("$", "cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string Scenario::to_json_text() const {
  json doc;
  if (model_spec.kind == ModelSpec::Kind::CartPole) {
    doc["model"] = {{"type", "cartpole"}};
  } else {
    doc["model"] = {{"type", "double_integrator_network"},
                    {"agents", model_spec.agents},
                    {"dims", model_spec.dims}};
  }
  doc["sampling"] = {{"dt_u", sampling.dt_u_text},
                     {"dt_y", sampling.dt_y_text},
                     {"t_f", sampling.t_f_text}};
  doc["noise"] = {{"process_std", noise.process_std}, {"sensor_std", noise.sensor_std}};
  doc["seed"] = seed;
  return doc.dump(2);
}

SystemModel Scenario::build_model(const Topology& reference) const {
  if (model_spec.kind == ModelSpec::Kind::CartPole) return build_cartpole();
  return build_double_integrator_network(model_spec.agents, model_spec.dims, reference, 0,
                                         model_spec.measure);
}

TopologySet Scenario::resolve_topology_set() const {
  TopologySet set;
  set.density_cap = topology.density_cap;
  const int steps = sampling.sensing_steps() + 1;
  if (model_spec.kind == ModelSpec::Kind::CartPole) {
    Topology single;
    single.adjacency = Eigen::MatrixXi::Zero(1, 1);
    set.steps.assign(static_cast<std::size_t>(steps), {single});
    return set;
  }
  std::vector<Topology> menu;
  switch (topology.mode) {
    case TopologySourceSpec::Mode::Explicit:
      menu = topology.explicit_list;
      break;
    case TopologySourceSpec::Mode::Enumerate:
      menu = enumerate_feasible_topologies(topology.positions, topology.radius,
                                           topology.density_cap);
      break;
    case TopologySourceSpec::Mode::GeometricMenu: {
      for (double r : topology.radii) {
        Topology t = geometric_topology(topology.positions, r);
        if (!t.connected()) continue;
        if (t.density() > topology.density_cap + 1e-12) continue;
        if (std::none_of(menu.begin(), menu.end(),
                         [&](const Topology& m) { return m == t; }))
          menu.push_back(std::move(t));
      }
      break;
    }
  }
  set.steps.assign(static_cast<std::size_t>(steps), menu);
  return set;
}

}  // namespace zdaguard::model
