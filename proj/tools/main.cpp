// zdaguard command-line interface: metric reports, attack synthesis,
// topology optimization, and closed-loop simulation from scenario JSON.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "zdaguard/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace zdaguard;

namespace {

constexpr const char* kVersion = "zdaguard 0.1.0";

int log_level() {
  const char* env = std::getenv("ZDAGUARD_LOG");
  return env == nullptr ? 0 : std::atoi(env);
}

void log_info(const std::string& message) {
  if (log_level() > 0) std::cerr << "[zdaguard] " << message << "\n";
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::string& config_path, std::uint64_t seed,
                    double wall_seconds) {
  ordered_json doc;
  doc["command"] = command;
  doc["config"] = config_path;
  doc["seed"] = seed;
  doc["version"] = kVersion;
  doc["output_dir"] = out_dir.string();
  doc["wall_clock_seconds"] = wall_seconds;
  write_file(out_dir / "manifest.json", doc.dump(2));
}

std::vector<model::Topology> schedule_from_file(const std::string& path, int agents) {
  std::ifstream in(path);
  if (!in) throw ConfigError("$", "cannot open schedule file '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("$", std::string("invalid schedule JSON: ") + e.what());
  }
  const auto& list = doc.contains("schedule") ? doc["schedule"] : doc.at("topologies");
  std::vector<model::Topology> schedule;
  for (const auto& adj : list) {
    model::Topology topo;
    const int n = static_cast<int>(adj.size());
    topo.adjacency = Eigen::MatrixXi::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) topo.adjacency(i, j) = adj[i][j].get<int>();
    topo.validate();
    if (topo.agents() != agents)
      throw ConfigError("$.schedule", "topology size does not match the scenario");
    schedule.push_back(std::move(topo));
  }
  if (schedule.empty()) throw ConfigError("$.schedule", "empty schedule");
  return schedule;
}

/// Constant schedule over the metric horizon from the first admissible
/// topology.
std::vector<model::Topology> default_schedule(const model::Scenario& scenario, int steps) {
  const model::TopologySet set = scenario.resolve_topology_set();
  if (set.steps.empty() || set.steps.front().empty())
    throw InfeasibleError("scenario admits no topology");
  return std::vector<model::Topology>(static_cast<std::size_t>(steps + 1),
                                      set.steps.front().front());
}

switching::SwitchConfig switch_config_from(const model::Scenario& scenario,
                                           const std::string& gains, double cc, double co,
                                           double cs) {
  switching::SwitchConfig config;
  config.thresholds = {cc, co, cs};
  if (gains == "zero") {
    config.gain_mode = switching::GainMode::Zero;
  } else if (gains == "consensus") {
    config.gain_mode = switching::GainMode::Fixed;
    config.consensus_kp = scenario.controller.kp;
    config.consensus_kd = scenario.controller.kd;
    config.consensus_kl = scenario.controller.k_leader;
  } else if (gains == "joint") {
    config.gain_mode = switching::GainMode::Joint;
    config.consensus_kp = scenario.controller.kp;
    config.consensus_kd = scenario.controller.kd;
    config.consensus_kl = scenario.controller.k_leader;
  } else {
    throw ConfigError("--gains", "expected zero, consensus, or joint");
  }
  return config;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"topology-switching defense toolkit for networked sampled-data systems"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", schedule_path, plan_path;
  std::string method = "brute", kind = "enforced", gains = "consensus";
  std::string pk_source = "identity";
  double amplitude = 1.0;
  double cc = 1e-6, co = 1e-8, cs = 1e-9;
  double stability_alpha = 0.0;
  bool dump_operators = false;
  int jobs = 1, steps = -1, switch_at = -1;
  std::uint64_t seed_override = 0;
  bool has_seed_override = false;

  app.add_option("--jobs", jobs, "worker cap for parallel sections")->capture_default_str();

  auto* cmd_metrics = app.add_subcommand("metrics", "metric report for a schedule");
  auto* cmd_attack = app.add_subcommand("attack", "synthesize an attack plan");
  auto* cmd_optimize = app.add_subcommand("optimize", "choose switching topologies");
  auto* cmd_simulate = app.add_subcommand("simulate", "closed-loop simulation");

  for (auto* cmd : {cmd_metrics, cmd_attack, cmd_optimize, cmd_simulate}) {
    cmd->add_option("--config", config_path, "scenario JSON")->required();
    cmd->add_option("--out", out_dir, "output directory")->capture_default_str();
    cmd->add_option("--seed", seed_override, "override the scenario seed")
        ->each([&](const std::string&) { has_seed_override = true; });
  }
  cmd_metrics->add_option("--schedule", schedule_path, "schedule JSON (optional)");
  cmd_metrics->add_flag("--dump-operators", dump_operators,
                        "write the stacked operator matrices as CSV");
  cmd_attack->add_option("--kind", kind, "enforced | intrinsic | sampling")
      ->capture_default_str();
  cmd_attack->add_option("--amplitude", amplitude, "plan amplitude")->capture_default_str();
  cmd_attack->add_option("--schedule", schedule_path, "synthesis schedule (optional)");
  cmd_optimize->add_option("--method", method, "shor | rank | brute")->capture_default_str();
  cmd_optimize->add_option("--gains", gains, "zero | consensus | joint")
      ->capture_default_str();
  cmd_optimize->add_option("--cc", cc, "controllability threshold")->capture_default_str();
  cmd_optimize->add_option("--co", co, "observability threshold")->capture_default_str();
  cmd_optimize->add_option("--cs", cs, "sensitivity threshold")->capture_default_str();
  cmd_optimize->add_option("--stability-alpha", stability_alpha,
                           "append Lyapunov decrease blocks at this rate (0 = off)");
  cmd_optimize->add_option("--pk", pk_source,
                           "Lyapunov weight source: identity | <file.json with P matrices>")
      ->capture_default_str();
  cmd_simulate->add_option("--schedule", schedule_path, "schedule JSON (optional)");
  cmd_simulate->add_option("--plan", plan_path, "attack plan JSON (optional)");
  cmd_simulate->add_option("--steps", steps, "simulation length in sensing steps");
  cmd_simulate->add_option("--amplitude", amplitude, "attack amplitude")
      ->capture_default_str();
  cmd_simulate->add_option("--switch-at", switch_at,
                           "switch to the second admissible topology at this step");

  CLI11_PARSE(app, argc, argv);
  switching::set_parallel_jobs(jobs);

  const auto started = std::chrono::steady_clock::now();
  model::Scenario scenario = model::Scenario::from_json_file(config_path);
  if (has_seed_override) scenario.seed = seed_override;
  fs::create_directories(out_dir);
  const auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
        .count();
  };

  if (cmd_metrics->parsed()) {
    const int K = scenario.sampling.sensing_steps();
    std::vector<model::Topology> schedule =
        schedule_path.empty() ? default_schedule(scenario, K)
                              : schedule_from_file(schedule_path, scenario.model_spec.agents);
    log_info("metrics over " + std::to_string(schedule.size() - 1) + " intervals");
    if (static_cast<int>(schedule.size()) - 1 == K) {
      const auto sys = scenario.build_model(schedule.front());
      const auto ops = discretize::assemble_stacked(sys, scenario.sampling, schedule);
      metrics::MetricReport report = metrics::compute_all(ops);
      write_file(fs::path(out_dir) / "metrics.json", report.to_json());
      write_file(fs::path(out_dir) / "metrics.csv",
                 metrics::MetricReport::csv_header() + "\n" + report.csv_row(0.0) + "\n");
      if (dump_operators) {
        const auto dump = [&](const Eigen::MatrixXd& M, const std::string& name) {
          std::ostringstream out;
          out.precision(17);
          for (int i = 0; i < M.rows(); ++i) {
            for (int j = 0; j < M.cols(); ++j) out << (j ? "," : "") << M(i, j);
            out << "\n";
          }
          write_file(fs::path(out_dir) / name, out.str());
        };
        dump(ops.A_stack, "a_stack.csv");
        dump(ops.B_stack, "b_stack.csv");
        dump(ops.C_stack, "c_stack.csv");
      }
    } else {
      const auto series = sim::metrics_over_time(scenario, schedule);
      write_file(fs::path(out_dir) / "metrics.csv", series.csv());
      write_file(fs::path(out_dir) / "metrics.json", series.average.to_json());
    }
    write_manifest(out_dir, "metrics", config_path, scenario.seed, wall());
    return 0;
  }

  if (cmd_attack->parsed()) {
    const int K = scenario.sampling.sensing_steps();
    std::vector<model::Topology> schedule =
        schedule_path.empty() ? default_schedule(scenario, K)
                              : schedule_from_file(schedule_path, scenario.model_spec.agents);
    const auto sys = scenario.build_model(schedule.front());
    zda::AttackPlan plan;
    if (kind == "enforced") {
      const auto ops = discretize::assemble_stacked(sys, scenario.sampling, schedule);
      plan = zda::enforced_attack(ops);
      plan.claimed_stealthy_until = scenario.sampling.t_f.to_double();
    } else if (kind == "intrinsic") {
      const auto mats = sys.matrices(schedule.front());
      const auto zeros = zda::invariant_zeros(mats.A, mats.B, mats.C);
      if (zeros.zeros.empty() && zeros.status == zda::ZeroResult::Status::Ok)
        throw InfeasibleError("no invariant zeros for this model");
      plan = zda::intrinsic_attack(zeros, scenario.sampling, amplitude);
    } else if (kind == "sampling") {
      const auto mats = sys.matrices(schedule.front());
      const double dt = scenario.sampling.dt_y.to_double();
      const Eigen::MatrixXd S = discretize::matrix_exponential(mats.A, dt);
      const auto [unused, integral] = discretize::exp_with_integral(mats.A, dt);
      (void)unused;
      const auto zeros = zda::invariant_zeros(S, integral * mats.B, mats.C);
      if (zeros.zeros.empty() && zeros.status == zda::ZeroResult::Status::Ok)
        throw InfeasibleError("no sampling zeros for this model");
      plan = zda::sampling_attack(zeros, scenario.sampling.hold_steps(), amplitude);
    } else {
      throw ConfigError("--kind", "expected enforced, intrinsic, or sampling");
    }
    const auto stealth =
        zda::stealthiness_check(sys, scenario.sampling, schedule, plan, 1e-6);
    write_file(fs::path(out_dir) / "plan.json", plan.to_json());
    ordered_json report;
    report["kind"] = zda::AttackPlan::kind_name(plan.kind);
    report["stealthy_at_1e-6"] = stealth.stealthy;
    report["max_deviation"] = stealth.max_deviation;
    write_file(fs::path(out_dir) / "stealth.json", report.dump(2));
    write_manifest(out_dir, "attack", config_path, scenario.seed, wall());
    return 0;
  }

  if (cmd_optimize->parsed()) {
    const model::TopologySet set = scenario.resolve_topology_set();
    const auto sys = scenario.build_model(set.steps.front().front());
    const switching::SwitchConfig config =
        switch_config_from(scenario, gains, cc, co, cs);
    switching::SwitchResult result;
    if (method == "brute") {
      result = switching::brute_force_select(sys, scenario.sampling, set, config);
    } else if (method == "shor") {
      auto lp = switching::build_lifted_problem(sys, scenario.sampling, set, config);
      if (stability_alpha > 0) {
        std::vector<Eigen::MatrixXd> P_seq(
            static_cast<std::size_t>(scenario.sampling.sensing_steps() + 1),
            Eigen::MatrixXd::Identity(sys.state_dim, sys.state_dim));
        switching::add_stability_constraint(lp, P_seq, stability_alpha);
      }
      const auto shor = switching::solve_shor(lp);
      ordered_json doc;
      doc["method"] = "shor";
      doc["gamma_relaxed"] = shor.gamma;
      doc["certified"] = shor.certified;
      doc["solver_status"] = sdp::status_name(shor.sdp.status);
      doc["iterations"] = shor.sdp.iterations;
      write_file(fs::path(out_dir) / "result.json", doc.dump(2));
      write_file(fs::path(out_dir) / "problem.sdpa", lp.sdp.to_text());
      write_manifest(out_dir, "optimize", config_path, scenario.seed, wall());
      return 0;
    } else if (method == "rank") {
      auto lp = switching::build_lifted_problem(sys, scenario.sampling, set, config);
      if (stability_alpha > 0) {
        std::vector<Eigen::MatrixXd> P_seq(
            static_cast<std::size_t>(scenario.sampling.sensing_steps() + 1),
            Eigen::MatrixXd::Identity(sys.state_dim, sys.state_dim));
        if (pk_source != "identity") {
          std::ifstream in(pk_source);
          if (!in) throw ConfigError("--pk", "cannot open '" + pk_source + "'");
          nlohmann::json doc = nlohmann::json::parse(in);
          P_seq.clear();
          for (const auto& mat : doc.at("P")) {
            Eigen::MatrixXd P(sys.state_dim, sys.state_dim);
            for (int i = 0; i < sys.state_dim; ++i)
              for (int j = 0; j < sys.state_dim; ++j) P(i, j) = mat[i][j].get<double>();
            P_seq.push_back(P);
          }
        }
        switching::add_stability_constraint(lp, P_seq, stability_alpha);
      }
      result = switching::solve_rank_iteration(lp);
    } else {
      throw ConfigError("--method", "expected shor, rank, or brute");
    }
    write_file(fs::path(out_dir) / "result.json", result.to_json());
    write_manifest(out_dir, "optimize", config_path, scenario.seed, wall());
    return 0;
  }

  if (cmd_simulate->parsed()) {
    const int duration = steps > 0 ? steps : scenario.sampling.sensing_steps();
    std::vector<model::Topology> schedule =
        schedule_path.empty()
            ? default_schedule(scenario, duration)
            : schedule_from_file(schedule_path, scenario.model_spec.agents);
    if (switch_at >= 0) {
      const model::TopologySet set = scenario.resolve_topology_set();
      if (set.steps.front().size() < 2)
        throw InfeasibleError("--switch-at needs at least two admissible topologies");
      for (int k = switch_at; k < static_cast<int>(schedule.size()); ++k)
        schedule[static_cast<std::size_t>(k)] = set.steps.front()[1];
    }
    sim::RunOptions options;
    zda::AttackPlan plan;
    if (!plan_path.empty()) {
      plan = zda::AttackPlan::from_json_file(plan_path);
      options.plan = &plan;
      options.attack_amplitude = amplitude;
      options.attacker_topology = schedule.front();
    }
    const sim::SimTrace trace = sim::run(scenario, schedule, options);
    write_file(fs::path(out_dir) / "trace.csv", trace.csv());
    write_file(fs::path(out_dir) / "summary.json", trace.summary_json());
    write_manifest(out_dir, "simulate", config_path, scenario.seed, wall());
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
