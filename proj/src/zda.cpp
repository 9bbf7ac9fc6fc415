#include "zdaguard/zda.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "zdaguard/metrics.hpp"

namespace zdaguard::zda {

namespace {

constexpr double kRankTol = 1e-10;

/// Orthonormal range basis. `scale` anchors the rank cutoff so a matrix of
/// floating-point dust left by exact cancellation counts as zero.
Eigen::MatrixXd orth_range(const Eigen::MatrixXd& M, double scale = 0.0,
                           double rel_tol = kRankTol) {
  if (M.size() == 0) return Eigen::MatrixXd(M.rows(), 0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  const double cutoff = rel_tol * std::max({sv.size() > 0 ? sv(0) : 0.0, scale, 1e-300});
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++rank;
  return svd.matrixU().leftCols(rank);
}

Eigen::MatrixXd nullspace_basis_scaled(const Eigen::MatrixXd& M, double scale,
                                       double rel_tol) {
  const int n = static_cast<int>(M.cols());
  if (M.rows() == 0 || M.size() == 0) return Eigen::MatrixXd::Identity(n, n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cutoff = rel_tol * std::max({sv.size() > 0 ? sv(0) : 0.0, scale, 1e-300});
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

}  // namespace

Eigen::MatrixXd nullspace_basis(const Eigen::MatrixXd& M, double rel_tol) {
  return nullspace_basis_scaled(M, 0.0, rel_tol);
}

ZeroResult invariant_zeros(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& C) {
  const int p = static_cast<int>(A.rows());
  const int q = static_cast<int>(B.cols());
  if (A.cols() != p || B.rows() != p || C.cols() != p)
    throw std::invalid_argument("invariant_zeros: nonconformal matrices");
  if (!A.allFinite() || !B.allFinite() || !C.allFinite())
    throw NumericalError("invariant_zeros: non-finite entries");

  ZeroResult result;
  const Eigen::MatrixXd V = nullspace_basis(C);
  const int d = static_cast<int>(V.cols());
  if (d == 0) {
    // C x = 0 forces x = 0, so only B u = 0 can produce solutions; a
    // nontrivial kernel of B then solves the pencil for every z.
    if (nullspace_basis(B).cols() > 0) result.status = ZeroResult::Status::ZerosEverywhere;
    return result;
  }

  // Compress the Rosenbrock pencil through ker C. With x = V w and W the
  // orthogonal complement, the conditions are
  //   z w = V^T A V w + V^T B u,     0 = W^T A V w + W^T B u
  // which is a rectangular pencil z N v = M v in v = [w; u].
  Eigen::MatrixXd W(p, p - d);
  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeFullV);
    W = svd.matrixV().leftCols(p - d);
  }
  const int s0 = d + q;
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(p, s0);
  N.topLeftCorner(d, d) = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd M(p, s0);
  M.topLeftCorner(d, d) = V.transpose() * A * V;
  M.topRightCorner(d, q) = V.transpose() * B;
  M.bottomLeftCorner(p - d, d) = W.transpose() * A * V;
  M.bottomRightCorner(p - d, q) = W.transpose() * B;
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(p + q, s0);
  T.topLeftCorner(p, d) = V;
  T.bottomRightCorner(q, q) = Eigen::MatrixXd::Identity(q, q);

  // Cutoffs below are anchored to the ambient data scale so that entries
  // produced by exact cancellation read as zero.
  const double amb = std::max({1.0, A.cwiseAbs().maxCoeff(), B.size() > 0 ? B.cwiseAbs().maxCoeff() : 0.0});

  // Repeatedly peel off the static rows (left kernel of N) and compress the
  // solution space until the remaining pencil is z I-like and square.
  for (int guard = 0; guard <= 2 * (p + q) + 2; ++guard) {
    const int s = static_cast<int>(N.cols());
    const int rows = static_cast<int>(N.rows());
    if (s == 0) return result;

    Eigen::MatrixXd range = orth_range(N, 1.0);
    const int rank = static_cast<int>(range.cols());
    if (rank == 0) {
      // Pure static system M v = 0: solvable for every z or for none.
      if (nullspace_basis_scaled(M, amb, kRankTol).cols() > 0)
        result.status = ZeroResult::Status::ZerosEverywhere;
      return result;
    }
    if (rank < rows) {
      // Static constraints: Y^T M v = 0 for the left kernel Y of N.
      Eigen::MatrixXd Y = nullspace_basis_scaled(N.transpose(), 1.0, kRankTol);
      const Eigen::MatrixXd G = Y.transpose() * M;
      const Eigen::MatrixXd Z = nullspace_basis_scaled(G, amb, kRankTol);
      if (Z.cols() == 0) return result;
      if (Z.cols() < s) {
        N = N * Z;
        M = M * Z;
        T = T * Z;
        continue;
      }
      // Constraints vacuous; drop the degenerate rows.
      N = (range.transpose() * N).eval();
      M = (range.transpose() * M).eval();
      continue;
    }
    // N has full row rank.
    if (rows < s) {
      result.status = ZeroResult::Status::ZerosEverywhere;
      return result;
    }
    // Square pencil with invertible N: ordinary eigenproblem.
    const Eigen::MatrixXd Ared = N.partialPivLu().solve(M);
    Eigen::EigenSolver<Eigen::MatrixXd> es(Ared);
    if (es.info() != Eigen::Success)
      throw NumericalError("invariant_zeros: eigensolver failed");
    for (int i = 0; i < Ared.rows(); ++i) {
      const std::complex<double> z = es.eigenvalues()(i);
      Eigen::VectorXcd xu = T.cast<std::complex<double>>() * es.eigenvectors().col(i);
      const double norm = xu.norm();
      if (norm < 1e-14) continue;
      xu /= norm;
      InvariantZero zero;
      zero.z = z;
      zero.x0 = xu.head(p);
      zero.u0 = xu.tail(q);
      const Eigen::VectorXcd res_top =
          (z * Eigen::MatrixXcd::Identity(p, p) - A.cast<std::complex<double>>()) * zero.x0 -
          B.cast<std::complex<double>>() * zero.u0;
      const Eigen::VectorXcd res_bot = C.cast<std::complex<double>>() * zero.x0;
      zero.residual = std::sqrt(res_top.squaredNorm() + res_bot.squaredNorm()) /
                      (1.0 + std::abs(z));
      if (zero.residual <= 1e-8) result.zeros.push_back(std::move(zero));
    }
    return result;
  }
  throw NumericalError("invariant_zeros: compression did not terminate");
}

// ---------------------------------------------------------------------------

namespace {

/// Largest-real-part zero, preferring real ones among near-ties.
const InvariantZero& pick_zero(const ZeroResult& zeros) {
  if (zeros.zeros.empty()) throw InfeasibleError("no invariant zeros available");
  int best = 0;
  for (int i = 1; i < static_cast<int>(zeros.zeros.size()); ++i) {
    const auto& zi = zeros.zeros[static_cast<std::size_t>(i)];
    const auto& zb = zeros.zeros[static_cast<std::size_t>(best)];
    if (zi.z.real() > zb.z.real() + 1e-12 ||
        (std::abs(zi.z.real() - zb.z.real()) <= 1e-12 &&
         std::abs(zi.z.imag()) < std::abs(zb.z.imag())))
      best = i;
  }
  return zeros.zeros[static_cast<std::size_t>(best)];
}

/// Phase that maximizes the real part's norm, so realified directions do not
/// vanish for purely imaginary eigenvectors.
std::complex<double> best_phase(const Eigen::VectorXcd& x, const Eigen::VectorXcd& u) {
  const double n0 = x.real().squaredNorm() + u.real().squaredNorm();
  const double n1 = x.imag().squaredNorm() + u.imag().squaredNorm();
  return n0 >= n1 ? std::complex<double>(1.0, 0.0) : std::complex<double>(0.0, -1.0);
}

}  // namespace

AttackPlan intrinsic_attack(const ZeroResult& zeros, const model::SamplingConfig& sampling,
                            double amplitude) {
  const InvariantZero& zero = pick_zero(zeros);
  const int q = static_cast<int>(zero.u0.size());
  const int L = sampling.hold_steps();
  const std::complex<double> phase = best_phase(zero.x0, zero.u0);

  AttackPlan plan;
  plan.kind = AttackPlan::Kind::Intrinsic;
  plan.z_inv = zero.z;
  plan.amplitude = amplitude;
  plan.x_a0 = amplitude * (phase * zero.x0.array()).real().matrix();
  plan.a_seq = Eigen::MatrixXd::Zero(q, L + 1);
  for (int l = 0; l <= L; ++l) {
    const double t = sampling.t_u(l).to_double();
    const Eigen::VectorXcd a = std::exp(zero.z * t) * (phase * zero.u0.array()).matrix();
    plan.a_seq.col(l) = amplitude * a.real();
  }
  plan.claimed_stealthy_until = sampling.t_f.to_double();
  return plan;
}

AttackPlan sampling_attack(const ZeroResult& discrete_zeros, int hold_steps,
                           double amplitude) {
  const InvariantZero& zero = pick_zero(discrete_zeros);
  const int q = static_cast<int>(zero.u0.size());
  const std::complex<double> phase = best_phase(zero.x0, zero.u0);

  AttackPlan plan;
  plan.kind = AttackPlan::Kind::Sampling;
  plan.z_inv = zero.z;
  plan.amplitude = amplitude;
  plan.x_a0 = amplitude * (phase * zero.x0.array()).real().matrix();
  plan.a_seq = Eigen::MatrixXd::Zero(q, hold_steps + 1);
  std::complex<double> zpow(1.0, 0.0);
  for (int l = 0; l <= hold_steps; ++l) {
    const Eigen::VectorXcd a = zpow * (phase * zero.u0.array()).matrix();
    plan.a_seq.col(l) = amplitude * a.real();
    zpow *= zero.z;
  }
  return plan;
}

AttackPlan enforced_attack(const discretize::StackedOperators& ops, double stealth_tol) {
  const metrics::ExtremeEigen pair = metrics::sensitivity_eigenpair(ops);
  if (pair.value > stealth_tol)
    throw InfeasibleError("enforced_attack: no stealthy direction (J_sen = " +
                          std::to_string(pair.value) + " above tolerance)");

  // The minimizing eigenspace is usually far from one-dimensional; any unit
  // vector in it is a minimizing eigenvector. Take the most disruptive one:
  // maximize the state energy ||[A, B] v||^2 over the stealthy directions.
  const Eigen::MatrixXd E = ops.state_maps();
  const Eigen::MatrixXd CE = ops.C_stack * E;
  Eigen::VectorXd direction = pair.vector;
  const Eigen::MatrixXd N = nullspace_basis(CE, 1e-11);
  if (N.cols() > 0) {
    const Eigen::MatrixXd EN = E * N;
    const metrics::ExtremeEigen top =
        metrics::symmetric_extreme_eigen(EN.transpose() * EN, metrics::Which::Max);
    direction = N * top.vector;
    direction.normalize();
  }

  AttackPlan plan;
  plan.kind = AttackPlan::Kind::Enforced;
  plan.j_sen = std::max(pair.value, 0.0);
  plan.certificate_vector = direction;
  plan.x_a0 = direction.head(ops.p);
  plan.a_seq = Eigen::MatrixXd::Zero(ops.q, ops.L + 1);
  for (int l = 0; l <= ops.L; ++l)
    plan.a_seq.col(l) = direction.segment(ops.p + l * ops.q, ops.q);
  return plan;
}

StealthReport stealthiness_check(const model::SystemModel& sys,
                                 const model::SamplingConfig& sampling,
                                 const std::vector<model::Topology>& schedule,
                                 const AttackPlan& plan, double tol) {
  const auto ops = discretize::assemble_stacked(sys, sampling, schedule);
  if (plan.a_seq.rows() != ops.q || plan.a_seq.cols() < ops.L + 1 ||
      plan.x_a0.size() != ops.p)
    throw std::invalid_argument("stealthiness_check: plan does not fit the horizon");

  Eigen::VectorXd a_stacked(ops.input_cols());
  for (int l = 0; l <= ops.L; ++l) a_stacked.segment(l * ops.q, ops.q) = plan.a_seq.col(l);

  // The deviation from the nominal output is linear in (x_a0, a): the
  // nominal input and initial state drop out.
  const Eigen::VectorXd dev =
      ops.C_stack * (ops.A_stack * plan.x_a0 + ops.B_stack * a_stacked);

  StealthReport report;
  for (int k = 0; k <= ops.K; ++k) {
    const int rows = static_cast<int>(ops.C_blocks[static_cast<std::size_t>(k)].rows());
    const double step_dev = dev.segment(ops.r_offsets[static_cast<std::size_t>(k)], rows).norm();
    report.per_step_deviation.push_back(step_dev);
    report.max_deviation = std::max(report.max_deviation, step_dev);
  }
  report.stealthy = report.max_deviation <= tol;
  return report;
}

OutputNullingSubspace output_nulling_subspace(const Eigen::MatrixXd& A,
                                              const Eigen::MatrixXd& B,
                                              const Eigen::MatrixXd& C) {
  const int p = static_cast<int>(A.rows());
  Eigen::MatrixXd V = nullspace_basis(C);
  for (int iter = 0; iter <= p; ++iter) {
    if (V.cols() == 0) break;
    // A^{-1}(span V + im B) = kernel of (I - P) A with P the projector.
    Eigen::MatrixXd span(p, V.cols() + B.cols());
    span.leftCols(V.cols()) = V;
    span.rightCols(B.cols()) = B;
    const Eigen::MatrixXd U = orth_range(span, 1.0);
    const Eigen::MatrixXd residual_map =
        (Eigen::MatrixXd::Identity(p, p) - U * U.transpose()) * A;
    Eigen::MatrixXd stacked(residual_map.rows() + C.rows(), p);
    stacked.topRows(residual_map.rows()) = residual_map;
    stacked.bottomRows(C.rows()) = C;
    const double amb = std::max({1.0, A.cwiseAbs().maxCoeff(), C.size() > 0 ? C.cwiseAbs().maxCoeff() : 0.0});
    Eigen::MatrixXd next = nullspace_basis_scaled(stacked, amb, kRankTol);
    if (next.cols() == V.cols()) {
      V = next;
      break;
    }
    V = next;
  }

  OutputNullingSubspace out;
  out.basis = V;
  const int d = static_cast<int>(V.cols());
  out.F = Eigen::MatrixXd::Zero(B.cols(), p);
  if (d == 0) return out;

  // Friend gain: for each basis vector solve (A + B f) v in span(V) as the
  // least-squares system [B, -V] [f; c] = -A v.
  Eigen::MatrixXd lhs(p, B.cols() + d);
  lhs.leftCols(B.cols()) = B;
  lhs.rightCols(d) = -V;
  Eigen::MatrixXd f_cols(B.cols(), d);
  for (int j = 0; j < d; ++j) {
    const Eigen::VectorXd rhs = -A * V.col(j);
    const Eigen::VectorXd sol = lhs.colPivHouseholderQr().solve(rhs);
    f_cols.col(j) = sol.head(B.cols());
  }
  out.F = f_cols * V.transpose();
  return out;
}

namespace {

bool trivial_intersection(const Eigen::MatrixXd& basis, const Eigen::MatrixXd& M,
                          double rel_tol) {
  // V* and ker(M) intersect nontrivially iff M * basis has a kernel.
  if (basis.cols() == 0) return true;
  const Eigen::MatrixXd image = M * basis;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(image);
  const auto& sv = svd.singularValues();
  if (sv.size() < basis.cols()) return false;
  const double scale = std::max(sv(0), 1.0);
  return sv(sv.size() - 1) > rel_tol * scale;
}

}  // namespace

bool reveal_check_output(const OutputNullingSubspace& subspace, const Eigen::MatrixXd& C_new,
                         double rel_tol) {
  if (subspace.dim() == 0)
    throw std::invalid_argument("reveal_check: trivial output-nulling subspace");
  return trivial_intersection(subspace.basis, C_new, rel_tol);
}

bool reveal_check_input(const OutputNullingSubspace& subspace, const Eigen::MatrixXd& B_old,
                        const Eigen::MatrixXd& B_new, double rel_tol) {
  if (subspace.dim() == 0)
    throw std::invalid_argument("reveal_check: trivial output-nulling subspace");
  return trivial_intersection(subspace.basis, (B_new - B_old) * subspace.F, rel_tol);
}

// ---------------------------------------------------------------------------

std::string AttackPlan::kind_name(Kind kind) {
  switch (kind) {
    case Kind::Intrinsic: return "intrinsic";
    case Kind::Sampling: return "sampling";
    case Kind::Enforced: return "enforced";
  }
  return "unknown";
}

std::string AttackPlan::to_json() const {
  nlohmann::ordered_json doc;
  doc["kind"] = kind_name(kind);
  doc["amplitude"] = amplitude;
  doc["claimed_stealthy_until"] = claimed_stealthy_until;
  doc["x_a0"] = std::vector<double>(x_a0.data(), x_a0.data() + x_a0.size());
  nlohmann::ordered_json seq = nlohmann::ordered_json::array();
  for (int l = 0; l < a_seq.cols(); ++l) {
    const Eigen::VectorXd col = a_seq.col(l);
    seq.push_back(std::vector<double>(col.data(), col.data() + col.size()));
  }
  doc["a_seq"] = seq;
  if (kind == Kind::Enforced) {
    doc["certificate"] = {
        {"j_sen", j_sen},
        {"vector", std::vector<double>(certificate_vector.data(),
                                       certificate_vector.data() + certificate_vector.size())}};
  } else {
    doc["certificate"] = {{"z_re", z_inv.real()}, {"z_im", z_inv.imag()}};
  }
  return doc.dump(2);
}

AttackPlan AttackPlan::from_json_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("$", std::string("invalid attack plan JSON: ") + e.what());
  }
  AttackPlan plan;
  const std::string kind = doc.at("kind").get<std::string>();
  if (kind == "intrinsic") plan.kind = Kind::Intrinsic;
  else if (kind == "sampling") plan.kind = Kind::Sampling;
  else if (kind == "enforced") plan.kind = Kind::Enforced;
  else throw ConfigError("$.kind", "unknown attack kind '" + kind + "'");

  plan.amplitude = doc.value("amplitude", 1.0);
  plan.claimed_stealthy_until = doc.value("claimed_stealthy_until", 0.0);
  const auto x = doc.at("x_a0").get<std::vector<double>>();
  plan.x_a0 = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<int>(x.size()));
  const auto& seq = doc.at("a_seq");
  if (!seq.is_array() || seq.empty()) throw ConfigError("$.a_seq", "expected sample columns");
  const auto first = seq[0].get<std::vector<double>>();
  plan.a_seq = Eigen::MatrixXd::Zero(static_cast<int>(first.size()),
                                     static_cast<int>(seq.size()));
  for (std::size_t l = 0; l < seq.size(); ++l) {
    const auto col = seq[l].get<std::vector<double>>();
    if (col.size() != first.size())
      throw ConfigError("$.a_seq[" + std::to_string(l) + "]", "ragged sample columns");
    plan.a_seq.col(static_cast<int>(l)) =
        Eigen::Map<const Eigen::VectorXd>(col.data(), static_cast<int>(col.size()));
  }
  if (doc.contains("certificate")) {
    const auto& cert = doc["certificate"];
    if (cert.contains("j_sen")) plan.j_sen = cert["j_sen"].get<double>();
    if (cert.contains("vector")) {
      const auto v = cert["vector"].get<std::vector<double>>();
      plan.certificate_vector =
          Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<int>(v.size()));
    }
    if (cert.contains("z_re"))
      plan.z_inv = {cert["z_re"].get<double>(), cert.value("z_im", 0.0)};
  }
  return plan;
}

AttackPlan AttackPlan::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("$", "cannot open attack plan '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

}  // namespace zdaguard::zda
