#include "zdaguard/metrics.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace zdaguard::metrics {

ExtremeEigen symmetric_extreme_eigen(const Eigen::MatrixXd& M, Which which) {
  if (M.rows() != M.cols())
    throw std::invalid_argument("symmetric_extreme_eigen: matrix not square");
  if (!M.allFinite())
    throw NumericalError("symmetric_extreme_eigen: non-finite entries");
  const double defect = (M - M.transpose()).cwiseAbs().maxCoeff();
  if (defect > 1e-9 * std::max(1.0, M.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("symmetric_extreme_eigen: symmetry defect too large");
  const Eigen::MatrixXd sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success)
    throw NumericalError("symmetric_extreme_eigen: eigensolver failed");
  const int idx = which == Which::Min ? 0 : static_cast<int>(sym.rows()) - 1;
  ExtremeEigen out;
  out.value = es.eigenvalues()(idx);
  out.vector = es.eigenvectors().col(idx);
  return out;
}

namespace {

MetricValue clamp_metric(double raw, double scale) {
  MetricValue v;
  v.raw = raw;
  if (std::abs(raw) <= kZeroEigRel * (1.0 + scale)) {
    v.value = 0.0;
    v.clamped = true;
  } else {
    v.value = raw;
  }
  return v;
}

MetricValue extreme_of(const Eigen::MatrixXd& M, Which which) {
  if (M.rows() == 0) return clamp_metric(0.0, 0.0);
  const double raw = symmetric_extreme_eigen(M, which).value;
  const double scale = M.cwiseAbs().maxCoeff();
  return clamp_metric(raw, scale);
}

}  // namespace

MetricValue controllability_metric(const discretize::StackedOperators& ops) {
  const Eigen::MatrixXd BK = ops.terminal_input_map();
  return extreme_of(BK * BK.transpose(), Which::Min);
}

std::optional<double> min_effort_cost(const discretize::StackedOperators& ops,
                                      const Eigen::VectorXd& x_S,
                                      const Eigen::VectorXd& x_F) {
  const Eigen::MatrixXd BK = ops.terminal_input_map();
  const Eigen::MatrixXd G = BK * BK.transpose();
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success) return std::nullopt;
  // Cholesky succeeds on near-singular PSD matrices occasionally; apply a
  // pivot-style tolerance on the factor diagonal.
  const double dmin = llt.matrixL().toDenseMatrix().diagonal().minCoeff();
  const double dmax = llt.matrixL().toDenseMatrix().diagonal().maxCoeff();
  if (!(dmin > 1e-12 * std::max(1.0, dmax))) return std::nullopt;
  const Eigen::VectorXd dx =
      x_F - ops.A_stack.bottomRows(ops.p) * x_S;
  return dx.dot(llt.solve(dx));
}

MetricValue observability_metric(const discretize::StackedOperators& ops) {
  const Eigen::MatrixXd CA = ops.C_stack * ops.A_stack;
  return extreme_of(CA.transpose() * CA, Which::Min);
}

MetricValue robustness_metric(const discretize::StackedOperators& ops,
                              const Eigen::MatrixXd& q_rob) {
  if (q_rob.rows() != ops.state_rows() || q_rob.cols() != ops.state_rows())
    throw std::invalid_argument("robustness_metric: q_rob has wrong dimensions");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (q_rob + q_rob.transpose()));
  if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, q_rob.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("robustness_metric: q_rob must be positive semidefinite");
  const Eigen::MatrixXd E = ops.state_maps();
  return extreme_of(E.transpose() * q_rob * E, Which::Max);
}

MetricValue robustness_metric(const discretize::StackedOperators& ops) {
  const Eigen::MatrixXd E = ops.state_maps();
  return extreme_of(E.transpose() * E, Which::Max);
}

MetricValue sensitivity_metric(const discretize::StackedOperators& ops) {
  const Eigen::MatrixXd CE = ops.C_stack * ops.state_maps();
  return extreme_of(CE.transpose() * CE, Which::Min);
}

ExtremeEigen sensitivity_eigenpair(const discretize::StackedOperators& ops) {
  const Eigen::MatrixXd CE = ops.C_stack * ops.state_maps();
  return symmetric_extreme_eigen(CE.transpose() * CE, Which::Min);
}

MetricReport compute_all(const discretize::StackedOperators& ops) {
  MetricReport report;
  report.j_con = controllability_metric(ops);
  report.j_obs = observability_metric(ops);
  report.j_rob = robustness_metric(ops);
  report.j_sen = sensitivity_metric(ops);
  report.K = ops.K;
  report.L = ops.L;
  return report;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["j_con"] = j_con.value;
  doc["j_obs"] = j_obs.value;
  doc["j_rob"] = j_rob.value;
  doc["j_sen"] = j_sen.value;
  doc["j_con_raw"] = j_con.raw;
  doc["j_obs_raw"] = j_obs.raw;
  doc["j_rob_raw"] = j_rob.raw;
  doc["j_sen_raw"] = j_sen.raw;
  doc["j_sen_zero"] = j_sen.clamped;
  doc["K"] = K;
  doc["L"] = L;
  doc["q_rob_scale"] = q_rob_scale;
  return doc.dump(2);
}

std::string MetricReport::csv_header() {
  return "time,j_con,j_obs,j_rob,j_sen,j_sen_raw,j_sen_zero";
}

std::string MetricReport::csv_row(double time) const {
  std::ostringstream out;
  out.precision(17);
  out << time << ',' << j_con.value << ',' << j_obs.value << ',' << j_rob.value << ','
      << j_sen.value << ',' << j_sen.raw << ',' << (j_sen.clamped ? 1 : 0);
  return out.str();
}

}  // namespace zdaguard::metrics
