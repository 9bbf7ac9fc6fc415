#include "zdaguard/switching.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <thread>
#include <mutex>

#include <nlohmann/json.hpp>

namespace zdaguard::switching {

// ---------------------------------------------------------------------------
// Literal lifting maps.

LiftingMaps lifting_maps(const LiftingDims& dims) { return LiftingMaps{dims}; }

namespace {

inline int vb_idx(const LiftingDims& d, int row, int col) { return col * d.pk + row; }
inline int vc_idx_c(const LiftingDims& d, int row, int col) { return col * d.r_total + row; }
inline int vc_idx_k(const LiftingDims& d, int row, int col) {
  return d.r_total * d.pk + col * d.ql + row;
}

}  // namespace

Eigen::VectorXd LiftingMaps::vec_of_b(const Eigen::MatrixXd& B_stack) const {
  Eigen::VectorXd v(dims.vec_b());
  for (int col = 0; col < dims.ql; ++col)
    for (int row = 0; row < dims.pk; ++row) v(vb_idx(dims, row, col)) = B_stack(row, col);
  return v;
}

Eigen::VectorXd LiftingMaps::vec_of_ck(const Eigen::MatrixXd& C_stack,
                                       const Eigen::MatrixXd& K_stack) const {
  Eigen::VectorXd v(dims.vec_c());
  for (int col = 0; col < dims.pk; ++col)
    for (int row = 0; row < dims.r_total; ++row)
      v(vc_idx_c(dims, row, col)) = C_stack(row, col);
  for (int col = 0; col < dims.r_total; ++col)
    for (int row = 0; row < dims.ql; ++row) v(vc_idx_k(dims, row, col)) = K_stack(row, col);
  return v;
}

Eigen::MatrixXd LiftingMaps::phi_b(const Eigen::MatrixXd& X_b) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dims.pk, dims.pk);
  for (int i = 0; i < dims.pk; ++i)
    for (int j = 0; j < dims.pk; ++j) {
      double acc = 0.0;
      for (int a = 0; a < dims.ql; ++a) acc += X_b(vb_idx(dims, i, a), vb_idx(dims, j, a));
      out(i, j) = acc;
    }
  return out;
}

Eigen::MatrixXd LiftingMaps::phi_b_terminal(const Eigen::MatrixXd& X_b) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dims.p, dims.p);
  const int base = dims.pk - dims.p;
  for (int i = 0; i < dims.p; ++i)
    for (int j = 0; j < dims.p; ++j) {
      double acc = 0.0;
      for (int a = 0; a < dims.ql; ++a)
        acc += X_b(vb_idx(dims, base + i, a), vb_idx(dims, base + j, a));
      out(i, j) = acc;
    }
  return out;
}

Eigen::MatrixXd LiftingMaps::phi_c(const Eigen::MatrixXd& X_c) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dims.pk, dims.pk);
  for (int i = 0; i < dims.pk; ++i)
    for (int j = 0; j < dims.pk; ++j) {
      double acc = 0.0;
      for (int r = 0; r < dims.r_total; ++r)
        acc += X_c(vc_idx_c(dims, r, i), vc_idx_c(dims, r, j));
      out(i, j) = acc;
    }
  return out;
}

Eigen::MatrixXd LiftingMaps::psi_ck(const Eigen::MatrixXd& X_c) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dims.pk, dims.ql);
  for (int i = 0; i < dims.pk; ++i)
    for (int l = 0; l < dims.ql; ++l) {
      double acc = 0.0;
      for (int r = 0; r < dims.r_total; ++r)
        acc += X_c(vc_idx_c(dims, r, i), vc_idx_k(dims, l, r));
      out(i, l) = acc;
    }
  return out;
}

Eigen::MatrixXd LiftingMaps::phi_k(const Eigen::MatrixXd& X_k,
                                   const Eigen::MatrixXd& q_inv) const {
  // (C^T K^T K C)[i,j] = sum_l G[l,i] G[l,j] with G = K C; each product of
  // G entries is a linear functional of X_k = vec(X_c) vec(X_c)^T.
  const int nc = dims.vec_c();
  const auto gpair = [&](int l1, int i1, int l2, int i2) {
    double acc = 0.0;
    for (int r1 = 0; r1 < dims.r_total; ++r1) {
      const int a = vc_idx_k(dims, l1, r1) + nc * vc_idx_c(dims, r1, i1);
      for (int r2 = 0; r2 < dims.r_total; ++r2) {
        const int b = vc_idx_k(dims, l2, r2) + nc * vc_idx_c(dims, r2, i2);
        acc += X_k(a, b);
      }
    }
    return acc;
  };
  Eigen::MatrixXd inner = Eigen::MatrixXd::Zero(dims.pk, dims.pk);
  for (int i = 0; i < dims.pk; ++i)
    for (int j = 0; j < dims.pk; ++j) {
      double acc = 0.0;
      for (int l = 0; l < dims.ql; ++l) acc += gpair(l, i, l, j);
      inner(i, j) = acc;
    }
  return q_inv * inner * q_inv;
}

Eigen::MatrixXd LiftingMaps::psi_bc(const Eigen::MatrixXd& X_bc) const {
  // (B^T C^T C B)[a,b] = sum_{i,j,r} X_b[(i,a),(j,b)] * X_c[(r,i),(r,j)],
  // read from the cross block of X_bc over [vec(X_b); vec(X_c)].
  const int nb = dims.vec_b();
  const int nc = dims.vec_c();
  const int nb2 = nb * nb;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dims.ql, dims.ql);
  for (int a = 0; a < dims.ql; ++a)
    for (int b = 0; b < dims.ql; ++b) {
      double acc = 0.0;
      for (int i = 0; i < dims.pk; ++i)
        for (int j = 0; j < dims.pk; ++j) {
          const int xb_vec = vb_idx(dims, i, a) + nb * vb_idx(dims, j, b);
          for (int r = 0; r < dims.r_total; ++r) {
            const int xc_vec = vc_idx_c(dims, r, i) + nc * vc_idx_c(dims, r, j);
            acc += X_bc(xb_vec, nb2 + xc_vec);
          }
        }
      out(a, b) = acc;
    }
  return out;
}

Eigen::MatrixXd LiftingMaps::pi_bk(const Eigen::MatrixXd& X_bk,
                                   const Eigen::MatrixXd& q_inv) const {
  // B K C Qinv C^T K^T B^T = sum_{a,b} B[:,a] (G Qinv G^T)[a,b] B[:,b]^T;
  // the middle factor is linear in X_k and the outer B pair in X_b, so each
  // entry reads a cross entry of X_bk over [vec(X_b); vec(X_k)].
  const int nb = dims.vec_b();
  const int nc = dims.vec_c();
  const int nb2 = nb * nb;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dims.pk, dims.pk);
  for (int i = 0; i < dims.pk; ++i)
    for (int j = 0; j < dims.pk; ++j) {
      double acc = 0.0;
      for (int a = 0; a < dims.ql; ++a)
        for (int b = 0; b < dims.ql; ++b) {
          const int xb_vec = vb_idx(dims, i, a) + nb * vb_idx(dims, j, b);
          // (G Qinv G^T)[a,b] = sum_{m,n} Qinv[m,n] G[a,m] G[b,n].
          for (int m = 0; m < dims.pk; ++m)
            for (int n = 0; n < dims.pk; ++n) {
              if (q_inv(m, n) == 0.0) continue;
              for (int r1 = 0; r1 < dims.r_total; ++r1) {
                const int g1 = vc_idx_k(dims, a, r1) + nc * vc_idx_c(dims, r1, m);
                for (int r2 = 0; r2 < dims.r_total; ++r2) {
                  const int g2 = vc_idx_k(dims, b, r2) + nc * vc_idx_c(dims, r2, n);
                  const int xk_vec = g1 + (nc * nc) * g2;
                  acc += q_inv(m, n) * X_bk(xb_vec, nb2 + xk_vec);
                }
              }
            }
        }
      out(i, j) = acc;
    }
  return out;
}

// ---------------------------------------------------------------------------

RoundTripReport verify_lifted_point(const Eigen::MatrixXd& A_stack,
                                    const Eigen::MatrixXd& B_stack,
                                    const Eigen::MatrixXd& C_stack,
                                    const Eigen::MatrixXd& K_stack, int p, double gamma,
                                    const Thresholds& thresholds,
                                    const Eigen::MatrixXd& q_rob, double tol) {
  LiftingDims dims;
  dims.p = p;
  dims.pk = static_cast<int>(B_stack.rows());
  dims.ql = static_cast<int>(B_stack.cols());
  dims.r_total = static_cast<int>(C_stack.rows());
  const LiftingMaps maps = lifting_maps(dims);

  const Eigen::MatrixXd q_inv =
      q_rob.llt().solve(Eigen::MatrixXd::Identity(dims.pk, dims.pk));

  // Exact rank-1 liftings of the concrete point.
  const Eigen::VectorXd vb = maps.vec_of_b(B_stack);
  const Eigen::VectorXd vc = maps.vec_of_ck(C_stack, K_stack);
  const Eigen::MatrixXd X_b = vb * vb.transpose();
  const Eigen::MatrixXd X_c = vc * vc.transpose();
  const Eigen::VectorXd vXc =
      Eigen::Map<const Eigen::VectorXd>(X_c.data(), X_c.size());
  const Eigen::MatrixXd X_k = vXc * vXc.transpose();
  const Eigen::VectorXd vXb =
      Eigen::Map<const Eigen::VectorXd>(X_b.data(), X_b.size());
  Eigen::VectorXd vbc(vXb.size() + vXc.size());
  vbc << vXb, vXc;
  const Eigen::MatrixXd X_bc = vbc * vbc.transpose();
  const Eigen::VectorXd vXk =
      Eigen::Map<const Eigen::VectorXd>(X_k.data(), X_k.size());
  Eigen::VectorXd vbk(vXb.size() + vXk.size());
  vbk << vXb, vXk;
  const Eigen::MatrixXd X_bk = vbk * vbk.transpose();

  const auto min_eig = [](const Eigen::MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  };

  RoundTripReport report;

  // Lifted side: con1, con2, con3 assembled through the lifting maps.
  {
    const int n_i = dims.p;
    bool ok = true;
    ok = ok && min_eig(maps.phi_b_terminal(X_b) -
                       thresholds.c_c * Eigen::MatrixXd::Identity(n_i, n_i)) >= -tol;
    const Eigen::MatrixXd phi_c = maps.phi_c(X_c);
    ok = ok && min_eig(A_stack.transpose() * phi_c * A_stack -
                       thresholds.c_o * Eigen::MatrixXd::Identity(p, p)) >= -tol;

    const int ecols = p + dims.ql;
    Eigen::MatrixXd con2 = Eigen::MatrixXd::Zero(ecols, ecols);
    con2.topLeftCorner(p, p) = A_stack.transpose() * phi_c * A_stack;
    con2.topRightCorner(p, dims.ql) = A_stack.transpose() * phi_c * B_stack;
    con2.bottomLeftCorner(dims.ql, p) = B_stack.transpose() * phi_c * A_stack;
    con2.bottomRightCorner(dims.ql, dims.ql) = maps.psi_bc(X_bc);
    ok = ok && min_eig(con2 - thresholds.c_s * Eigen::MatrixXd::Identity(ecols, ecols)) >=
                   -tol;

    const Eigen::MatrixXd Y = q_inv + maps.phi_b(X_b) + maps.phi_k(X_k, q_inv) +
                              maps.pi_bk(X_bk, q_inv);
    Eigen::MatrixXd E(dims.pk, p + dims.ql);
    E.leftCols(p) = A_stack;
    E.rightCols(dims.ql) = B_stack;
    const Eigen::MatrixXd F = B_stack + q_inv * maps.psi_ck(X_c);
    const int n3 = dims.pk + (p + dims.ql) + dims.ql;
    Eigen::MatrixXd con3 = Eigen::MatrixXd::Zero(n3, n3);
    con3.topLeftCorner(dims.pk, dims.pk) = Y;
    con3.block(0, dims.pk, dims.pk, p + dims.ql) = E;
    con3.block(dims.pk, 0, p + dims.ql, dims.pk) = E.transpose();
    con3.block(0, dims.pk + p + dims.ql, dims.pk, dims.ql) = F;
    con3.block(dims.pk + p + dims.ql, 0, dims.ql, dims.pk) = F.transpose();
    con3.block(dims.pk, dims.pk, p + dims.ql, p + dims.ql) =
        gamma * Eigen::MatrixXd::Identity(p + dims.ql, p + dims.ql);
    con3.bottomRightCorner(dims.ql, dims.ql) =
        Eigen::MatrixXd::Identity(dims.ql, dims.ql);
    ok = ok && min_eig(con3) >= -tol * std::max(1.0, con3.cwiseAbs().maxCoeff());

    // con4 borders on exact rank-1 liftings.
    const auto bordered_ok = [&](const Eigen::MatrixXd& X, const Eigen::VectorXd& w) {
      Eigen::MatrixXd blk(X.rows() + 1, X.cols() + 1);
      blk.topLeftCorner(X.rows(), X.cols()) = X;
      blk.topRightCorner(X.rows(), 1) = w;
      blk.bottomLeftCorner(1, X.cols()) = w.transpose();
      blk(X.rows(), X.cols()) = 1.0;
      return min_eig(blk) >= -tol * std::max(1.0, blk.cwiseAbs().maxCoeff());
    };
    ok = ok && bordered_ok(X_b, vb) && bordered_ok(X_c, vc);
    report.lifted_feasible = ok;
  }

  // Nonlinear side evaluated directly.
  {
    bool ok = true;
    const Eigen::MatrixXd BK = B_stack.bottomRows(p);
    ok = ok && min_eig(BK * BK.transpose() -
                       thresholds.c_c * Eigen::MatrixXd::Identity(p, p)) >= -tol;
    const Eigen::MatrixXd CA = C_stack * A_stack;
    ok = ok && min_eig(CA.transpose() * CA -
                       thresholds.c_o * Eigen::MatrixXd::Identity(p, p)) >= -tol;
    Eigen::MatrixXd E(dims.pk, p + dims.ql);
    E.leftCols(p) = A_stack;
    E.rightCols(dims.ql) = B_stack;
    const Eigen::MatrixXd CE = C_stack * E;
    ok = ok && min_eig(CE.transpose() * CE -
                       thresholds.c_s *
                           Eigen::MatrixXd::Identity(E.cols(), E.cols())) >= -tol;
    const Eigen::MatrixXd L =
        Eigen::MatrixXd::Identity(dims.pk, dims.pk) - B_stack * K_stack * C_stack;
    const Eigen::MatrixXd Linv_E = L.partialPivLu().solve(E);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Linv_E.transpose() * q_rob * Linv_E,
                                                      Eigen::EigenvaluesOnly);
    ok = ok && es.eigenvalues().maxCoeff() <= gamma + tol;
    report.nonlinear_feasible = ok;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Affine expressions.

AffineExpr& AffineExpr::operator+=(const AffineExpr& o) {
  constant += o.constant;
  for (const auto& [id, v] : o.coeffs) {
    coeffs[id] += v;
    if (coeffs[id] == 0.0) coeffs.erase(id);
  }
  return *this;
}

AffineExpr AffineExpr::operator*(double s) const {
  AffineExpr out;
  if (s == 0.0) return out;
  out.constant = constant * s;
  for (const auto& [id, v] : coeffs) out.coeffs[id] = v * s;
  return out;
}

ExprMatrix ExprMatrix::constant(const Eigen::MatrixXd& M) {
  ExprMatrix out(static_cast<int>(M.rows()), static_cast<int>(M.cols()));
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) out.at(i, j) = AffineExpr(M(i, j));
  return out;
}

ExprMatrix ExprMatrix::transpose() const {
  ExprMatrix out(cols_, rows_);
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) out.at(j, i) = at(i, j);
  return out;
}

ExprMatrix ExprMatrix::operator+(const ExprMatrix& o) const {
  if (rows_ != o.rows_ || cols_ != o.cols_)
    throw std::invalid_argument("ExprMatrix: shape mismatch in addition");
  ExprMatrix out = *this;
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) out.at(i, j) += o.at(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Registry.

int LiftRegistry::intern(const Monomial& m, const std::string& name) {
  auto it = index_.find(m);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(monomials_.size());
  monomials_.push_back(m);
  names_.push_back(name);
  index_[m] = id;
  return id;
}

int LiftRegistry::add_base_atom(const std::string& name, bool binary) {
  Monomial m{{static_cast<int>(base_atoms_.size()), 1}};
  const int id = intern(m, name);
  base_atoms_.push_back(id);
  binary_.push_back(binary);
  return id;
}

LiftRegistry::Monomial LiftRegistry::merge(int a, int b) const {
  Monomial out;
  const Monomial& ma = monomials_[static_cast<std::size_t>(a)];
  const Monomial& mb = monomials_[static_cast<std::size_t>(b)];
  std::size_t i = 0, j = 0;
  const auto push = [&](int base, int power) {
    if (binary_[static_cast<std::size_t>(base)]) power = 1;
    out.emplace_back(base, power);
  };
  while (i < ma.size() || j < mb.size()) {
    if (j >= mb.size() || (i < ma.size() && ma[i].first < mb[j].first)) {
      push(ma[i].first, ma[i].second);
      ++i;
    } else if (i >= ma.size() || mb[j].first < ma[i].first) {
      push(mb[j].first, mb[j].second);
      ++j;
    } else {
      push(ma[i].first, ma[i].second + mb[j].second);
      ++i;
      ++j;
    }
  }
  return out;
}

std::optional<int> LiftRegistry::find_product(int a, int b) const {
  const auto it = index_.find(merge(a, b));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int LiftRegistry::add_lifting(const std::string& name, const std::vector<int>& border) {
  for (std::size_t i = 0; i < border.size(); ++i)
    for (std::size_t j = i; j < border.size(); ++j) {
      const Monomial m = merge(border[i], border[j]);
      intern(m, name + "[" + names_[static_cast<std::size_t>(border[i])] + "*" +
                    names_[static_cast<std::size_t>(border[j])] + "]");
    }
  liftings_.push_back({name, border, -1});
  return static_cast<int>(liftings_.size()) - 1;
}

AffineExpr LiftRegistry::multiply(const AffineExpr& a, const AffineExpr& b) const {
  AffineExpr out;
  out.constant = a.constant * b.constant;
  for (const auto& [id, v] : b.coeffs) {
    if (a.constant != 0.0) out.coeffs[id] += a.constant * v;
  }
  for (const auto& [id, v] : a.coeffs) {
    if (b.constant != 0.0) out.coeffs[id] += b.constant * v;
  }
  for (const auto& [ia, va] : a.coeffs)
    for (const auto& [ib, vb] : b.coeffs) {
      const auto prod = find_product(ia, ib);
      if (!prod)
        throw std::logic_error("LiftRegistry: product atom missing for " +
                               names_[static_cast<std::size_t>(ia)] + " * " +
                               names_[static_cast<std::size_t>(ib)]);
      out.coeffs[*prod] += va * vb;
    }
  for (auto it = out.coeffs.begin(); it != out.coeffs.end();)
    it = it->second == 0.0 ? out.coeffs.erase(it) : std::next(it);
  return out;
}

ExprMatrix LiftRegistry::multiply(const ExprMatrix& a, const ExprMatrix& b) const {
  if (a.cols() != b.rows()) throw std::invalid_argument("ExprMatrix: shape mismatch");
  ExprMatrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      AffineExpr acc;
      for (int k = 0; k < a.cols(); ++k) {
        const AffineExpr& left = a.at(i, k);
        const AffineExpr& right = b.at(k, j);
        if ((left.constant == 0.0 && left.coeffs.empty()) ||
            (right.constant == 0.0 && right.coeffs.empty()))
          continue;
        acc += multiply(left, right);
      }
      out.at(i, j) = std::move(acc);
    }
  return out;
}

ExprMatrix LiftRegistry::bordered_block(int lifting_index) const {
  const Lifting& lift = liftings_[static_cast<std::size_t>(lifting_index)];
  const int n = static_cast<int>(lift.border.size());
  ExprMatrix out(n + 1, n + 1);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      const auto prod = find_product(lift.border[static_cast<std::size_t>(i)],
                                     lift.border[static_cast<std::size_t>(j)]);
      out.at(i, j) = AffineExpr::atom(*prod);
      out.at(j, i) = out.at(i, j);
    }
    out.at(i, n) = AffineExpr::atom(lift.border[static_cast<std::size_t>(i)]);
    out.at(n, i) = out.at(i, n);
  }
  out.at(n, n) = AffineExpr(1.0);
  return out;
}

Eigen::VectorXd LiftRegistry::evaluate_atoms(const Eigen::VectorXd& base_values) const {
  if (base_values.size() != static_cast<int>(base_atoms_.size()))
    throw std::invalid_argument("evaluate_atoms: wrong base count");
  Eigen::VectorXd out(atom_count());
  for (int id = 0; id < atom_count(); ++id) {
    double v = 1.0;
    for (const auto& [base, power] : monomials_[static_cast<std::size_t>(id)])
      v *= std::pow(base_values(base), binary_[static_cast<std::size_t>(base)] ? 1 : power);
    out(id) = v;
  }
  return out;
}

double LiftRegistry::monomial_bound(int atom,
                                    const std::map<int, double>& base_bounds) const {
  double bound = 1.0;
  for (const auto& [base, power] : monomials_[static_cast<std::size_t>(atom)]) {
    const int base_atom = base_atoms_[static_cast<std::size_t>(base)];
    const auto it = base_bounds.find(base_atom);
    if (it == base_bounds.end()) return std::numeric_limits<double>::infinity();
    bound *= std::pow(std::abs(it->second),
                      binary_[static_cast<std::size_t>(base)] ? 1 : power);
  }
  return bound;
}

// ---------------------------------------------------------------------------
// Problem assembly.

namespace {

struct PaddedStructure {
  std::vector<std::pair<int, int>> slots;  // sorted union edge slots
  int dims = 0;
  int agents = 0;
  int leader = 0;
  model::NetworkInfo net;
  int mpa = 1;  // measured coordinates per axis
  int rows_per_slot() const { return dims * mpa; }
  int rows_per_step() const {
    return rows_per_slot() * (static_cast<int>(slots.size()) + 1);
  }
};

PaddedStructure union_slots(const model::SystemModel& sys,
                            const model::TopologySet& set) {
  if (!sys.network.has_value())
    throw std::invalid_argument(
        "build_lifted_problem: model does not expose network structure");
  PaddedStructure ps;
  ps.dims = sys.network->dims;
  ps.agents = sys.network->agents;
  ps.leader = sys.network->leader;
  ps.net = *sys.network;
  ps.mpa = sys.network->measures_per_axis();
  std::set<std::pair<int, int>> acc;
  for (const auto& step : set.steps)
    for (const auto& topo : step)
      for (const auto& e : topo.edges()) acc.insert(e);
  ps.slots.assign(acc.begin(), acc.end());
  return ps;
}

bool expr_is_constant(const ExprMatrix& M) {
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j)
      if (!M.at(i, j).coeffs.empty()) return false;
  return true;
}

Eigen::MatrixXd expr_constant_part(const ExprMatrix& M) {
  Eigen::MatrixXd out(M.rows(), M.cols());
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) out(i, j) = M.at(i, j).constant;
  return 0.5 * (out + out.transpose());
}

/// Adds a symmetric expression block `M >= 0` to the SDP.
int emit_block(sdp::SdpProblem& prob, const ExprMatrix& M) {
  sdp::ConstraintBlock blk;
  blk.dim = M.rows();
  blk.mats.resize(1);
  blk.mats[0] = Eigen::MatrixXd::Zero(M.rows(), M.cols());
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) {
      const AffineExpr& e = M.at(i, j);
      blk.mats[0](i, j) += 0.5 * e.constant;
      blk.mats[0](j, i) += 0.5 * e.constant;
      for (const auto& [id, v] : e.coeffs) {
        if (static_cast<int>(blk.mats.size()) <= id + 1)
          blk.mats.resize(static_cast<std::size_t>(id + 2));
        auto& F = blk.mats[static_cast<std::size_t>(id + 1)];
        if (F.size() == 0) F = Eigen::MatrixXd::Zero(M.rows(), M.cols());
        F(i, j) += 0.5 * v;
        F(j, i) += 0.5 * v;
      }
    }
  prob.blocks.push_back(std::move(blk));
  return static_cast<int>(prob.blocks.size()) - 1;
}

ExprMatrix shift_identity(const ExprMatrix& M, double shift) {
  ExprMatrix out = M;
  for (int i = 0; i < M.rows(); ++i) out.at(i, i) += AffineExpr(-shift);
  return out;
}

}  // namespace

LiftedProblem build_lifted_problem(const model::SystemModel& sys,
                                   const model::SamplingConfig& sampling,
                                   const model::TopologySet& topology_set,
                                   const SwitchConfig& config) {
  if (config.thresholds.c_c <= 0 || config.thresholds.c_o <= 0 || config.thresholds.c_s <= 0)
    throw std::invalid_argument("build_lifted_problem: thresholds must be positive");
  topology_set.validate();
  const int K = sampling.sensing_steps();
  if (static_cast<int>(topology_set.steps.size()) != K + 1)
    throw std::invalid_argument("build_lifted_problem: topology set must cover K+1 steps");
  if (!sys.a_fixed)
    throw std::invalid_argument(
        "build_lifted_problem: A must be topology-independent; use brute_force_select "
        "for topology-dependent dynamics");

  LiftedProblem lp;
  lp.system = sys;
  lp.sampling = sampling;
  lp.topology_set = topology_set;
  lp.config = config;
  lp.steps = K + 1;

  const PaddedStructure ps = union_slots(sys, topology_set);
  lp.slots = ps.slots;
  const int nslots = static_cast<int>(ps.slots.size());

  // Template operators: A, S_k, per-interval input rows are all
  // topology-independent here (communication switching only).
  const auto ops =
      discretize::assemble_stacked(sys, sampling, std::vector<model::Topology>(
                                                      static_cast<std::size_t>(K + 1),
                                                      topology_set.at_step(0).front()));
  {
    const Eigen::MatrixXd B0 = sys.matrices(topology_set.at_step(0).front()).B;
    for (const auto& step : topology_set.steps)
      for (const auto& topo : step)
        if ((sys.matrices(topo).B - B0).cwiseAbs().maxCoeff() > 0)
          throw std::invalid_argument(
              "build_lifted_problem: actuation matrix must not depend on the topology");
  }

  // Atoms: gamma first, then per-step per-slot edge indicators, then gains.
  LiftRegistry& reg = lp.registry;
  lp.gamma_atom = reg.add_base_atom("gamma", false);
  lp.theta_atoms.assign(static_cast<std::size_t>(K + 1), std::vector<int>(nslots, -1));
  lp.theta_fixed.assign(static_cast<std::size_t>(K + 1), std::vector<double>(nslots, 0.0));
  std::vector<int> z_atoms;
  for (int k = 0; k <= K; ++k) {
    for (int s = 0; s < nslots; ++s) {
      int present = 0;
      for (const auto& topo : topology_set.at_step(k))
        if (topo.adjacency(ps.slots[static_cast<std::size_t>(s)].first,
                           ps.slots[static_cast<std::size_t>(s)].second) != 0)
          ++present;
      const int total = static_cast<int>(topology_set.at_step(k).size());
      if (present == 0) {
        lp.theta_fixed[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)] = 0.0;
      } else if (present == total) {
        lp.theta_fixed[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)] = 1.0;
      } else {
        const int atom = reg.add_base_atom(
            "theta_" + std::to_string(k) + "_" + std::to_string(s), true);
        lp.theta_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)] = atom;
        z_atoms.push_back(atom);
      }
    }
  }
  lp.gain_atoms.assign(static_cast<std::size_t>(K + 1), std::vector<int>(nslots, -1));
  if (config.gain_mode == GainMode::Joint) {
    for (int k = 0; k <= K; ++k)
      for (int s = 0; s < nslots; ++s) {
        // A gain is pointless on a slot that is absent at this step.
        const bool possible =
            lp.theta_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)] >= 0 ||
            lp.theta_fixed[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)] > 0;
        if (!possible) continue;
        const int atom =
            reg.add_base_atom("g_" + std::to_string(k) + "_" + std::to_string(s), false);
        lp.gain_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)] = atom;
        z_atoms.push_back(atom);
      }
  }

  // Level-1 lifting over all base decision atoms except gamma.
  const int lift1 = z_atoms.empty() ? -1 : reg.add_lifting("X1", z_atoms);
  // Level-2 lifting for the quartic terms in joint-gain mode.
  int lift2 = -1;
  if (config.gain_mode == GainMode::Joint && !z_atoms.empty()) {
    std::vector<int> border2 = z_atoms;
    const auto& l1 = reg.liftings()[static_cast<std::size_t>(lift1)];
    for (std::size_t i = 0; i < l1.border.size(); ++i)
      for (std::size_t j = i; j < l1.border.size(); ++j) {
        // All degree-2 monomials enter the level-2 border.
        AffineExpr prod = reg.multiply(AffineExpr::atom(l1.border[i]),
                                       AffineExpr::atom(l1.border[j]));
        for (const auto& [id, v] : prod.coeffs)
          if (std::find(border2.begin(), border2.end(), id) == border2.end())
            border2.push_back(id);
      }
    lift2 = reg.add_lifting("X2", border2);
  }

  // theta expressions per step/slot.
  const auto theta_expr = [&](int k, int s) {
    const int atom = lp.theta_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
    if (atom >= 0) return AffineExpr::atom(atom);
    return AffineExpr(lp.theta_fixed[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)]);
  };

  // Padded measurement map C_k(theta) over the slot structure.
  const int rows_k = ps.rows_per_step();
  const int pk = ops.state_rows();
  const int ql = ops.input_cols();
  const int p = ops.p;
  ExprMatrix C_expr(rows_k * (K + 1), pk);
  for (int k = 0; k <= K; ++k) {
    for (int s = 0; s < nslots; ++s) {
      const auto [i, j] = ps.slots[static_cast<std::size_t>(s)];
      for (int d = 0; d < ps.dims; ++d)
        for (int m = 0; m < ps.mpa; ++m) {
          const int row = k * rows_k + s * ps.rows_per_slot() + d * ps.mpa + m;
          const AffineExpr te = theta_expr(k, s);
          C_expr.at(row, k * p + ps.net.coord_index(i, d, m)) += te;
          C_expr.at(row, k * p + ps.net.coord_index(j, d, m)) += te * -1.0;
        }
    }
    for (int d = 0; d < ps.dims; ++d)
      for (int m = 0; m < ps.mpa; ++m) {
        const int row = k * rows_k + nslots * ps.rows_per_slot() + d * ps.mpa + m;
        C_expr.at(row, k * p + ps.net.coord_index(ps.leader, d, m)) += AffineExpr(1.0);
      }
  }

  // Gain stack K(theta, g) over the padded measurement rows; each actuation
  // instant consumes the latest sensing step.
  ExprMatrix K_expr(ql, rows_k * (K + 1));
  if (config.gain_mode != GainMode::Zero) {
    for (int l = 0; l <= ops.L; ++l) {
      int k_latest = 0;
      for (int k = 0; k <= K; ++k)
        if (sampling.t_y(k) <= sampling.t_u(l)) k_latest = k;
      for (int s = 0; s < nslots; ++s) {
        const auto [i, j] = ps.slots[static_cast<std::size_t>(s)];
        for (int d = 0; d < ps.dims; ++d)
          for (int m = 0; m < ps.mpa; ++m) {
            const int col = k_latest * rows_k + s * ps.rows_per_slot() + d * ps.mpa + m;
            AffineExpr gain;
            if (config.gain_mode == GainMode::Fixed) {
              gain = AffineExpr(m == 0 ? config.consensus_kp : config.consensus_kd);
            } else {
              const int atom = lp.gain_atoms[static_cast<std::size_t>(k_latest)]
                                            [static_cast<std::size_t>(s)];
              if (atom < 0) continue;
              // One free magnitude per slot; velocity rows keep the
              // configured damping ratio.
              const double ratio =
                  m == 0 ? 1.0
                         : (config.consensus_kp != 0.0
                                ? config.consensus_kd / config.consensus_kp
                                : 1.0);
              gain = AffineExpr::atom(atom, ratio);
            }
            K_expr.at(l * ops.q + i * ps.dims + d, col) += gain * -1.0;
            K_expr.at(l * ops.q + j * ps.dims + d, col) += gain;
          }
      }
      for (int d = 0; d < ps.dims; ++d)
        for (int m = 0; m < ps.mpa; ++m) {
          const int col = k_latest * rows_k + nslots * ps.rows_per_slot() + d * ps.mpa + m;
          K_expr.at(l * ops.q + ps.leader * ps.dims + d, col) +=
              AffineExpr(m == 0 ? -config.consensus_kl : -config.consensus_kd);
        }
    }
  }

  // Constant operators.
  const Eigen::MatrixXd& A_stack = ops.A_stack;
  const Eigen::MatrixXd& B_stack = ops.B_stack;
  const double q_scale = config.q_rob_scale;
  const Eigen::MatrixXd Qinv =
      (1.0 / q_scale) * Eigen::MatrixXd::Identity(pk, pk);

  sdp::SdpProblem& prob = lp.sdp;

  // con1a: terminal controllability is constant here; checked, not emitted.
  {
    const Eigen::MatrixXd BK = B_stack.bottomRows(p);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(BK * BK.transpose(),
                                                      Eigen::EigenvaluesOnly);
    const double lam = es.eigenvalues().minCoeff();
    std::ostringstream line;
    line << "terminal controllability bound: lambda_min = " << lam
         << (lam >= config.thresholds.c_c ? " >= " : " < ") << config.thresholds.c_c;
    lp.precheck_log.push_back(line.str());
    if (lam < config.thresholds.c_c)
      throw InfeasibleError("build_lifted_problem: " + line.str());
  }

  const ExprMatrix A_const = ExprMatrix::constant(A_stack);
  const ExprMatrix B_const = ExprMatrix::constant(B_stack);
  const ExprMatrix phi_c = reg.multiply(C_expr.transpose(), C_expr);

  // Constant constraints are decided here; emitting them would only add
  // degeneracy to the embedding.
  const auto emit_or_check = [&](const ExprMatrix& M, const std::string& label) {
    if (!expr_is_constant(M)) {
      emit_block(prob, M);
      return;
    }
    const Eigen::MatrixXd value = expr_constant_part(M);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(value, Eigen::EigenvaluesOnly);
    const double lam = es.eigenvalues().minCoeff();
    std::ostringstream line;
    line << label << ": constant block lambda_min = " << lam;
    lp.precheck_log.push_back(line.str());
    if (lam < -1e-9 * std::max(1.0, value.cwiseAbs().maxCoeff()))
      throw InfeasibleError("build_lifted_problem: " + line.str());
  };

  // con1b: A^T Phi_c A >= c_o I.
  const ExprMatrix obs_block =
      reg.multiply(reg.multiply(A_const.transpose(), phi_c), A_const);
  emit_or_check(shift_identity(obs_block, config.thresholds.c_o), "observability bound");

  // con2: sensitivity block >= c_s I.
  {
    ExprMatrix E_const(pk, p + ql);
    for (int i = 0; i < pk; ++i) {
      for (int j = 0; j < p; ++j) E_const.at(i, j) = AffineExpr(A_stack(i, j));
      for (int j = 0; j < ql; ++j) E_const.at(i, p + j) = AffineExpr(B_stack(i, j));
    }
    const ExprMatrix con2 =
        reg.multiply(reg.multiply(E_const.transpose(), phi_c), E_const);
    emit_or_check(shift_identity(con2, config.thresholds.c_s), "sensitivity bound");
  }

  // con3: the 3x3 robustness embedding with gamma on the middle diagonal.
  {
    const ExprMatrix G = reg.multiply(K_expr, C_expr);  // K C
    const ExprMatrix Qinv_const = ExprMatrix::constant(Qinv);
    const ExprMatrix phi_k = reg.multiply(reg.multiply(Qinv_const, G.transpose()),
                                          reg.multiply(G, Qinv_const));
    const ExprMatrix BG = reg.multiply(B_const, G);
    const ExprMatrix pi_bk =
        reg.multiply(reg.multiply(BG, Qinv_const), BG.transpose());
    ExprMatrix Y = ExprMatrix::constant(Qinv + B_stack * B_stack.transpose());
    Y = Y + phi_k + pi_bk;
    const ExprMatrix F_expr =
        B_const + reg.multiply(Qinv_const, G.transpose());

    const int n3 = pk + (p + ql) + ql;
    ExprMatrix con3(n3, n3);
    for (int i = 0; i < pk; ++i)
      for (int j = 0; j < pk; ++j) con3.at(i, j) = Y.at(i, j);
    for (int i = 0; i < pk; ++i) {
      for (int j = 0; j < p; ++j) {
        con3.at(i, pk + j) = AffineExpr(A_stack(i, j));
        con3.at(pk + j, i) = con3.at(i, pk + j);
      }
      for (int j = 0; j < ql; ++j) {
        con3.at(i, pk + p + j) = AffineExpr(B_stack(i, j));
        con3.at(pk + p + j, i) = con3.at(i, pk + p + j);
      }
      for (int j = 0; j < ql; ++j) {
        con3.at(i, pk + p + ql + j) = F_expr.at(i, j);
        con3.at(pk + p + ql + j, i) = F_expr.at(i, j);
      }
    }
    for (int j = 0; j < p + ql; ++j)
      con3.at(pk + j, pk + j) = AffineExpr::atom(lp.gamma_atom);
    for (int j = 0; j < ql; ++j) con3.at(pk + p + ql + j, pk + p + ql + j) = AffineExpr(1.0);
    emit_block(prob, con3);
  }

  // con4: bordered lifting blocks.
  for (int li = 0; li < static_cast<int>(reg.liftings().size()); ++li) {
    const int idx = emit_block(prob, reg.bordered_block(li));
    const_cast<LiftRegistry::Lifting&>(reg.liftings()[static_cast<std::size_t>(li)])
        .block_index = idx;
  }
  (void)lift2;

  // Box rows and per-step density caps.
  const auto scalar_block = [&](const AffineExpr& e) {
    ExprMatrix m(1, 1);
    m.at(0, 0) = e;
    emit_block(prob, m);
  };
  scalar_block(AffineExpr::atom(lp.gamma_atom));  // gamma >= 0
  for (int k = 0; k <= K; ++k) {
    AffineExpr density_sum;
    for (int s = 0; s < nslots; ++s) {
      density_sum += theta_expr(k, s);
      const int atom = lp.theta_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
      if (atom < 0) continue;
      scalar_block(AffineExpr::atom(atom));                            // theta >= 0
      AffineExpr upper(1.0);
      upper += AffineExpr::atom(atom, -1.0);
      scalar_block(upper);                                             // theta <= 1
    }
    const double max_edges = 0.5 * ps.agents * (ps.agents - 1);
    AffineExpr cap(topology_set.density_cap * max_edges);
    cap += density_sum * -1.0;
    scalar_block(cap);  // density within the declared cap
  }
  if (config.gain_mode == GainMode::Joint) {
    for (int k = 0; k <= K; ++k)
      for (int s = 0; s < nslots; ++s) {
        const int atom = lp.gain_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
        if (atom < 0) continue;
        AffineExpr lo(config.gain_bound);
        lo += AffineExpr::atom(atom);
        scalar_block(lo);
        AffineExpr hi(config.gain_bound);
        hi += AffineExpr::atom(atom, -1.0);
        scalar_block(hi);
      }
  }

  // Upper bounds for every lifted diagonal atom (even monomials), from the
  // base bounds theta <= 1 and |g| <= gain_bound.
  {
    std::map<int, double> base_bounds;
    for (int k = 0; k <= K; ++k)
      for (int s = 0; s < nslots; ++s) {
        const int t = lp.theta_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
        if (t >= 0) base_bounds[t] = 1.0;
        const int g = lp.gain_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
        if (g >= 0) base_bounds[g] = config.gain_bound;
      }
    std::set<int> bounded;
    for (const auto& lift : reg.liftings())
      for (std::size_t bi = 0; bi < lift.border.size(); ++bi) {
        const AffineExpr diag = reg.multiply(AffineExpr::atom(lift.border[bi]),
                                             AffineExpr::atom(lift.border[bi]));
        for (const auto& [atom, coef] : diag.coeffs) {
          (void)coef;
          if (!bounded.insert(atom).second) continue;
          const double cap = reg.monomial_bound(atom, base_bounds);
          if (!std::isfinite(cap)) continue;
          AffineExpr e(cap);
          e += AffineExpr::atom(atom, -1.0);
          scalar_block(e);
        }
      }
  }

  prob.num_vars = reg.atom_count();
  prob.c = Eigen::VectorXd::Zero(prob.num_vars);
  prob.c(lp.gamma_atom) = 1.0;
  prob.G_eq = Eigen::MatrixXd::Zero(0, prob.num_vars);
  prob.h_eq = Eigen::VectorXd::Zero(0);
  prob.validate();
  return lp;
}

void add_stability_constraint(LiftedProblem& lp,
                              const std::vector<Eigen::MatrixXd>& P_seq, double alpha) {
  if (alpha <= 0.0 || alpha >= 1.0)
    throw std::invalid_argument("add_stability_constraint: alpha must lie in (0,1)");
  const int K = lp.sampling.sensing_steps();
  if (static_cast<int>(P_seq.size()) != K + 1)
    throw std::invalid_argument("add_stability_constraint: need K+1 Lyapunov weights");

  const auto ops = discretize::assemble_stacked(
      lp.system, lp.sampling,
      std::vector<model::Topology>(static_cast<std::size_t>(K + 1),
                                   lp.topology_set.at_step(0).front()));
  const int p = ops.p;
  const int pk = ops.state_rows();
  const PaddedStructure ps = union_slots(lp.system, lp.topology_set);
  const int rows_k = ps.rows_per_step();

  for (const auto& P : P_seq) {
    Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (P.rows() != p || llt.info() != Eigen::Success)
      throw std::invalid_argument("add_stability_constraint: P_k must be p x p positive definite");
  }

  // Rebuild the gain and measurement expressions (cheap at these sizes).
  LiftRegistry& reg = lp.registry;
  const auto theta_expr = [&](int k, int s) {
    const int atom = lp.theta_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
    if (atom >= 0) return AffineExpr::atom(atom);
    return AffineExpr(lp.theta_fixed[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)]);
  };
  const int nslots = static_cast<int>(ps.slots.size());
  ExprMatrix C_expr(rows_k * (K + 1), pk);
  for (int k = 0; k <= K; ++k) {
    for (int s = 0; s < nslots; ++s) {
      const auto [i, j] = ps.slots[static_cast<std::size_t>(s)];
      for (int d = 0; d < ps.dims; ++d)
        for (int m = 0; m < ps.mpa; ++m) {
          const int row = k * rows_k + s * ps.rows_per_slot() + d * ps.mpa + m;
          const AffineExpr te = theta_expr(k, s);
          C_expr.at(row, k * p + ps.net.coord_index(i, d, m)) += te;
          C_expr.at(row, k * p + ps.net.coord_index(j, d, m)) += te * -1.0;
        }
    }
    for (int d = 0; d < ps.dims; ++d)
      for (int m = 0; m < ps.mpa; ++m)
        C_expr.at(k * rows_k + nslots * ps.rows_per_slot() + d * ps.mpa + m,
                  k * p + ps.net.coord_index(ps.leader, d, m)) += AffineExpr(1.0);
  }
  ExprMatrix K_expr(ops.input_cols(), rows_k * (K + 1));
  if (lp.config.gain_mode != GainMode::Zero) {
    for (int l = 0; l <= ops.L; ++l) {
      int k_latest = 0;
      for (int k = 0; k <= K; ++k)
        if (lp.sampling.t_y(k) <= lp.sampling.t_u(l)) k_latest = k;
      for (int s = 0; s < nslots; ++s) {
        const auto [i, j] = ps.slots[static_cast<std::size_t>(s)];
        for (int d = 0; d < ps.dims; ++d)
          for (int m = 0; m < ps.mpa; ++m) {
            const int col = k_latest * rows_k + s * ps.rows_per_slot() + d * ps.mpa + m;
            AffineExpr gain;
            if (lp.config.gain_mode == GainMode::Fixed) {
              gain = AffineExpr(m == 0 ? lp.config.consensus_kp : lp.config.consensus_kd);
            } else {
              const int atom = lp.gain_atoms[static_cast<std::size_t>(k_latest)]
                                            [static_cast<std::size_t>(s)];
              if (atom < 0) continue;
              const double ratio =
                  m == 0 ? 1.0
                         : (lp.config.consensus_kp != 0.0
                                ? lp.config.consensus_kd / lp.config.consensus_kp
                                : 1.0);
              gain = AffineExpr::atom(atom, ratio);
            }
            K_expr.at(l * ops.q + i * ps.dims + d, col) += gain * -1.0;
            K_expr.at(l * ops.q + j * ps.dims + d, col) += gain;
          }
      }
      for (int d = 0; d < ps.dims; ++d)
        for (int m = 0; m < ps.mpa; ++m)
          K_expr.at(l * ops.q + ps.leader * ps.dims + d,
                    k_latest * rows_k + nslots * ps.rows_per_slot() + d * ps.mpa + m) +=
              AffineExpr(m == 0 ? -lp.config.consensus_kl : -lp.config.consensus_kd);
    }
  }

  // One decrease block per interval: the closed-loop one-step map
  // x_{k+1} = S_k x_k + B_{k,L} K C x_stack. The consensus gain structure
  // feeds interval k from measurement step k only, so the map is supported
  // on the x_k block and the decrease condition is a 2p x 2p LMI. Gains
  // with longer memory would put weight on zero-diagonal rows and render
  // the written form infeasible.
  const ExprMatrix KC = reg.multiply(K_expr, C_expr);
  for (int k = 0; k < K; ++k) {
    ExprMatrix A_cl = reg.multiply(
        ExprMatrix::constant(ops.B_rows[static_cast<std::size_t>(k)]), KC);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < pk; ++j) {
        if (j >= k * p && j < (k + 1) * p) continue;
        const AffineExpr& e = A_cl.at(i, j);
        if (e.constant != 0.0 || !e.coeffs.empty())
          throw std::logic_error(
              "add_stability_constraint: gain memory reaches outside the current "
              "sensing step; the one-step Lyapunov block does not apply");
      }

    const Eigen::MatrixXd Pk1_inv = P_seq[static_cast<std::size_t>(k + 1)].llt().solve(
        Eigen::MatrixXd::Identity(p, p));
    ExprMatrix blk(2 * p, 2 * p);
    const Eigen::MatrixXd& Pk = P_seq[static_cast<std::size_t>(k)];
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) blk.at(i, j) = AffineExpr(alpha * Pk(i, j));
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) {
        AffineExpr entry = A_cl.at(i, k * p + j);
        entry += AffineExpr(ops.S[static_cast<std::size_t>(k)](i, j));
        blk.at(p + i, j) = entry;
        blk.at(j, p + i) = entry;
      }
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) blk.at(p + i, p + j) = AffineExpr(Pk1_inv(i, j));
    emit_block(lp.sdp, blk);
  }
  lp.sdp.validate();
}

// ---------------------------------------------------------------------------
// Evaluation and search.

namespace {
std::atomic<int> g_parallel_jobs{1};
}  // namespace

void set_parallel_jobs(int jobs) { g_parallel_jobs.store(std::max(1, jobs)); }
int parallel_jobs() { return g_parallel_jobs.load(); }

ScheduleEvaluation evaluate_schedule(const model::SystemModel& sys,
                                     const model::SamplingConfig& sampling,
                                     const std::vector<model::Topology>& schedule,
                                     const SwitchConfig& config) {
  const auto ops = discretize::assemble_stacked(sys, sampling, schedule);
  ScheduleEvaluation out;
  out.report = metrics::compute_all(ops);
  out.report.q_rob_scale = config.q_rob_scale;

  switch (config.gain_mode) {
    case GainMode::Zero:
      out.j_rob_closed = config.q_rob_scale * out.report.j_rob.raw;
      break;
    case GainMode::Fixed: {
      if (!sys.network.has_value())
        throw std::invalid_argument("evaluate_schedule: fixed gains need network structure");
      const auto gains = feedback::consensus_output_gain(
          *sys.network, schedule, sampling, ops, config.consensus_kp, config.consensus_kl,
          config.consensus_kd);
      out.j_rob_closed = config.q_rob_scale * feedback::closed_loop_robustness(ops, gains);
      break;
    }
    case GainMode::Joint: {
      // Best gains for this fixed schedule: the lifted problem with singleton
      // menus is convex in the gain atoms.
      model::TopologySet wrapped;
      wrapped.density_cap = 1.0;
      for (const auto& topo : schedule) wrapped.steps.push_back({topo});
      const LiftedProblem sub = build_lifted_problem(sys, sampling, wrapped, config);
      const ShorSolution sol = solve_shor(sub);
      out.j_rob_closed = sol.gamma;
      break;
    }
  }
  out.feasible = out.report.j_con.raw >= config.thresholds.c_c &&
                 out.report.j_obs.raw >= config.thresholds.c_o &&
                 out.report.j_sen.raw >= config.thresholds.c_s;
  return out;
}

SwitchResult brute_force_select(const model::SystemModel& sys,
                                const model::SamplingConfig& sampling,
                                const model::TopologySet& topology_set,
                                const SwitchConfig& config) {
  const int K = sampling.sensing_steps();
  if (static_cast<int>(topology_set.steps.size()) != K + 1)
    throw std::invalid_argument("brute_force_select: topology set must cover K+1 steps");

  std::int64_t total = 1;
  for (const auto& step : topology_set.steps) {
    if (step.empty()) throw InfeasibleError("brute_force_select: empty admissible set");
    total *= static_cast<std::int64_t>(step.size());
    if (total > config.sequence_cap)
      throw std::invalid_argument("brute_force_select: sequence count exceeds cap");
  }

  const auto decode = [&](std::int64_t seq) {
    std::int64_t rem = seq;
    std::pair<std::vector<int>, std::vector<model::Topology>> out;
    for (int k = 0; k <= K; ++k) {
      const auto& menu = topology_set.at_step(k);
      out.first.push_back(static_cast<int>(rem % menu.size()));
      rem /= static_cast<std::int64_t>(menu.size());
      out.second.push_back(menu[static_cast<std::size_t>(out.first.back())]);
    }
    return out;
  };

  // Parallel evaluation over sequences; the argmin reduction runs serially
  // in enumeration order so ties break lexicographically no matter the
  // worker count.
  std::vector<double> values(static_cast<std::size_t>(total),
                             std::numeric_limits<double>::infinity());
  const int workers = std::max(1, std::min<int>(parallel_jobs(),
                                                static_cast<int>(total)));
  std::atomic<std::int64_t> cursor{0};
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::string error_message;
  std::mutex error_mutex;
  const auto work = [&]() {
    for (;;) {
      const std::int64_t seq = cursor.fetch_add(1);
      if (seq >= total || failed.load()) return;
      try {
        const auto [idx, schedule] = decode(seq);
        const ScheduleEvaluation eval = evaluate_schedule(sys, sampling, schedule, config);
        if (eval.feasible) values[static_cast<std::size_t>(seq)] = eval.j_rob_closed;
      } catch (const std::exception& e) {
        std::scoped_lock lock(error_mutex);
        failed.store(true);
        error_message = e.what();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw NumericalError("brute_force_select: " + error_message);

  std::int64_t best_seq = -1;
  for (std::int64_t seq = 0; seq < total; ++seq)
    if (best_seq < 0 ||
        values[static_cast<std::size_t>(seq)] <
            values[static_cast<std::size_t>(best_seq)] - 1e-12)
      best_seq = values[static_cast<std::size_t>(seq)] < 1e300 ? seq : best_seq;
  if (best_seq < 0 || values[static_cast<std::size_t>(best_seq)] > 1e300)
    throw InfeasibleError("brute_force_select: no feasible sequence");

  const auto [idx, schedule] = decode(best_seq);
  const ScheduleEvaluation eval = evaluate_schedule(sys, sampling, schedule, config);
  SwitchResult result;
  result.chosen_indices = idx;
  result.chosen = schedule;
  result.achieved = eval.report;
  result.j_rob_closed = eval.j_rob_closed;
  result.method = "brute_force";
  return result;
}

ShorSolution solve_shor(const LiftedProblem& problem) {
  ShorSolution out;
  out.sdp = sdp::solve(problem.sdp);
  if (out.sdp.status == sdp::SolveStatus::Infeasible)
    throw InfeasibleError("solve_shor: relaxation infeasible (thresholds unsatisfiable)");
  if (out.sdp.status != sdp::SolveStatus::Optimal) {
    // Degenerate liftings can floor the interior-point method early; a
    // near-feasible iterate with a small gap is still useful, flagged as
    // uncertified.
    const bool usable = out.sdp.x.size() == problem.sdp.num_vars &&
                        out.sdp.max_violation <= 1e-6 &&
                        out.sdp.duality_gap <= 1e-4 * (1.0 + std::abs(out.sdp.objective));
    if (!usable)
      throw NumericalError("solve_shor: solver returned " +
                           sdp::status_name(out.sdp.status) + " (" + out.sdp.message + ")");
    out.certified = false;
  }
  out.gamma = out.sdp.x(problem.gamma_atom);
  out.atom_values = out.sdp.x;
  return out;
}

namespace {

/// Per-step menu indices ordered by Hamming distance on the slot
/// indicators; ties resolve to the lower menu index.
std::vector<std::vector<int>> rank_patterns(const LiftedProblem& lp,
                                            const Eigen::VectorXd& atoms) {
  std::vector<std::vector<int>> order(static_cast<std::size_t>(lp.steps));
  for (int k = 0; k < lp.steps; ++k) {
    const auto& menu = lp.topology_set.at_step(k);
    std::vector<std::pair<double, int>> scored;
    for (int m = 0; m < static_cast<int>(menu.size()); ++m) {
      double dist = 0.0;
      for (int s = 0; s < static_cast<int>(lp.slots.size()); ++s) {
        const auto [i, j] = lp.slots[static_cast<std::size_t>(s)];
        const double pattern = menu[static_cast<std::size_t>(m)].adjacency(i, j) != 0 ? 1.0 : 0.0;
        const int atom = lp.theta_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
        const double value =
            atom >= 0 ? atoms(atom)
                      : lp.theta_fixed[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
        dist += std::abs(value - pattern);
      }
      scored.emplace_back(dist, m);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first - 1e-12; });
    for (const auto& [dist, m] : scored) order[static_cast<std::size_t>(k)].push_back(m);
  }
  return order;
}

std::vector<int> snap_schedule(const LiftedProblem& lp, const Eigen::VectorXd& atoms) {
  std::vector<int> chosen;
  for (const auto& order : rank_patterns(lp, atoms)) chosen.push_back(order.front());
  return chosen;
}

}  // namespace

SwitchResult solve_rank_iteration(const LiftedProblem& problem) {
  const ShorSolution shor = solve_shor(problem);

  sdp::SdpProblem penalized = problem.sdp;
  Eigen::VectorXd atoms = shor.atom_values;
  bool converged = false;
  int rounds = 0;
  double weight = 0.05 * std::max(1.0, std::abs(shor.gamma));

  // Every round's snapped sequence is certified exactly; the best feasible
  // candidate wins even if the iteration itself wanders.
  std::set<std::vector<int>> seen;
  std::optional<std::pair<std::vector<int>, ScheduleEvaluation>> best_candidate;
  const auto consider_idx = [&](const std::vector<int>& idx) {
    if (!seen.insert(idx).second) return;
    std::vector<model::Topology> schedule;
    for (int k = 0; k < problem.steps; ++k)
      schedule.push_back(problem.topology_set.at_step(k)[static_cast<std::size_t>(
          idx[static_cast<std::size_t>(k)])]);
    const ScheduleEvaluation eval =
        evaluate_schedule(problem.system, problem.sampling, schedule, problem.config);
    if (!eval.feasible) return;
    if (!best_candidate || eval.j_rob_closed < best_candidate->second.j_rob_closed)
      best_candidate = {idx, eval};
  };
  // Rounding explores the two nearest admissible patterns per step; the
  // certified best over all rounds wins.
  const auto consider = [&](const Eigen::VectorXd& atom_values) {
    const auto order = rank_patterns(problem, atom_values);
    std::vector<std::vector<int>> frontier{{}};
    for (int k = 0; k < problem.steps; ++k) {
      std::vector<std::vector<int>> next;
      const int take = std::min<int>(2, static_cast<int>(order[static_cast<std::size_t>(k)].size()));
      for (const auto& prefix : frontier)
        for (int t = 0; t < take; ++t) {
          std::vector<int> ext = prefix;
          ext.push_back(order[static_cast<std::size_t>(k)][static_cast<std::size_t>(t)]);
          next.push_back(std::move(ext));
        }
      frontier = std::move(next);
    }
    for (const auto& idx : frontier) consider_idx(idx);
  };
  consider(atoms);

  for (int round = 0; round < problem.config.max_rounds; ++round) {
    // Rank-1 test on every bordered lifting block.
    bool all_rank1 = true;
    std::vector<Eigen::MatrixXd> trailing;
    for (const auto& lift : problem.registry.liftings()) {
      const auto& blk = problem.sdp.blocks[static_cast<std::size_t>(lift.block_index)];
      const Eigen::MatrixXd value = blk.eval(atoms);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(value);
      const int n = static_cast<int>(value.rows());
      const double lam1 = es.eigenvalues()(n - 1);
      const double lam2 = n > 1 ? es.eigenvalues()(n - 2) : 0.0;
      if (lam2 > problem.config.rank_tol * std::max(lam1, 1e-300)) all_rank1 = false;
      // Projector onto the trailing eigenspace.
      const Eigen::MatrixXd v1 = es.eigenvectors().col(n - 1);
      trailing.push_back(Eigen::MatrixXd::Identity(n, n) - v1 * v1.transpose());
    }
    rounds = round;
    if (all_rank1) {
      converged = true;
      break;
    }

    // Penalize mass outside the leading eigenvector: trace(W X~) is linear
    // in the atoms.
    penalized.c = problem.sdp.c;
    for (std::size_t li = 0; li < problem.registry.liftings().size(); ++li) {
      const auto& lift = problem.registry.liftings()[li];
      const auto& blk = problem.sdp.blocks[static_cast<std::size_t>(lift.block_index)];
      const Eigen::MatrixXd& W = trailing[li];
      for (int i = 0; i < problem.sdp.num_vars; ++i) {
        const Eigen::MatrixXd& Fi = blk.coeff(i + 1);
        if (Fi.size() > 0) penalized.c(i) += weight * (W.array() * Fi.array()).sum();
      }
    }
    const auto sol = sdp::solve(penalized);
    const bool usable =
        sol.status == sdp::SolveStatus::Optimal ||
        (sol.x.size() == problem.sdp.num_vars && sol.max_violation <= 1e-6);
    if (!usable) break;
    atoms = sol.x;
    consider(atoms);
    weight *= 1.6;
  }

  if (!best_candidate)
    throw InfeasibleError("solve_rank_iteration: no feasible snapped sequence found");

  // Re-projection polish: single-step swaps around the best snapped
  // candidate until no admissible replacement improves the certified value.
  for (int pass = 0; pass < 8; ++pass) {
    const std::vector<int> current = best_candidate->first;
    bool improved = false;
    for (int k = 0; k < problem.steps && !improved; ++k) {
      const auto& menu = problem.topology_set.at_step(k);
      for (int m = 0; m < static_cast<int>(menu.size()); ++m) {
        if (m == current[static_cast<std::size_t>(k)]) continue;
        std::vector<int> idx = current;
        idx[static_cast<std::size_t>(k)] = m;
        const double before = best_candidate->second.j_rob_closed;
        consider_idx(idx);
        if (best_candidate->second.j_rob_closed < before - 1e-12) {
          improved = true;
          break;
        }
      }
    }
    if (!improved) break;
  }
  const std::vector<int>& chosen_idx = best_candidate->first;
  std::vector<model::Topology> schedule;
  for (int k = 0; k < problem.steps; ++k)
    schedule.push_back(problem.topology_set.at_step(k)[static_cast<std::size_t>(
        chosen_idx[static_cast<std::size_t>(k)])]);
  const ScheduleEvaluation& eval = best_candidate->second;

  SwitchResult result;
  result.chosen_indices = chosen_idx;
  result.chosen = schedule;
  result.achieved = eval.report;
  result.j_rob_closed = eval.j_rob_closed;
  result.method = "rank_iter";
  result.gamma_relaxed = shor.gamma;
  result.relaxation_certified = shor.certified;
  result.relaxation_gap = eval.j_rob_closed - shor.gamma;
  result.rank_converged = converged;
  result.rounds = rounds;
  if (problem.config.gain_mode == GainMode::Joint) {
    for (int k = 0; k < problem.steps; ++k)
      for (int s = 0; s < static_cast<int>(problem.slots.size()); ++s) {
        const int atom =
            problem.gain_atoms[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
        if (atom >= 0) result.gain_values.push_back(atoms(atom));
      }
  }
  return result;
}

std::string SwitchResult::to_json() const {
  nlohmann::ordered_json doc;
  doc["method"] = method;
  doc["chosen_indices"] = chosen_indices;
  nlohmann::ordered_json adjacency = nlohmann::ordered_json::array();
  for (const auto& topo : chosen) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int i = 0; i < topo.adjacency.rows(); ++i) {
      std::vector<int> row(static_cast<std::size_t>(topo.adjacency.cols()));
      for (int j = 0; j < topo.adjacency.cols(); ++j) row[static_cast<std::size_t>(j)] = topo.adjacency(i, j);
      rows.push_back(row);
    }
    adjacency.push_back(rows);
  }
  doc["schedule"] = adjacency;
  doc["j_con"] = achieved.j_con.value;
  doc["j_obs"] = achieved.j_obs.value;
  doc["j_rob"] = achieved.j_rob.value;
  doc["j_sen"] = achieved.j_sen.value;
  doc["j_rob_closed"] = j_rob_closed;
  doc["gamma_relaxed"] = gamma_relaxed;
  doc["relaxation_certified"] = relaxation_certified;
  doc["relaxation_gap"] = relaxation_gap;
  doc["rank_converged"] = rank_converged;
  doc["rounds"] = rounds;
  if (!gain_values.empty()) doc["gains"] = gain_values;
  return doc.dump(2);
}

}  // namespace zdaguard::switching
