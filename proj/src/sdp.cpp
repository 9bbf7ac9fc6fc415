#include "zdaguard/sdp.hpp"

#include <cmath>
#include <sstream>

namespace zdaguard::sdp {

namespace {

const Eigen::MatrixXd& zero_of(int dim) {
  static std::vector<Eigen::MatrixXd> cache;
  if (dim >= static_cast<int>(cache.size())) cache.resize(dim + 1);
  auto& z = cache[static_cast<std::size_t>(dim)];
  if (z.rows() != dim) z = Eigen::MatrixXd::Zero(dim, dim);
  return z;
}

constexpr double kSqrt2 = 1.4142135623730951;

int svec_len(int n) { return n * (n + 1) / 2; }

/// Symmetric vectorization with off-diagonals scaled by sqrt(2), so the
/// packed inner product equals the trace inner product.
void svec(const Eigen::MatrixXd& M, Eigen::Ref<Eigen::VectorXd> out) {
  int idx = 0;
  const int n = static_cast<int>(M.rows());
  for (int j = 0; j < n; ++j) {
    out(idx++) = M(j, j);
    for (int i = j + 1; i < n; ++i) out(idx++) = kSqrt2 * M(i, j);
  }
}


struct BlockState {
  int n = 0;
  Eigen::MatrixXd S;      // slack
  Eigen::MatrixXd Z;      // dual
  Eigen::MatrixXd R;      // NT scaling factor
  Eigen::MatrixXd R_inv;
  Eigen::VectorXd lambda;      // scaled point, diagonal
  Eigen::MatrixXd lambda_inv;  // (R R^T)^{-1}
};

Eigen::MatrixXd chol_lower(const Eigen::MatrixXd& M, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string("sdp: Cholesky breakdown in ") + what);
  return llt.matrixL();
}

/// NT scaling: R with R^T Z R = R^{-1} S R^{-T} = diag(lambda).
void compute_scaling(BlockState& blk) {
  const Eigen::MatrixXd Ls = chol_lower(blk.S, "NT scaling (S)");
  const Eigen::MatrixXd Lz = chol_lower(blk.Z, "NT scaling (Z)");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Lz.transpose() * Ls,
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd sigma = svd.singularValues();
  if (sigma.minCoeff() <= 0)
    throw NumericalError("sdp: NT scaling lost positive definiteness");
  const Eigen::VectorXd rsqrt = sigma.cwiseSqrt().cwiseInverse();
  blk.R = Ls * svd.matrixV() * rsqrt.asDiagonal();
  blk.R_inv = rsqrt.asDiagonal() * svd.matrixU().transpose() * Lz.transpose();
  blk.lambda = sigma;
  const Eigen::MatrixXd RRt_inv = blk.R_inv.transpose() * blk.R_inv;  // (R R^T)^{-1}
  blk.lambda_inv = RRt_inv;
}

/// min eigenvalue of the scaled step, for the largest feasible step length.
double min_step_eig(const BlockState& blk, const Eigen::MatrixXd& delta, bool slack_side) {
  // slack side: S + a dS >= 0 iff I + a * Linv dS Linv^T >= 0 with
  // S = R Lam R^T; use the scaled form Lam^{-1/2} R^{-1} dS R^{-T} Lam^{-1/2}.
  const Eigen::VectorXd lam_rsqrt = blk.lambda.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd scaled;
  if (slack_side)
    scaled = lam_rsqrt.asDiagonal() * (blk.R_inv * delta * blk.R_inv.transpose()) *
             lam_rsqrt.asDiagonal();
  else
    scaled = lam_rsqrt.asDiagonal() *
             (blk.R.transpose() * delta * blk.R) * lam_rsqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (scaled + scaled.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

const Eigen::MatrixXd& ConstraintBlock::coeff(int i) const {
  if (i < static_cast<int>(mats.size())) return mats[static_cast<std::size_t>(i)];
  return zero_of(dim);
}

Eigen::MatrixXd ConstraintBlock::eval(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd out = coeff(0);
  for (int i = 0; i < x.size(); ++i) {
    if (i + 1 >= static_cast<int>(mats.size())) break;
    const Eigen::MatrixXd& Fi = mats[static_cast<std::size_t>(i + 1)];
    if (Fi.size() > 0) out += x(i) * Fi;
  }
  return out;
}

void SdpProblem::validate() const {
  if (num_vars < 0) throw std::invalid_argument("sdp: negative variable count");
  if (c.size() != num_vars) throw std::invalid_argument("sdp: objective length != num_vars");
  for (const auto& blk : blocks) {
    if (blk.dim <= 0) throw std::invalid_argument("sdp: empty constraint block");
    if (static_cast<int>(blk.mats.size()) > num_vars + 1)
      throw std::invalid_argument("sdp: block has more coefficient matrices than variables");
    for (const auto& F : blk.mats) {
      if (F.size() == 0) continue;
      if (F.rows() != blk.dim || F.cols() != blk.dim)
        throw std::invalid_argument("sdp: coefficient matrix dimension mismatch");
      if ((F - F.transpose()).cwiseAbs().maxCoeff() >
          1e-10 * std::max(1.0, F.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("sdp: coefficient matrix not symmetric");
    }
  }
  if (G_eq.rows() != h_eq.size())
    throw std::invalid_argument("sdp: equality rows mismatch rhs");
  if (G_eq.rows() > 0 && G_eq.cols() != num_vars)
    throw std::invalid_argument("sdp: equality columns != num_vars");
}

double SdpProblem::violation(const Eigen::VectorXd& x) const {
  double worst = 0.0;
  for (const auto& blk : blocks) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(blk.eval(x), Eigen::EigenvaluesOnly);
    worst = std::max(worst, -es.eigenvalues().minCoeff());
  }
  if (G_eq.rows() > 0)
    worst = std::max(worst, (G_eq * x - h_eq).cwiseAbs().maxCoeff());
  return worst;
}

std::string status_name(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::MaxIter: return "max_iter";
  }
  return "unknown";
}

SdpSolution solve(const SdpProblem& problem, const SolveOptions& opts) {
  problem.validate();

  // Presolve block scaling: dividing a block's coefficient matrices by a
  // positive constant leaves the feasible set unchanged but balances the
  // embedding, which is worth two digits of achievable residual here.
  {
    bool needs_scaling = false;
    for (const auto& blk : problem.blocks) {
      double scale = 0.0;
      for (const auto& F : blk.mats)
        if (F.size() > 0) scale = std::max(scale, F.cwiseAbs().maxCoeff());
      if (scale > 4.0 || (scale > 0 && scale < 0.25)) needs_scaling = true;
    }
    if (needs_scaling) {
      SdpProblem scaled = problem;
      for (auto& blk : scaled.blocks) {
        double scale = 0.0;
        for (const auto& F : blk.mats)
          if (F.size() > 0) scale = std::max(scale, F.cwiseAbs().maxCoeff());
        if (scale <= 0) continue;
        for (auto& F : blk.mats)
          if (F.size() > 0) F /= scale;
      }
      SdpSolution sol = solve_scaled(scaled, opts);
      // Violation is reported against the original data.
      if (sol.x.size() == problem.num_vars)
        sol.max_violation = problem.violation(sol.x);
      return sol;
    }
  }
  return solve_scaled(problem, opts);
}

SdpSolution solve_scaled(const SdpProblem& problem, const SolveOptions& opts) {
  const int m = problem.num_vars;
  const int pe = static_cast<int>(problem.G_eq.rows());
  const int nblocks = static_cast<int>(problem.blocks.size());
  if (nblocks == 0) throw std::invalid_argument("sdp: no constraint blocks");

  // Cone order: sum of block dims; the tau/kappa pair adds one more in the
  // centrality measure.
  double nu = 0.0;
  for (const auto& blk : problem.blocks) nu += blk.dim;

  // svec layout of the full cone.
  std::vector<int> offsets(static_cast<std::size_t>(nblocks));
  int total = 0;
  for (int j = 0; j < nblocks; ++j) {
    offsets[static_cast<std::size_t>(j)] = total;
    total += svec_len(problem.blocks[static_cast<std::size_t>(j)].dim);
  }

  // h = svec(F_0); columns of G are -svec(F_i).
  Eigen::VectorXd h(total);
  Eigen::MatrixXd G(total, m);
  for (int j = 0; j < nblocks; ++j) {
    const auto& blk = problem.blocks[static_cast<std::size_t>(j)];
    const int off = offsets[static_cast<std::size_t>(j)];
    const int len = svec_len(blk.dim);
    svec(blk.coeff(0), h.segment(off, len));
    for (int i = 0; i < m; ++i) {
      const Eigen::MatrixXd& Fi = blk.coeff(i + 1);
      if (Fi.size() == 0) {
        G.block(off, i, len, 1).setZero();
      } else {
        Eigen::VectorXd col(len);
        svec(Fi, col);
        G.block(off, i, len, 1) = -col;
      }
    }
  }
  const Eigen::MatrixXd& A = problem.G_eq;
  const Eigen::VectorXd& b = problem.h_eq;
  const Eigen::VectorXd& c = problem.c;

  // Iterates.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(pe);
  std::vector<BlockState> blks(static_cast<std::size_t>(nblocks));
  for (int j = 0; j < nblocks; ++j) {
    auto& blk = blks[static_cast<std::size_t>(j)];
    blk.n = problem.blocks[static_cast<std::size_t>(j)].dim;
    blk.S = Eigen::MatrixXd::Identity(blk.n, blk.n);
    blk.Z = Eigen::MatrixXd::Identity(blk.n, blk.n);
  }
  double tau = 1.0, kappa = 1.0;

  SdpSolution sol;
  sol.x = x;

  // Best iterate seen, for graceful exit at the numerical floor.
  struct Snapshot {
    bool valid = false;
    Eigen::VectorXd x;
    double pres = 1e300, dres = 1e300, gap = 1e300, pcost = 0.0;
  } best;
  // The optimal-status contract: duality gap within 1e-7 * (1 + |objective|)
  // and constraint violation within 1e-7, checked on the actual candidate.
  auto finalize_best = [&](const char* reason) {
    const double viol = best.valid ? problem.violation(best.x) : 1e300;
    if (best.valid && std::abs(best.gap) <= 1e-7 * (1.0 + std::abs(best.pcost)) &&
        viol <= 1e-7 && best.dres <= 1e-6) {
      sol.status = SolveStatus::Optimal;
      sol.x = best.x;
      sol.objective = best.pcost;
      sol.duality_gap = std::abs(best.gap);
      sol.max_violation = viol;
      sol.message = std::string("terminated at numerical floor (") + reason + ")";
    } else {
      sol.status = SolveStatus::MaxIter;
      sol.x = best.valid ? best.x : Eigen::VectorXd(x / tau);
      sol.objective = c.dot(sol.x);
      sol.duality_gap = best.valid ? std::abs(best.gap) : 0.0;
      sol.max_violation = problem.violation(sol.x);
      sol.message = std::string("no certified solution (") + reason + ")";
    }
    return sol;
  };

  auto gt_apply = [&](const std::vector<Eigen::MatrixXd>& Zs) {
    // G^T z with z the svec of the given matrices.
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
    for (int j = 0; j < nblocks; ++j) {
      const auto& blk = problem.blocks[static_cast<std::size_t>(j)];
      for (int i = 0; i < m; ++i) {
        const Eigen::MatrixXd& Fi = blk.coeff(i + 1);
        if (Fi.size() > 0)
          out(i) -= (Fi.array() * Zs[static_cast<std::size_t>(j)].array()).sum();
      }
    }
    return out;
  };
  auto g_apply = [&](const Eigen::VectorXd& xv) {
    // G x as per-block matrices: -(sum_i x_i F_i).
    std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(nblocks));
    for (int j = 0; j < nblocks; ++j) {
      const auto& blk = problem.blocks[static_cast<std::size_t>(j)];
      Eigen::MatrixXd M = Eigen::MatrixXd::Zero(blk.dim, blk.dim);
      for (int i = 0; i < m; ++i) {
        const Eigen::MatrixXd& Fi = blk.coeff(i + 1);
        if (Fi.size() > 0) M -= xv(i) * Fi;
      }
      out[static_cast<std::size_t>(j)] = std::move(M);
    }
    return out;
  };
  std::vector<Eigen::MatrixXd> F0(static_cast<std::size_t>(nblocks));
  for (int j = 0; j < nblocks; ++j)
    F0[static_cast<std::size_t>(j)] = problem.blocks[static_cast<std::size_t>(j)].coeff(0);

  const double norm_c = std::max(1.0, c.norm());
  const double norm_h = std::max(1.0, h.norm());
  const double norm_b = std::max(1.0, b.size() > 0 ? b.norm() : 0.0);

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    // Residuals of the self-dual embedding.
    Eigen::VectorXd gtz;
    {
      std::vector<Eigen::MatrixXd> Zs(static_cast<std::size_t>(nblocks));
      for (int j = 0; j < nblocks; ++j) Zs[static_cast<std::size_t>(j)] = blks[static_cast<std::size_t>(j)].Z;
      gtz = gt_apply(Zs);
      if (pe > 0) gtz += A.transpose() * y;
    }
    Eigen::VectorXd res_x = gtz + c * tau;
    Eigen::VectorXd res_y(pe);
    if (pe > 0) res_y = A * x - b * tau;
    std::vector<Eigen::MatrixXd> res_z = g_apply(x);
    double hz = 0.0, sz_gap = 0.0;
    for (int j = 0; j < nblocks; ++j) {
      auto& blk = blks[static_cast<std::size_t>(j)];
      res_z[static_cast<std::size_t>(j)] += blk.S - F0[static_cast<std::size_t>(j)] * tau;
      hz += (F0[static_cast<std::size_t>(j)].array() * blk.Z.array()).sum();
      sz_gap += (blk.S.array() * blk.Z.array()).sum();
    }
    const double by = pe > 0 ? b.dot(y) : 0.0;
    const double res_tau = kappa + c.dot(x) + by + hz;
    const double mu = (sz_gap + tau * kappa) / (nu + 1.0);

    double res_z_norm = 0.0;
    for (const auto& Mz : res_z) res_z_norm += Mz.squaredNorm();
    res_z_norm = std::sqrt(res_z_norm);

    // Convergence bookkeeping in original (tau-scaled) units.
    const double pcost = c.dot(x) / tau;
    const double dcost = -(by + hz) / tau;
    const double pres = std::max(pe > 0 ? res_y.norm() / (tau * norm_b) : 0.0,
                                 res_z_norm / (tau * norm_h));
    const double dres = res_x.norm() / (tau * norm_c);
    const double gap_abs = sz_gap / (tau * tau);
    const double rel_scale = std::max({1.0, std::abs(pcost), std::abs(dcost)});

    if (opts.record_trace) {
      std::ostringstream line;
      line.precision(3);
      line << "iter " << iter << " pcost " << pcost << " dcost " << dcost << " gap "
           << gap_abs << " pres " << pres << " dres " << dres << " tau " << tau
           << " kappa " << kappa;
      sol.trace.push_back(line.str());
    }

    if (!best.valid || (pres + dres <= best.pres + best.dres && gap_abs <= best.gap) ||
        (gap_abs >= 0 && gap_abs <= best.gap && pres <= 100 * opts.feas_tol &&
         dres <= 100 * opts.feas_tol)) {
      best.valid = true;
      best.x = x / tau;
      best.pres = pres;
      best.dres = dres;
      best.gap = gap_abs;
      best.pcost = pcost;
    }

    if (pres <= opts.feas_tol && dres <= opts.feas_tol &&
        gap_abs <= opts.gap_tol * rel_scale) {
      sol.status = SolveStatus::Optimal;
      sol.x = x / tau;
      sol.objective = pcost;
      sol.duality_gap = gap_abs;
      sol.iterations = iter;
      sol.max_violation = problem.violation(sol.x);
      return sol;
    }
    // Detect divergence past the numerical floor.
    if (best.valid && (gap_abs < 0 || pres > 1e3 * (best.pres + 1e-14)))
      return finalize_best("progress stalled");

    // Farkas-type certificates. (y, Z >= 0) with G^T z + A^T y ~ 0 and
    // b^T y + h^T z < 0 proves primal infeasibility; (x, S >= 0) with
    // G x + s ~ 0, A x ~ 0 and c^T x < 0 proves unboundedness. Both are
    // checked directly on the current iterate as tau decays.
    const double cert_scale = -(by + hz);
    if (cert_scale > 0 && gtz.norm() <= opts.infeas_tol * cert_scale) {
      sol.status = SolveStatus::Infeasible;
      sol.iterations = iter;
      sol.message = "primal infeasibility certificate found";
      return sol;
    }
    if (-c.dot(x) > 0) {
      // Gx + s evaluated without the tau*h shift.
      double ray_norm2 = 0.0;
      const std::vector<Eigen::MatrixXd> gx = g_apply(x);
      for (int j = 0; j < nblocks; ++j)
        ray_norm2 += (gx[static_cast<std::size_t>(j)] + blks[static_cast<std::size_t>(j)].S)
                         .squaredNorm();
      double ray = std::sqrt(ray_norm2);
      if (pe > 0) ray = std::max(ray, (A * x).norm());
      if (ray <= opts.infeas_tol * (-c.dot(x))) {
        sol.status = SolveStatus::Unbounded;
        sol.iterations = iter;
        sol.message = "dual infeasibility certificate found (objective unbounded below)";
        return sol;
      }
    }

    // NT scaling; a breakdown means S or Z hit the cone boundary at the
    // numerical floor.
    try {
      for (auto& blk : blks) compute_scaling(blk);
    } catch (const NumericalError&) {
      return finalize_best("scaling breakdown");
    }

    // Schur complement H = G^T (W^T W)^{-1} G, assembled per block as
    // H_ij += tr(F_i M F_j M) with M = (R R^T)^{-1}.
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < nblocks; ++j) {
      const auto& pb = problem.blocks[static_cast<std::size_t>(j)];
      const auto& blk = blks[static_cast<std::size_t>(j)];
      std::vector<Eigen::MatrixXd> Q(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        const Eigen::MatrixXd& Fi = pb.coeff(i + 1);
        if (Fi.size() > 0) Q[static_cast<std::size_t>(i)] = blk.lambda_inv * Fi * blk.lambda_inv;
      }
      for (int i = 0; i < m; ++i) {
        if (Q[static_cast<std::size_t>(i)].size() == 0) continue;
        for (int i2 = i; i2 < m; ++i2) {
          const Eigen::MatrixXd& F2 = pb.coeff(i2 + 1);
          if (F2.size() == 0) continue;
          const double v = (Q[static_cast<std::size_t>(i)].array() * F2.array()).sum();
          H(i, i2) += v;
          if (i2 != i) H(i2, i) += v;
        }
      }
    }
    // Mild static regularization keeps the factorization alive when columns
    // of G are nearly dependent.
    const double reg = 1e-13 * std::max(1.0, H.trace());
    H.diagonal().array() += reg;

    Eigen::LDLT<Eigen::MatrixXd> Hfact(H);
    if (Hfact.info() != Eigen::Success)
      throw NumericalError("sdp: Schur complement factorization failed");

    Eigen::MatrixXd AHiAt;
    Eigen::LDLT<Eigen::MatrixXd> Sfact;
    if (pe > 0) {
      AHiAt = A * Hfact.solve(A.transpose());
      AHiAt.diagonal().array() += reg;
      Sfact.compute(AHiAt);
      if (Sfact.info() != Eigen::Success)
        throw NumericalError("sdp: equality Schur factorization failed");
    }

    // KKT solve: rows [0 A^T G^T; A 0 0; G 0 -W^T W] (ux, uy, uz) = (rx, ry, rz)
    // with rz given per block as matrices.
    auto kkt_solve_once = [&](const Eigen::VectorXd& rx, const Eigen::VectorXd& ry,
                              const std::vector<Eigen::MatrixXd>& rz, Eigen::VectorXd& ux,
                              Eigen::VectorXd& uy, std::vector<Eigen::MatrixXd>& uz) {
      // Eliminate uz = (W^T W)^{-1} (G ux - rz).
      std::vector<Eigen::MatrixXd> Minv_rz(static_cast<std::size_t>(nblocks));
      Eigen::VectorXd rhs = rx;
      for (int j = 0; j < nblocks; ++j) {
        const auto& blk = blks[static_cast<std::size_t>(j)];
        Minv_rz[static_cast<std::size_t>(j)] =
            blk.lambda_inv * rz[static_cast<std::size_t>(j)] * blk.lambda_inv;
      }
      // rhs_x = rx + G^T (W^T W)^{-1} rz.
      rhs += gt_apply(Minv_rz);
      if (pe > 0) {
        // Saddle solve via the equality Schur complement.
        const Eigen::VectorXd Hi_rhs = Hfact.solve(rhs);
        uy = Sfact.solve(A * Hi_rhs - ry);
        ux = Hfact.solve(rhs - A.transpose() * uy);
      } else {
        uy.resize(0);
        ux = Hfact.solve(rhs);
      }
      const std::vector<Eigen::MatrixXd> Gux = g_apply(ux);
      uz.resize(static_cast<std::size_t>(nblocks));
      for (int j = 0; j < nblocks; ++j) {
        const auto& blk = blks[static_cast<std::size_t>(j)];
        uz[static_cast<std::size_t>(j)] =
            blk.lambda_inv *
            (Gux[static_cast<std::size_t>(j)] - rz[static_cast<std::size_t>(j)]) *
            blk.lambda_inv;
      }
    };

    // Elimination plus two rounds of iterative refinement; the reduced
    // Schur solve alone floors the achievable residuals too early.
    auto kkt_solve = [&](const Eigen::VectorXd& rx, const Eigen::VectorXd& ry,
                         const std::vector<Eigen::MatrixXd>& rz, Eigen::VectorXd& ux,
                         Eigen::VectorXd& uy, std::vector<Eigen::MatrixXd>& uz) {
      kkt_solve_once(rx, ry, rz, ux, uy, uz);
      for (int pass = 0; pass < 3; ++pass) {
        std::vector<Eigen::MatrixXd> Zs = uz;
        Eigen::VectorXd r1 = rx - gt_apply(Zs);
        if (pe > 0) r1 -= A.transpose() * uy;
        Eigen::VectorXd r2;
        if (pe > 0) r2 = ry - A * ux;
        const std::vector<Eigen::MatrixXd> Gux = g_apply(ux);
        std::vector<Eigen::MatrixXd> r3(static_cast<std::size_t>(nblocks));
        for (int j = 0; j < nblocks; ++j) {
          const auto& blk = blks[static_cast<std::size_t>(j)];
          const Eigen::MatrixXd wtw_uz =
              blk.R * (blk.R.transpose() * uz[static_cast<std::size_t>(j)] * blk.R) *
              blk.R.transpose();
          r3[static_cast<std::size_t>(j)] =
              rz[static_cast<std::size_t>(j)] - Gux[static_cast<std::size_t>(j)] + wtw_uz;
        }
        Eigen::VectorXd cx, cy;
        std::vector<Eigen::MatrixXd> cz;
        kkt_solve_once(r1, r2, r3, cx, cy, cz);
        ux += cx;
        if (pe > 0) uy += cy;
        for (int j = 0; j < nblocks; ++j)
          uz[static_cast<std::size_t>(j)] += cz[static_cast<std::size_t>(j)];
      }
    };

    // Constant-column solve used by every direction this iteration.
    Eigen::VectorXd vx, vy;
    std::vector<Eigen::MatrixXd> vz;
    {
      std::vector<Eigen::MatrixXd> hz_blocks(static_cast<std::size_t>(nblocks));
      for (int j = 0; j < nblocks; ++j)
        hz_blocks[static_cast<std::size_t>(j)] = F0[static_cast<std::size_t>(j)];
      kkt_solve(-c, b, hz_blocks, vx, vy, vz);
    }

    auto compute_direction = [&](const Eigen::VectorXd& dx, const Eigen::VectorXd& dy,
                                 const std::vector<Eigen::MatrixXd>& dz, double dtau_rhs,
                                 const std::vector<Eigen::MatrixXd>& ds_scaled,
                                 double dkappa_rhs, Eigen::VectorXd& Dx,
                                 Eigen::VectorXd& Dy, std::vector<Eigen::MatrixXd>& Dz,
                                 std::vector<Eigen::MatrixXd>& Ds, double& Dtau,
                                 double& Dkappa) {
      // ds_scaled is lambda o (W dz + W^{-T} ds) target; convert to
      // dz-equation correction: dhat_z = dz - W^T (lambda^{-1} o ds_scaled).
      std::vector<Eigen::MatrixXd> dhat_z(static_cast<std::size_t>(nblocks));
      std::vector<Eigen::MatrixXd> lam_inv_ds(static_cast<std::size_t>(nblocks));
      for (int j = 0; j < nblocks; ++j) {
        const auto& blk = blks[static_cast<std::size_t>(j)];
        const auto& Dsc = ds_scaled[static_cast<std::size_t>(j)];
        Eigen::MatrixXd tmp(blk.n, blk.n);
        for (int r = 0; r < blk.n; ++r)
          for (int col = 0; col < blk.n; ++col)
            tmp(r, col) = 2.0 * Dsc(r, col) / (blk.lambda(r) + blk.lambda(col));
        lam_inv_ds[static_cast<std::size_t>(j)] = tmp;
        dhat_z[static_cast<std::size_t>(j)] =
            dz[static_cast<std::size_t>(j)] - blk.R * tmp * blk.R.transpose();
      }
      Eigen::VectorXd ux, uy;
      std::vector<Eigen::MatrixXd> uz;
      kkt_solve(dx, dy, dhat_z, ux, uy, uz);

      const double denom = c.dot(vx) + (pe > 0 ? b.dot(vy) : 0.0) +
                           [&] {
                             double acc = 0.0;
                             for (int j = 0; j < nblocks; ++j)
                               acc += (F0[static_cast<std::size_t>(j)].array() *
                                       vz[static_cast<std::size_t>(j)].array())
                                          .sum();
                             return acc;
                           }() -
                           kappa / tau;
      double numer = dtau_rhs - dkappa_rhs / tau - c.dot(ux) - (pe > 0 ? b.dot(uy) : 0.0);
      for (int j = 0; j < nblocks; ++j)
        numer -= (F0[static_cast<std::size_t>(j)].array() *
                  uz[static_cast<std::size_t>(j)].array())
                     .sum();
      Dtau = numer / denom;

      Dx = ux + Dtau * vx;
      if (pe > 0) Dy = uy + Dtau * vy; else Dy.resize(0);
      Dz.resize(static_cast<std::size_t>(nblocks));
      Ds.resize(static_cast<std::size_t>(nblocks));
      for (int j = 0; j < nblocks; ++j) {
        const auto& blk = blks[static_cast<std::size_t>(j)];
        Dz[static_cast<std::size_t>(j)] = uz[static_cast<std::size_t>(j)] +
                                          Dtau * vz[static_cast<std::size_t>(j)];
        // Ds = W^T(lambda^{-1} o ds_scaled) - W^T W Dz.
        Ds[static_cast<std::size_t>(j)] =
            blk.R * lam_inv_ds[static_cast<std::size_t>(j)] * blk.R.transpose() -
            blk.R * (blk.R.transpose() * Dz[static_cast<std::size_t>(j)] * blk.R) *
                blk.R.transpose();
      }
      Dkappa = (dkappa_rhs - kappa * Dtau) / tau;
    };

    auto max_step = [&](const std::vector<Eigen::MatrixXd>& Ds,
                        const std::vector<Eigen::MatrixXd>& Dz, double Dtau,
                        double Dkappa) {
      double alpha = 1.0;
      for (int j = 0; j < nblocks; ++j) {
        const auto& blk = blks[static_cast<std::size_t>(j)];
        const double es = min_step_eig(blk, Ds[static_cast<std::size_t>(j)], true);
        const double ez = min_step_eig(blk, Dz[static_cast<std::size_t>(j)], false);
        if (es < 0) alpha = std::min(alpha, -1.0 / es);
        if (ez < 0) alpha = std::min(alpha, -1.0 / ez);
      }
      if (Dtau < 0) alpha = std::min(alpha, -tau / Dtau);
      if (Dkappa < 0) alpha = std::min(alpha, -kappa / Dkappa);
      return alpha;
    };

    // Affine direction.
    std::vector<Eigen::MatrixXd> ds_aff(static_cast<std::size_t>(nblocks));
    for (int j = 0; j < nblocks; ++j) {
      const auto& blk = blks[static_cast<std::size_t>(j)];
      ds_aff[static_cast<std::size_t>(j)] =
          Eigen::MatrixXd((-blk.lambda.cwiseProduct(blk.lambda)).asDiagonal());
    }
    std::vector<Eigen::MatrixXd> neg_res_z(static_cast<std::size_t>(nblocks));
    for (int j = 0; j < nblocks; ++j)
      neg_res_z[static_cast<std::size_t>(j)] = -res_z[static_cast<std::size_t>(j)];

    Eigen::VectorXd dx_a, dy_a;
    std::vector<Eigen::MatrixXd> dz_a, dS_a;
    double dtau_a = 0.0, dkap_a = 0.0;
    compute_direction(-res_x, pe > 0 ? Eigen::VectorXd(-res_y) : Eigen::VectorXd(),
                      neg_res_z, -res_tau, ds_aff, -tau * kappa, dx_a, dy_a, dz_a, dS_a,
                      dtau_a, dkap_a);
    const double alpha_aff = max_step(dS_a, dz_a, dtau_a, dkap_a);
    const double sigma = std::pow(1.0 - alpha_aff, 3);

    // Combined direction with Mehrotra correction.
    std::vector<Eigen::MatrixXd> ds_comb(static_cast<std::size_t>(nblocks));
    for (int j = 0; j < nblocks; ++j) {
      const auto& blk = blks[static_cast<std::size_t>(j)];
      const Eigen::MatrixXd Wdz = blk.R.transpose() * dz_a[static_cast<std::size_t>(j)] * blk.R;
      const Eigen::MatrixXd Wds =
          blk.R_inv * dS_a[static_cast<std::size_t>(j)] * blk.R_inv.transpose();
      const Eigen::MatrixXd corr = 0.5 * (Wdz * Wds + Wds * Wdz);
      ds_comb[static_cast<std::size_t>(j)] =
          Eigen::MatrixXd((-blk.lambda.cwiseProduct(blk.lambda)).asDiagonal()) +
          sigma * mu * Eigen::MatrixXd::Identity(blk.n, blk.n) - corr;
    }
    const double dkap_comb = -tau * kappa + sigma * mu - dtau_a * dkap_a;

    Eigen::VectorXd dx_c, dy_c;
    std::vector<Eigen::MatrixXd> dz_c, dS_c;
    double dtau_c = 0.0, dkap_c = 0.0;
    const double eta = 1.0 - sigma;
    Eigen::VectorXd rx_scaled = -eta * res_x;
    Eigen::VectorXd ry_scaled = pe > 0 ? Eigen::VectorXd(-eta * res_y) : Eigen::VectorXd();
    std::vector<Eigen::MatrixXd> rz_scaled(static_cast<std::size_t>(nblocks));
    for (int j = 0; j < nblocks; ++j)
      rz_scaled[static_cast<std::size_t>(j)] = -eta * res_z[static_cast<std::size_t>(j)];
    compute_direction(rx_scaled, ry_scaled, rz_scaled, -eta * res_tau, ds_comb, dkap_comb,
                      dx_c, dy_c, dz_c, dS_c, dtau_c, dkap_c);

    double alpha = 0.99 * max_step(dS_c, dz_c, dtau_c, dkap_c);
    alpha = std::min(alpha, 1.0);
    if (alpha < 1e-8) return finalize_best("step length collapsed");

    // The eigenvalue-based step bound loses digits on ill-conditioned
    // blocks; back off until the updated iterate is certifiably inside the
    // cone.
    const auto strictly_pd = [](const Eigen::MatrixXd& M) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()),
                                                        Eigen::EigenvaluesOnly);
      const double floor = 1e-14 * std::max(1.0, M.cwiseAbs().maxCoeff());
      return es.eigenvalues().minCoeff() > floor;
    };
    const auto step_stays_interior = [&](double a) {
      for (int j = 0; j < nblocks; ++j) {
        const auto& blk = blks[static_cast<std::size_t>(j)];
        if (!strictly_pd(blk.S + a * dS_c[static_cast<std::size_t>(j)]) ||
            !strictly_pd(blk.Z + a * dz_c[static_cast<std::size_t>(j)]))
          return false;
      }
      return tau + a * dtau_c > 0 && kappa + a * dkap_c > 0;
    };
    int backoffs = 0;
    while (!step_stays_interior(alpha) && backoffs < 30) {
      alpha *= 0.5;
      ++backoffs;
    }
    if (backoffs >= 30) return finalize_best("step length collapsed");

    x += alpha * dx_c;
    if (pe > 0) y += alpha * dy_c;
    for (int j = 0; j < nblocks; ++j) {
      auto& blk = blks[static_cast<std::size_t>(j)];
      blk.S += alpha * dS_c[static_cast<std::size_t>(j)];
      blk.Z += alpha * dz_c[static_cast<std::size_t>(j)];
      blk.S = 0.5 * (blk.S + blk.S.transpose());
      blk.Z = 0.5 * (blk.Z + blk.Z.transpose());
    }
    tau += alpha * dtau_c;
    kappa += alpha * dkap_c;
    sol.iterations = iter + 1;
  }

  return finalize_best("iteration limit reached");
}

// ---------------------------------------------------------------------------

std::string SdpProblem::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "sdp 1\n";
  out << "vars " << num_vars << "\n";
  out << "blocks";
  for (const auto& blk : blocks) out << ' ' << blk.dim;
  out << "\n";
  for (int i = 0; i < num_vars; ++i)
    if (c(i) != 0.0) out << "obj " << i + 1 << ' ' << c(i) << "\n";
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    const auto& blk = blocks[j];
    for (std::size_t v = 0; v < blk.mats.size(); ++v) {
      const auto& F = blk.mats[v];
      if (F.size() == 0) continue;
      for (int r = 0; r < F.rows(); ++r)
        for (int col = r; col < F.cols(); ++col)
          if (F(r, col) != 0.0)
            out << "mat " << v << ' ' << j + 1 << ' ' << r + 1 << ' ' << col + 1 << ' '
                << F(r, col) << "\n";
    }
  }
  for (int r = 0; r < G_eq.rows(); ++r) {
    for (int i = 0; i < num_vars; ++i)
      if (G_eq(r, i) != 0.0) out << "eq " << r + 1 << ' ' << i + 1 << ' ' << G_eq(r, i) << "\n";
    out << "eqrhs " << r + 1 << ' ' << h_eq(r) << "\n";
  }
  return out.str();
}

SdpProblem SdpProblem::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string tag;
  SdpProblem prob;
  int eq_rows = 0;
  std::vector<std::tuple<int, int, double>> eq_entries;
  std::vector<std::pair<int, double>> eq_rhs;
  while (in >> tag) {
    if (tag == "sdp") {
      int version;
      in >> version;
    } else if (tag == "vars") {
      in >> prob.num_vars;
      prob.c = Eigen::VectorXd::Zero(prob.num_vars);
    } else if (tag == "blocks") {
      std::string rest;
      std::getline(in, rest);
      std::istringstream line(rest);
      int dim;
      while (line >> dim) {
        ConstraintBlock blk;
        blk.dim = dim;
        prob.blocks.push_back(blk);
      }
    } else if (tag == "obj") {
      int i;
      double v;
      in >> i >> v;
      prob.c(i - 1) = v;
    } else if (tag == "mat") {
      int v, j, r, col;
      double value;
      in >> v >> j >> r >> col >> value;
      auto& blk = prob.blocks.at(static_cast<std::size_t>(j - 1));
      if (static_cast<int>(blk.mats.size()) <= v)
        blk.mats.resize(static_cast<std::size_t>(v + 1));
      auto& F = blk.mats[static_cast<std::size_t>(v)];
      if (F.size() == 0) F = Eigen::MatrixXd::Zero(blk.dim, blk.dim);
      F(r - 1, col - 1) = value;
      F(col - 1, r - 1) = value;
    } else if (tag == "eq") {
      int r, i;
      double v;
      in >> r >> i >> v;
      eq_rows = std::max(eq_rows, r);
      eq_entries.emplace_back(r - 1, i - 1, v);
    } else if (tag == "eqrhs") {
      int r;
      double v;
      in >> r >> v;
      eq_rows = std::max(eq_rows, r);
      eq_rhs.emplace_back(r - 1, v);
    } else {
      throw ConfigError("$", "unknown sdp text tag '" + tag + "'");
    }
  }
  prob.G_eq = Eigen::MatrixXd::Zero(eq_rows, prob.num_vars);
  prob.h_eq = Eigen::VectorXd::Zero(eq_rows);
  for (const auto& [r, i, v] : eq_entries) prob.G_eq(r, i) = v;
  for (const auto& [r, v] : eq_rhs) prob.h_eq(r) = v;
  prob.validate();
  return prob;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd schur_embedding_matrix(const discretize::StackedOperators& ops,
                                       const feedback::CausalGainStack& gains,
                                       const Eigen::MatrixXd& q_rob, double gamma) {
  const int n = ops.state_rows();
  if (q_rob.rows() != n || q_rob.cols() != n)
    throw std::invalid_argument("schur_embedding_matrix: q_rob has wrong dimensions");
  Eigen::LLT<Eigen::MatrixXd> llt(q_rob);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("schur_embedding_matrix: q_rob must be positive definite");
  const Eigen::MatrixXd Qinv = llt.solve(Eigen::MatrixXd::Identity(n, n));

  const Eigen::MatrixXd KC = gains.dense * ops.C_stack;  // q(L+1) x p(K+1)
  const Eigen::MatrixXd& B = ops.B_stack;
  const Eigen::MatrixXd E = ops.state_maps();
  const Eigen::MatrixXd F = B + Qinv * KC.transpose();
  const Eigen::MatrixXd Y = Qinv + B * B.transpose() + Qinv * KC.transpose() * KC * Qinv +
                            B * KC * Qinv * KC.transpose() * B.transpose();

  const int ecols = static_cast<int>(E.cols());
  const int fcols = static_cast<int>(F.cols());
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(n + ecols + fcols, n + ecols + fcols);
  block.topLeftCorner(n, n) = Y;
  block.block(0, n, n, ecols) = E;
  block.block(n, 0, ecols, n) = E.transpose();
  block.block(0, n + ecols, n, fcols) = F;
  block.block(n + ecols, 0, fcols, n) = F.transpose();
  block.block(n, n, ecols, ecols) = gamma * Eigen::MatrixXd::Identity(ecols, ecols);
  block.bottomRightCorner(fcols, fcols) = Eigen::MatrixXd::Identity(fcols, fcols);
  return block;
}

void append_schur_block(SdpProblem& problem, int gamma_var,
                        const discretize::StackedOperators& ops,
                        const feedback::CausalGainStack& gains,
                        const Eigen::MatrixXd& q_rob) {
  if (gamma_var < 0 || gamma_var >= problem.num_vars)
    throw std::invalid_argument("append_schur_block: gamma variable out of range");
  ConstraintBlock blk;
  Eigen::MatrixXd base = schur_embedding_matrix(ops, gains, q_rob, 0.0);
  blk.dim = static_cast<int>(base.rows());
  blk.mats.assign(static_cast<std::size_t>(gamma_var + 2), Eigen::MatrixXd());
  blk.mats[0] = base;
  Eigen::MatrixXd gpart = Eigen::MatrixXd::Zero(blk.dim, blk.dim);
  const int n = ops.state_rows();
  const int ecols = static_cast<int>(ops.state_maps().cols());
  gpart.block(n, n, ecols, ecols) = Eigen::MatrixXd::Identity(ecols, ecols);
  blk.mats[static_cast<std::size_t>(gamma_var + 1)] = gpart;
  problem.blocks.push_back(std::move(blk));
}

bool schur_block_feasible(const Eigen::MatrixXd& block, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (block + block.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, block.cwiseAbs().maxCoeff());
  return es.eigenvalues().minCoeff() >= -rel_tol * scale;
}

}  // namespace zdaguard::sdp
