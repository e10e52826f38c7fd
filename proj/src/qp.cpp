#include "lmpc/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <vector>

#include "lmpc/errors.hpp"

namespace lmpc {

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::MaxIter: return "max_iter";
  }
  return "unknown";
}

namespace {

constexpr int kRuizIterations = 10;
constexpr double kScalingMin = 1e-4;
constexpr double kScalingMax = 1e4;
constexpr double kRhoEqFactor = 1e3;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoChangeThreshold = 5.0;
// Eigenvalue-based PSD validation is skipped above this size; the Cholesky
// factorization of the regularized system still rejects indefinite data.
constexpr Eigen::Index kPsdCheckMaxDim = 512;

double clampScale(double v) { return std::clamp(v, kScalingMin, kScalingMax); }

}  // namespace

struct QpSolver::Impl {
  SolverSettings opts;
  bool ready = false;

  Eigen::Index d = 0;   // decision variables
  Eigen::Index me = 0;  // equality rows (leading block of C)
  Eigen::Index m = 0;   // total constraint rows

  // Unscaled problem data. C stacks [A_eq; A_in]; l/u stack [b_eq; lo/hi].
  Eigen::MatrixXd H, C;
  Eigen::VectorXd f, l, u;

  // Ruiz equilibration: variables scaled by dscale, rows by escale, cost by
  // cost_scale. Scaled iterates are kept between solves for warm starting.
  Eigen::VectorXd dscale, escale;
  double cost_scale = 1.0;
  Eigen::MatrixXd Hs, Cs;
  Eigen::VectorXd fs, ls, us;

  double rho_bar = 0.1;
  Eigen::VectorXd rho, rho_inv;
  std::vector<bool> row_is_eq;
  std::vector<std::vector<Eigen::Index>> row_support;

  Eigen::MatrixXd M;  // Hs + sigma I + Cs' diag(rho) Cs, lower triangle valid
  Eigen::LLT<Eigen::MatrixXd> llt;

  // Scaled iterate.
  Eigen::VectorXd z, s, y;
  bool have_warm = false;

  // Workspace.
  Eigen::VectorXd rhs, zt, st, s_hat, work_m, z_u, y_u, s_u, y_u_prev;

  void setup(const QpProblem& qp);
  void computeScaling();
  void buildRho();
  void factorize();
  QpSolution solve();

  struct Residuals {
    double rp = kInf, rd = kInf;
    double rp_rel = kInf, rd_rel = kInf;
  };
  Residuals computeResiduals();
  bool detectInfeasible(const Eigen::VectorXd& dy) const;
  enum class Act : unsigned char { None, Lower, Upper, Equality };
  struct WorkingSetSolve {
    bool usable = false;       // consistent equality solve
    Eigen::VectorXd z;         // full-space primal candidate
    Eigen::VectorXd y;         // full-space row duals (working rows only)
    Eigen::MatrixXd kernel;    // full-space primal null directions (columns)
  };
  WorkingSetSolve solveWorkingSet(const std::vector<Act>& act) const;
  bool tryPolish(QpSolution& out) const;
  double objectiveOf(const Eigen::VectorXd& zz) const {
    return 0.5 * zz.dot(H.selfadjointView<Eigen::Lower>() * zz) + f.dot(zz);
  }
};

void QpSolver::Impl::setup(const QpProblem& qp) {
  d = qp.num_vars();
  me = qp.num_eq();
  const Eigen::Index mi = qp.num_in();
  m = me + mi;
  if (d < 1) throw ConfigError("qp: problem has no decision variables");
  if (qp.H.rows() != d || qp.H.cols() != d) throw ConfigError("qp: H must be d x d");
  if (me > 0 && (qp.A_eq.rows() != me || qp.A_eq.cols() != d))
    throw ConfigError("qp: A_eq/b_eq dimensions inconsistent");
  if (mi > 0 && (qp.A_in.rows() != mi || qp.A_in.cols() != d || qp.hi.size() != mi))
    throw ConfigError("qp: A_in/lo/hi dimensions inconsistent");

  const double h_norm = qp.H.size() > 0 ? qp.H.cwiseAbs().maxCoeff() : 0.0;
  if ((qp.H - qp.H.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, h_norm))
    throw ConfigError("qp: H must be symmetric");
  if (d <= kPsdCheckMaxDim && h_norm > 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qp.H, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-9 * h_norm)
      throw ConfigError("qp: H must be positive semidefinite");
  }
  for (Eigen::Index i = 0; i < mi; ++i) {
    if (qp.lo[i] > qp.hi[i]) throw ConfigError("qp: lo must not exceed hi");
  }
  if (me > 0 && !qp.b_eq.allFinite()) throw ConfigError("qp: b_eq must be finite");

  H = 0.5 * (qp.H + qp.H.transpose());
  f = qp.f;
  C.resize(m, d);
  l.resize(m);
  u.resize(m);
  if (me > 0) {
    C.topRows(me) = qp.A_eq;
    l.head(me) = qp.b_eq;
    u.head(me) = qp.b_eq;
  }
  if (mi > 0) {
    C.bottomRows(mi) = qp.A_in;
    l.tail(mi) = qp.lo;
    u.tail(mi) = qp.hi;
  }

  row_is_eq.assign(static_cast<std::size_t>(m), false);
  for (Eigen::Index r = 0; r < m; ++r)
    row_is_eq[static_cast<std::size_t>(r)] = std::isfinite(l[r]) && l[r] == u[r];

  row_support.assign(static_cast<std::size_t>(m), {});
  for (Eigen::Index r = 0; r < m; ++r) {
    auto& sup = row_support[static_cast<std::size_t>(r)];
    for (Eigen::Index j = 0; j < d; ++j)
      if (C(r, j) != 0.0) sup.push_back(j);
  }

  computeScaling();
  rho_bar = opts.rho;
  buildRho();
  factorize();

  z = Eigen::VectorXd::Zero(d);
  s = Eigen::VectorXd::Zero(m).cwiseMax(ls).cwiseMin(us);
  y = Eigen::VectorXd::Zero(m);
  have_warm = false;

  rhs.resize(d);
  zt.resize(d);
  st.resize(m);
  s_hat.resize(m);
  work_m.resize(m);
  z_u.resize(d);
  y_u.resize(m);
  s_u.resize(m);
  y_u_prev = Eigen::VectorXd::Zero(m);
  ready = true;
}

void QpSolver::Impl::computeScaling() {
  dscale = Eigen::VectorXd::Ones(d);
  escale = Eigen::VectorXd::Ones(m);
  cost_scale = 1.0;
  Hs = H;
  fs = f;
  Cs = C;
  ls = l;
  us = u;

  Eigen::VectorXd dk(d), ek(m);
  for (int it = 0; it < kRuizIterations; ++it) {
    for (Eigen::Index j = 0; j < d; ++j) {
      double norm = Hs.col(j).cwiseAbs().maxCoeff();
      if (m > 0) norm = std::max(norm, Cs.col(j).cwiseAbs().maxCoeff());
      dk[j] = norm > 0.0 ? clampScale(1.0 / std::sqrt(norm)) : 1.0;
    }
    for (Eigen::Index r = 0; r < m; ++r) {
      const double norm = Cs.row(r).cwiseAbs().maxCoeff();
      ek[r] = norm > 0.0 ? clampScale(1.0 / std::sqrt(norm)) : 1.0;
    }
    Hs = dk.asDiagonal() * Hs * dk.asDiagonal();
    fs = fs.cwiseProduct(dk);
    if (m > 0) {
      Cs = ek.asDiagonal() * Cs * dk.asDiagonal();
      ls = ls.cwiseProduct(ek);
      us = us.cwiseProduct(ek);
    }
    dscale = dscale.cwiseProduct(dk);
    escale = escale.cwiseProduct(ek);
  }

  double col_mean = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) col_mean += Hs.col(j).cwiseAbs().maxCoeff();
  col_mean /= static_cast<double>(d);
  const double denom = std::max({col_mean, fs.size() > 0 ? fs.cwiseAbs().maxCoeff() : 0.0, 1e-8});
  cost_scale = clampScale(1.0 / denom);
  Hs *= cost_scale;
  fs *= cost_scale;
}

void QpSolver::Impl::buildRho() {
  rho.resize(m);
  rho_inv.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double v = row_is_eq[static_cast<std::size_t>(r)] ? kRhoEqFactor * rho_bar : rho_bar;
    rho[r] = v;
    rho_inv[r] = 1.0 / v;
  }
}

void QpSolver::Impl::factorize() {
  M = Hs;
  M.diagonal().array() += opts.sigma;
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto& sup = row_support[static_cast<std::size_t>(r)];
    if (sup.empty()) continue;
    if (static_cast<Eigen::Index>(sup.size()) > d / 4) {
      M.selfadjointView<Eigen::Lower>().rankUpdate(Cs.row(r).transpose(), rho[r]);
    } else {
      for (std::size_t a = 0; a < sup.size(); ++a) {
        const double va = Cs(r, sup[a]);
        for (std::size_t b = 0; b <= a; ++b) {
          const Eigen::Index i = std::max(sup[a], sup[b]);
          const Eigen::Index j = std::min(sup[a], sup[b]);
          M(i, j) += rho[r] * va * Cs(r, sup[b]);
        }
      }
    }
  }
  llt.compute(M);
  if (llt.info() != Eigen::Success)
    throw ConfigError("qp: failed to factor the reduced system; H is not positive semidefinite");
}

QpSolver::Impl::Residuals QpSolver::Impl::computeResiduals() {
  Residuals res;
  z_u = dscale.cwiseProduct(z);
  y_u = escale.cwiseProduct(y) / cost_scale;
  s_u = s.cwiseQuotient(escale);

  double rp = 0.0, cz_norm = 0.0, s_norm = 0.0;
  if (m > 0) {
    work_m.noalias() = C * z_u;
    for (Eigen::Index r = 0; r < m; ++r) {
      const double v = work_m[r];
      double viol = 0.0;
      if (v < l[r]) viol = l[r] - v;
      if (v > u[r]) viol = std::max(viol, v - u[r]);
      rp = std::max(rp, viol);
      cz_norm = std::max(cz_norm, std::abs(v));
      s_norm = std::max(s_norm, std::abs(s_u[r]));
    }
  }
  Eigen::VectorXd hz = H.selfadjointView<Eigen::Lower>() * z_u;
  Eigen::VectorXd cty = m > 0 ? Eigen::VectorXd(C.transpose() * y_u) : Eigen::VectorXd::Zero(d);
  const double rd = (hz + f + cty).cwiseAbs().maxCoeff();

  res.rp = rp;
  res.rd = rd;
  res.rp_rel = rp / std::max({1.0, cz_norm, s_norm});
  res.rd_rel = rd / std::max({1.0, hz.cwiseAbs().maxCoeff(), cty.cwiseAbs().maxCoeff(),
                              f.size() > 0 ? f.cwiseAbs().maxCoeff() : 0.0});
  return res;
}

bool QpSolver::Impl::detectInfeasible(const Eigen::VectorXd& dy) const {
  const double norm_dy = dy.cwiseAbs().maxCoeff();
  if (!(norm_dy > 1e-12)) return false;
  const double tol = opts.eps_infeasible * norm_dy;
  if ((C.transpose() * dy).cwiseAbs().maxCoeff() > tol) return false;
  double support = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    const double pos = std::max(dy[r], 0.0);
    const double neg = std::min(dy[r], 0.0);
    if (pos > 0.0) {
      if (!std::isfinite(u[r])) {
        if (pos > tol) return false;
      } else {
        support += u[r] * pos;
      }
    }
    if (neg < 0.0) {
      if (!std::isfinite(l[r])) {
        if (-neg > tol) return false;
      } else {
        support += l[r] * neg;
      }
    }
  }
  return support < -tol;
}

QpSolution QpSolver::Impl::solve() {
  if (!ready) throw ConfigError("qp: solve() called before setup()");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&t0]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  QpSolution out;
  out.status = SolveStatus::MaxIter;

  int polish_failures = 0;
  int next_polish_iter = 0;
  int next_rho_iter = 4 * opts.check_interval;
  y_u_prev = escale.cwiseProduct(y) / cost_scale;

  int iter = 0;
  while (iter < opts.max_iterations) {
    const int burst = std::min(opts.check_interval, opts.max_iterations - iter);
    for (int k = 0; k < burst; ++k) {
      work_m = rho.cwiseProduct(s) - y;
      rhs = opts.sigma * z - fs;
      if (m > 0) rhs.noalias() += Cs.transpose() * work_m;
      zt = llt.solve(rhs);
      if (m > 0) st.noalias() = Cs * zt;
      z = opts.alpha * zt + (1.0 - opts.alpha) * z;
      if (m > 0) {
        s_hat = opts.alpha * st + (1.0 - opts.alpha) * s;
        work_m = s_hat + rho_inv.cwiseProduct(y);
        work_m = work_m.cwiseMax(ls).cwiseMin(us);
        y += rho.cwiseProduct(s_hat - work_m);
        s = work_m;
      }
    }
    iter += burst;

    Residuals res = computeResiduals();
    out.iterations = iter;
    out.primal_residual = res.rp;
    out.dual_residual = res.rd;

    // Converged outright: polish to tighten further, then return.
    if (res.rp <= opts.eps_primal && res.rd <= opts.eps_dual) {
      out.status = SolveStatus::Optimal;
      QpSolution polished = out;
      if (opts.polish && tryPolish(polished)) {
        polished.iterations = iter;
        polished.solve_time = elapsed();
        return polished;
      }
      out.z = z_u;
      out.dual = y_u;
      out.objective = objectiveOf(z_u);
      out.solve_time = elapsed();
      return out;
    }

    // Close enough for the active set to be plausible: try to finish early.
    // Certification is absolute, so a premature attempt can only cost time;
    // back off exponentially after failures.
    if (opts.polish && iter >= next_polish_iter && res.rp_rel < opts.polish_trigger &&
        res.rd_rel < opts.polish_trigger) {
      QpSolution polished = out;
      if (tryPolish(polished)) {
        polished.status = SolveStatus::Optimal;
        polished.iterations = iter;
        polished.solve_time = elapsed();
        return polished;
      }
      ++polish_failures;
      next_polish_iter =
          iter + opts.check_interval * std::min(1 << std::min(polish_failures, 6), 64);
    }

    if (m > 0 && detectInfeasible(y_u - y_u_prev)) {
      out.status = SolveStatus::Infeasible;
      const Eigen::VectorXd dy = y_u - y_u_prev;
      out.z = z_u;
      out.dual = dy / dy.cwiseAbs().maxCoeff();
      out.objective = objectiveOf(z_u);
      out.solve_time = elapsed();
      return out;
    }
    y_u_prev = y_u;

    if (opts.adaptive_rho && iter >= next_rho_iter && m > 0) {
      next_rho_iter = iter + 4 * opts.check_interval;
      const double num = std::max(res.rp_rel, 1e-16);
      const double den = std::max(res.rd_rel, 1e-16);
      const double proposed = std::clamp(rho_bar * std::sqrt(num / den), kRhoMin, kRhoMax);
      const double ratio = proposed / rho_bar;
      if (ratio > kRhoChangeThreshold || ratio < 1.0 / kRhoChangeThreshold) {
        rho_bar = proposed;
        buildRho();
        factorize();
      }
    }
  }

  Residuals res = computeResiduals();
  out.iterations = iter;
  out.primal_residual = res.rp;
  out.dual_residual = res.rd;
  out.z = z_u;
  out.dual = y_u;
  out.objective = objectiveOf(z_u);
  out.solve_time = elapsed();
  return out;
}

// Equality-constrained solve on a working set: singleton rows pin their
// variable, the rest form the equality block of a reduced KKT system. A
// regularized LU with refinement handles the well-conditioned case; a
// symmetric eigendecomposition takes over when the system is singular,
// returning the primal null directions for the ray search.
QpSolver::Impl::WorkingSetSolve QpSolver::Impl::solveWorkingSet(
    const std::vector<Act>& act) const {
  WorkingSetSolve result;

  std::vector<double> fixed_value(static_cast<std::size_t>(d), 0.0);
  std::vector<bool> is_fixed(static_cast<std::size_t>(d), false);
  std::vector<Eigen::Index> owner_row(static_cast<std::size_t>(d), -1);
  std::vector<Eigen::Index> eq_rows;
  for (Eigen::Index r = 0; r < m; ++r) {
    const Act a = act[static_cast<std::size_t>(r)];
    if (a == Act::None) continue;
    const double bound = (a == Act::Upper) ? u[r] : l[r];
    const auto& sup = row_support[static_cast<std::size_t>(r)];
    if (sup.empty()) continue;
    if (sup.size() == 1) {
      const Eigen::Index v = sup[0];
      const double val = bound / C(r, v);
      if (is_fixed[static_cast<std::size_t>(v)]) {
        if (std::abs(val - fixed_value[static_cast<std::size_t>(v)]) >
            1e-9 * std::max(1.0, std::abs(val)))
          return result;  // contradictory pins
      } else {
        is_fixed[static_cast<std::size_t>(v)] = true;
        fixed_value[static_cast<std::size_t>(v)] = val;
        owner_row[static_cast<std::size_t>(v)] = r;
      }
    } else {
      eq_rows.push_back(r);
    }
  }

  std::vector<Eigen::Index> free_idx;
  free_idx.reserve(static_cast<std::size_t>(d));
  for (Eigen::Index v = 0; v < d; ++v)
    if (!is_fixed[static_cast<std::size_t>(v)]) free_idx.push_back(v);
  const Eigen::Index nf = static_cast<Eigen::Index>(free_idx.size());
  const Eigen::Index nc = static_cast<Eigen::Index>(eq_rows.size());
  const Eigen::Index dim = nf + nc;
  if (dim > 2000) return result;  // polish not worth it at this size

  Eigen::VectorXd z_pol(d);
  for (Eigen::Index v = 0; v < d; ++v)
    z_pol[v] = is_fixed[static_cast<std::size_t>(v)] ? fixed_value[static_cast<std::size_t>(v)]
                                                     : 0.0;

  Eigen::VectorXd w;
  Eigen::MatrixXd kernel_small;
  if (dim > 0) {
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index a = 0; a < nf; ++a)
      for (Eigen::Index b = 0; b < nf; ++b) K(a, b) = H(free_idx[a], free_idx[b]);
    for (Eigen::Index rI = 0; rI < nc; ++rI)
      for (Eigen::Index a = 0; a < nf; ++a) {
        K(nf + rI, a) = C(eq_rows[rI], free_idx[a]);
        K(a, nf + rI) = K(nf + rI, a);
      }

    Eigen::VectorXd rhs(dim);
    for (Eigen::Index a = 0; a < nf; ++a) {
      double v = -f[free_idx[a]];
      for (Eigen::Index q = 0; q < d; ++q)
        if (is_fixed[static_cast<std::size_t>(q)])
          v -= H(free_idx[a], q) * fixed_value[static_cast<std::size_t>(q)];
      rhs[a] = v;
    }
    for (Eigen::Index rI = 0; rI < nc; ++rI) {
      const Eigen::Index r = eq_rows[rI];
      double bound = (act[static_cast<std::size_t>(r)] == Act::Upper) ? u[r] : l[r];
      for (Eigen::Index q = 0; q < d; ++q)
        if (is_fixed[static_cast<std::size_t>(q)])
          bound -= C(r, q) * fixed_value[static_cast<std::size_t>(q)];
      rhs[nf + rI] = bound;
    }

    const double k_scale = std::max(1.0, K.cwiseAbs().maxCoeff());
    const double resid_tol = 1e-11 * std::max(1.0, rhs.cwiseAbs().maxCoeff());

    // Fast path: regularized LU plus refinement.
    Eigen::MatrixXd K_reg = K;
    K_reg.diagonal().head(nf).array() += 1e-10 * k_scale;
    K_reg.diagonal().tail(nc).array() -= 1e-10 * k_scale;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K_reg);
    w = lu.solve(rhs);
    for (int it = 0; it < opts.polish_refine_steps; ++it) {
      const Eigen::VectorXd resid = rhs - K * w;
      if (resid.cwiseAbs().maxCoeff() <= resid_tol) break;
      w += lu.solve(resid);
    }

    if (!w.allFinite() || (rhs - K * w).cwiseAbs().maxCoeff() > resid_tol) {
      // Singular or inconsistent: pseudo-solve via eigendecomposition and
      // report the primal part of the null space.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
      if (es.info() != Eigen::Success) return result;
      const Eigen::VectorXd& evals = es.eigenvalues();
      const Eigen::MatrixXd& evecs = es.eigenvectors();
      const double eig_tol = 1e-11 * std::max(1.0, evals.cwiseAbs().maxCoeff());
      const Eigen::VectorXd proj = evecs.transpose() * rhs;
      w = Eigen::VectorXd::Zero(dim);
      Eigen::Index null_count = 0;
      for (Eigen::Index i = 0; i < dim; ++i) {
        if (std::abs(evals[i]) > eig_tol)
          w += proj[i] / evals[i] * evecs.col(i);
        else
          ++null_count;
      }
      if ((rhs - K * w).cwiseAbs().maxCoeff() > resid_tol) {
        // Inconsistent working set; hand back descent directions.
        kernel_small.resize(dim, null_count);
        Eigen::Index c = 0;
        for (Eigen::Index i = 0; i < dim; ++i)
          if (std::abs(evals[i]) <= eig_tol) kernel_small.col(c++) = evecs.col(i);
        result.kernel = Eigen::MatrixXd::Zero(d, null_count);
        for (Eigen::Index k = 0; k < null_count; ++k)
          for (Eigen::Index a = 0; a < nf; ++a)
            result.kernel(free_idx[a], k) = kernel_small(a, k);
        return result;
      }
    }
    for (Eigen::Index a = 0; a < nf; ++a) z_pol[free_idx[a]] = w[a];
  }

  Eigen::VectorXd y_pol = Eigen::VectorXd::Zero(m);
  for (Eigen::Index rI = 0; rI < nc; ++rI) y_pol[eq_rows[rI]] = w[nf + rI];

  // Duals of the pinned rows from stationarity.
  Eigen::VectorXd grad = H.selfadjointView<Eigen::Lower>() * z_pol + f;
  if (m > 0) grad.noalias() += C.transpose() * y_pol;
  for (Eigen::Index v = 0; v < d; ++v) {
    if (owner_row[static_cast<std::size_t>(v)] >= 0) {
      const Eigen::Index r = owner_row[static_cast<std::size_t>(v)];
      y_pol[r] = -grad[v] / C(r, v);
    }
  }

  result.usable = true;
  result.z = std::move(z_pol);
  result.y = std::move(y_pol);
  return result;
}

// Active-set finisher. Starting from the splitting iterate's active-set
// guess, alternates equality solves with ratio-tested additions and
// wrong-sign drops until a point certifies at the requested tolerances.
// Degenerate faces (multipliers spread over nearly-optimal vertices) are
// resolved by walking the null-space rays until a bound blocks.
bool QpSolver::Impl::tryPolish(QpSolution& out) const {
  const Eigen::VectorXd z_start = dscale.cwiseProduct(z);
  const Eigen::VectorXd y_start = escale.cwiseProduct(y) / cost_scale;

  std::vector<Act> act(static_cast<std::size_t>(m), Act::None);
  Eigen::VectorXd cz = m > 0 ? Eigen::VectorXd(C * z_start) : Eigen::VectorXd();
  for (Eigen::Index r = 0; r < m; ++r) {
    if (row_is_eq[static_cast<std::size_t>(r)]) {
      act[static_cast<std::size_t>(r)] = Act::Equality;
      continue;
    }
    const bool lo_near = std::isfinite(l[r]) && (cz[r] - l[r] < 1e-8);
    const bool hi_near = std::isfinite(u[r]) && (u[r] - cz[r] < 1e-8);
    if (y_start[r] < -1e-12 || (lo_near && !hi_near))
      act[static_cast<std::size_t>(r)] = Act::Lower;
    else if (y_start[r] > 1e-12 || (hi_near && !lo_near))
      act[static_cast<std::size_t>(r)] = Act::Upper;
    else if (lo_near && hi_near)
      act[static_cast<std::size_t>(r)] = (cz[r] - l[r] <= u[r] - cz[r]) ? Act::Lower : Act::Upper;
  }

  Eigen::VectorXd z_cur = z_start;
  const int max_pivots = 100 + static_cast<int>(m) / 2;

  for (int pivot = 0; pivot < max_pivots; ++pivot) {
    const WorkingSetSolve sub = solveWorkingSet(act);

    if (!sub.usable) {
      if (sub.kernel.cols() == 0) return false;
      // Pick the steepest descent ray through the current face.
      const Eigen::VectorXd grad = H.selfadjointView<Eigen::Lower>() * z_cur + f;
      Eigen::Index best = -1;
      double best_rate = 0.0;
      for (Eigen::Index k = 0; k < sub.kernel.cols(); ++k) {
        const double rate = grad.dot(sub.kernel.col(k));
        if (std::abs(rate) > std::abs(best_rate)) {
          best_rate = rate;
          best = k;
        }
      }
      if (best < 0 || std::abs(best_rate) <= 1e-13 * std::max(1.0, grad.cwiseAbs().maxCoeff()))
        return false;
      const Eigen::VectorXd p = best_rate > 0 ? Eigen::VectorXd(-sub.kernel.col(best))
                                              : Eigen::VectorXd(sub.kernel.col(best));
      const Eigen::VectorXd cp = C * p;
      cz = C * z_cur;
      double alpha = kInf;
      Eigen::Index blocker = -1;
      Act side = Act::None;
      for (Eigen::Index r = 0; r < m; ++r) {
        if (act[static_cast<std::size_t>(r)] != Act::None) continue;
        if (cp[r] > 1e-12 && std::isfinite(u[r])) {
          const double a = std::max(0.0, (u[r] - cz[r]) / cp[r]);
          if (a < alpha) {
            alpha = a;
            blocker = r;
            side = Act::Upper;
          }
        } else if (cp[r] < -1e-12 && std::isfinite(l[r])) {
          const double a = std::max(0.0, (l[r] - cz[r]) / cp[r]);
          if (a < alpha) {
            alpha = a;
            blocker = r;
            side = Act::Lower;
          }
        }
      }
      if (blocker < 0) return false;  // unbounded ray
      z_cur += alpha * p;
      act[static_cast<std::size_t>(blocker)] = side;
      continue;
    }

    // Consistent candidate: walk toward it until a bound blocks.
    const Eigen::VectorXd cz_star = m > 0 ? Eigen::VectorXd(C * sub.z) : Eigen::VectorXd();
    cz = m > 0 ? Eigen::VectorXd(C * z_cur) : Eigen::VectorXd();
    double alpha = 1.0;
    Eigen::Index blocker = -1;
    Act side = Act::None;
    for (Eigen::Index r = 0; r < m; ++r) {
      if (act[static_cast<std::size_t>(r)] != Act::None) continue;
      if (std::isfinite(u[r]) && cz_star[r] > u[r] + 1e-9) {
        const double denom = cz_star[r] - cz[r];
        const double a = denom > 1e-15 ? std::clamp((u[r] - cz[r]) / denom, 0.0, 1.0) : 0.0;
        if (a < alpha) {
          alpha = a;
          blocker = r;
          side = Act::Upper;
        }
      } else if (std::isfinite(l[r]) && cz_star[r] < l[r] - 1e-9) {
        const double denom = cz_star[r] - cz[r];
        const double a = denom < -1e-15 ? std::clamp((l[r] - cz[r]) / denom, 0.0, 1.0) : 0.0;
        if (a < alpha) {
          alpha = a;
          blocker = r;
          side = Act::Lower;
        }
      }
    }
    if (blocker >= 0) {
      z_cur += alpha * (sub.z - z_cur);
      act[static_cast<std::size_t>(blocker)] = side;
      continue;
    }

    // Feasible: enforce dual feasibility, dropping the lowest-index row whose
    // multiplier has the wrong sign beyond tolerance.
    Eigen::VectorXd y_pol = sub.y;
    const double drop_tol = 0.1 * opts.eps_dual;
    Eigen::Index drop = -1;
    for (Eigen::Index r = 0; r < m; ++r) {
      const Act a = act[static_cast<std::size_t>(r)];
      if (a == Act::Lower && y_pol[r] > drop_tol) drop = r;
      if (a == Act::Upper && y_pol[r] < -drop_tol) drop = r;
      if (drop >= 0) break;
    }
    if (drop >= 0) {
      act[static_cast<std::size_t>(drop)] = Act::None;
      z_cur = sub.z;
      continue;
    }
    for (Eigen::Index r = 0; r < m; ++r) {
      const Act a = act[static_cast<std::size_t>(r)];
      if (a == Act::Lower && y_pol[r] > 0.0) y_pol[r] = 0.0;
      if (a == Act::Upper && y_pol[r] < 0.0) y_pol[r] = 0.0;
    }

    double rp = 0.0;
    for (Eigen::Index r = 0; r < m; ++r) {
      double viol = 0.0;
      if (cz_star[r] < l[r]) viol = l[r] - cz_star[r];
      if (cz_star[r] > u[r]) viol = std::max(viol, cz_star[r] - u[r]);
      rp = std::max(rp, viol);
    }
    Eigen::VectorXd stat = H.selfadjointView<Eigen::Lower>() * sub.z + f;
    if (m > 0) stat.noalias() += C.transpose() * y_pol;
    const double rd = stat.cwiseAbs().maxCoeff();
    if (rp > opts.eps_primal || rd > opts.eps_dual) return false;

    out.z = sub.z;
    out.dual = y_pol;
    out.primal_residual = rp;
    out.dual_residual = rd;
    out.objective = objectiveOf(sub.z);
    out.status = SolveStatus::Optimal;
    out.polished = true;
    return true;
  }
  return false;
}

QpSolver::QpSolver(SolverSettings settings) : impl_(std::make_unique<Impl>()) {
  impl_->opts = settings;
}
QpSolver::~QpSolver() = default;
QpSolver::QpSolver(QpSolver&&) noexcept = default;
QpSolver& QpSolver::operator=(QpSolver&&) noexcept = default;

void QpSolver::setup(const QpProblem& qp) { impl_->setup(qp); }

bool QpSolver::is_setup() const { return impl_->ready; }

void QpSolver::update_equality_rhs(const Eigen::Ref<const Eigen::VectorXd>& b_eq) {
  if (!impl_->ready) throw ConfigError("qp: update before setup()");
  if (b_eq.size() != impl_->me) throw ConfigError("qp: b_eq length changed");
  impl_->l.head(impl_->me) = b_eq;
  impl_->u.head(impl_->me) = b_eq;
  impl_->ls.head(impl_->me) = impl_->escale.head(impl_->me).cwiseProduct(b_eq);
  impl_->us.head(impl_->me) = impl_->ls.head(impl_->me);
}

void QpSolver::update_linear_cost(const Eigen::Ref<const Eigen::VectorXd>& f) {
  if (!impl_->ready) throw ConfigError("qp: update before setup()");
  if (f.size() != impl_->d) throw ConfigError("qp: f length changed");
  impl_->f = f;
  impl_->fs = impl_->cost_scale * impl_->dscale.cwiseProduct(f);
}

void QpSolver::warm_start(const Eigen::Ref<const Eigen::VectorXd>& z,
                          const Eigen::Ref<const Eigen::VectorXd>& dual) {
  if (!impl_->ready) throw ConfigError("qp: warm_start before setup()");
  if (z.size() != impl_->d || dual.size() != impl_->m)
    throw ConfigError("qp: warm_start dimension mismatch");
  impl_->z = z.cwiseQuotient(impl_->dscale);
  impl_->y = impl_->cost_scale * dual.cwiseQuotient(impl_->escale);
  if (impl_->m > 0) {
    impl_->s = (impl_->Cs * impl_->z).cwiseMax(impl_->ls).cwiseMin(impl_->us);
  }
  impl_->have_warm = true;
}

QpSolution QpSolver::solve() { return impl_->solve(); }

const SolverSettings& QpSolver::settings() const { return impl_->opts; }

QpSolution solve(const QpProblem& qp, const SolverSettings& settings) {
  QpSolver solver(settings);
  solver.setup(qp);
  return solver.solve();
}

QpSolution solve_lp(const Eigen::VectorXd& c, const Eigen::MatrixXd& A_eq,
                    const Eigen::VectorXd& b_eq, const Eigen::MatrixXd& A_in,
                    const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                    const SolverSettings& settings) {
  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(c.size(), c.size());
  qp.f = c;
  qp.A_eq = A_eq;
  qp.b_eq = b_eq;
  qp.A_in = A_in;
  qp.lo = lo;
  qp.hi = hi;
  return solve(qp, settings);
}

}  // namespace lmpc
