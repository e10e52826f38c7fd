#include "lmpc/clqr.hpp"

#include <sstream>

#include "lmpc/errors.hpp"

namespace lmpc {

RiccatiSolution solve_riccati(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                              const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R, double tol,
                              int max_iterations) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || R.rows() != B.cols())
    throw ConfigError("riccati: dimension mismatch");

  auto recursion = [&](const Eigen::MatrixXd& P) {
    const Eigen::MatrixXd BtP = B.transpose() * P;
    const Eigen::MatrixXd G = R + BtP * B;
    const Eigen::MatrixXd K = G.llt().solve(BtP * A);
    return Eigen::MatrixXd(Q + A.transpose() * P * A - A.transpose() * P * B * K);
  };

  Eigen::MatrixXd P = Q;
  double residual = kInf;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::MatrixXd P_next = recursion(P);
    P_next = 0.5 * (P_next + P_next.transpose());
    residual = (P_next - P).norm();
    P = P_next;
    if (!P.allFinite() || P.norm() > 1e14)
      throw InfeasibleError(
          "riccati: iteration diverged; (A, B) does not appear to be stabilizable");
    if (residual <= tol) break;
  }
  // Residual against the defining equation at the final iterate.
  residual = (recursion(P) - P).norm();

  RiccatiSolution sol;
  sol.P = P;
  const Eigen::MatrixXd BtP = B.transpose() * P;
  sol.K = (R + BtP * B).llt().solve(BtP * A);
  sol.residual = residual;
  if (!(residual <= 1e-10)) {
    std::ostringstream oss;
    oss << "riccati: fixed-point iteration stalled at residual " << residual
        << "; (A, B) may not be stabilizable";
    throw InfeasibleError(oss.str());
  }
  return sol;
}

namespace {

// Long-horizon QP over u_0..u_{T-1}, x_1..x_T with terminal cost x_T' P x_T.
QpProblem build_oracle_qp(const TaskSpec& spec, int T, const Eigen::MatrixXd& P_tail) {
  const Eigen::Index n = spec.system.state_dim();
  const Eigen::Index m = spec.system.input_dim();
  const Eigen::Index d = m * T + n * T;
  auto u_off = [&](Eigen::Index k) { return m * k; };
  auto x_off = [&](Eigen::Index k) { return m * T + n * (k - 1); };

  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index k = 0; k < T; ++k)
    qp.H.block(u_off(k), u_off(k), m, m) = 2.0 * spec.cost.R;
  for (Eigen::Index k = 1; k < T; ++k)
    qp.H.block(x_off(k), x_off(k), n, n) = 2.0 * spec.cost.Q;
  qp.H.block(x_off(T), x_off(T), n, n) = 2.0 * P_tail;
  qp.f = Eigen::VectorXd::Zero(d);

  qp.A_eq = Eigen::MatrixXd::Zero(n * T, d);
  qp.b_eq = Eigen::VectorXd::Zero(n * T);
  qp.A_eq.block(0, x_off(1), n, n) = Eigen::MatrixXd::Identity(n, n);
  qp.A_eq.block(0, u_off(0), n, m) = -spec.system.B;
  qp.b_eq.head(n) = spec.system.A * spec.x_start;
  for (Eigen::Index k = 1; k < T; ++k) {
    qp.A_eq.block(n * k, x_off(k + 1), n, n) = Eigen::MatrixXd::Identity(n, n);
    qp.A_eq.block(n * k, x_off(k), n, n) = -spec.system.A;
    qp.A_eq.block(n * k, u_off(k), n, m) = -spec.system.B;
  }

  qp.A_in = Eigen::MatrixXd::Zero(n * T + m * T, d);
  qp.lo.resize(n * T + m * T);
  qp.hi.resize(n * T + m * T);
  Eigen::Index row = 0;
  for (Eigen::Index k = 1; k <= T; ++k) {
    qp.A_in.block(row, x_off(k), n, n) = Eigen::MatrixXd::Identity(n, n);
    qp.lo.segment(row, n) = spec.constraints.x_lo;
    qp.hi.segment(row, n) = spec.constraints.x_hi;
    row += n;
  }
  for (Eigen::Index k = 0; k < T; ++k) {
    qp.A_in.block(row, u_off(k), m, m) = Eigen::MatrixXd::Identity(m, m);
    qp.lo.segment(row, m) = spec.constraints.u_lo;
    qp.hi.segment(row, m) = spec.constraints.u_hi;
    row += m;
  }
  return qp;
}

bool certify_tail(const TaskSpec& spec, const RiccatiSolution& riccati,
                  const Eigen::VectorXd& x_tail) {
  Eigen::VectorXd x = x_tail;
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd u = -riccati.K * x;
    if (!in_constraints(spec.constraints, x, u)) return false;
    x = step(spec.system, x, u);
  }
  return true;
}

}  // namespace

OracleSolution solve_clqr(const TaskSpec& spec, int horizon, const SolverSettings& settings) {
  validate_task(spec);
  if (horizon < 50) throw ConfigError("oracle: horizon must be >= 50");

  const RiccatiSolution riccati =
      solve_riccati(spec.system.A, spec.system.B, spec.cost.Q, spec.cost.R);

  const Eigen::Index m = spec.system.input_dim();
  int T = horizon;
  for (int attempt = 0;; ++attempt) {
    const QpProblem qp = build_oracle_qp(spec, T, riccati.P);
    const QpSolution sol = solve(qp, settings);
    if (sol.status != SolveStatus::Optimal) {
      std::ostringstream oss;
      oss << "oracle: long-horizon QP returned '" << to_string(sol.status) << "' at T = " << T;
      throw InfeasibleError(oss.str());
    }

    OracleSolution oracle;
    oracle.horizon = T;
    oracle.states.reserve(static_cast<std::size_t>(T) + 1);
    oracle.inputs.reserve(static_cast<std::size_t>(T));
    oracle.states.push_back(spec.x_start);
    Eigen::VectorXd x = spec.x_start;
    for (int k = 0; k < T; ++k) {
      const Eigen::VectorXd u = sol.z.segment(m * k, m);
      oracle.inputs.push_back(u);
      x = step(spec.system, x, u);
      oracle.states.push_back(x);
    }

    oracle.tail_certified = certify_tail(spec, riccati, oracle.states.back());
    if (!oracle.tail_certified) {
      if (attempt >= 3)
        throw InfeasibleError("oracle: tail certification failed after three horizon doublings");
      T *= 2;
      continue;
    }

    double cost = 0.0;
    for (int k = 0; k < T; ++k)
      cost += stage_cost(spec.cost, oracle.states[static_cast<std::size_t>(k)],
                         oracle.inputs[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd& x_T = oracle.states.back();
    cost += x_T.dot(riccati.P * x_T);
    oracle.cost = cost;
    return oracle;
  }
}

ErrorMetrics error_metrics(const OracleSolution& oracle, const Trajectory& learned,
                           const Eigen::Ref<const Eigen::VectorXd>& x_target) {
  const std::size_t len = std::max(oracle.states.size(), learned.states.size());
  const Eigen::VectorXd pad = x_target;
  double sigma_bar = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    const Eigen::VectorXd& a = t < learned.states.size() ? learned.states[t] : pad;
    const Eigen::VectorXd& b = t < oracle.states.size() ? oracle.states[t] : pad;
    sigma_bar = std::max(sigma_bar, (a - b).norm());
  }

  ErrorMetrics metrics;
  metrics.sigma_bar = sigma_bar;
  const double learned_cost = learned.iteration_cost();
  if (oracle.cost == 0.0) {
    metrics.delta_j_percent = learned_cost == 0.0 ? 0.0 : kInf;
  } else {
    metrics.delta_j_percent = std::abs(oracle.cost - learned_cost) / oracle.cost * 100.0;
  }
  return metrics;
}

}  // namespace lmpc
