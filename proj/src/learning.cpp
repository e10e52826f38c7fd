#include "lmpc/learning.hpp"

#include <chrono>
#include <sstream>

#include "lmpc/clqr.hpp"
#include "lmpc/errors.hpp"

namespace lmpc {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(const Clock::time_point& t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Plain finite-horizon MPC QP without terminal set: used by the seed
// generator. Variables u_0..u_{N-1}, x_1..x_N; terminal cost P_tail on x_N.
QpProblem build_mpc_qp(const TaskSpec& spec, const Eigen::MatrixXd& R_infl,
                       const Eigen::MatrixXd& P_tail, const Eigen::VectorXd& x0) {
  const Eigen::Index n = spec.system.state_dim();
  const Eigen::Index m = spec.system.input_dim();
  const Eigen::Index N = spec.horizon;
  const Eigen::Index d = m * N + n * N;
  auto u_off = [&](Eigen::Index k) { return m * k; };
  auto x_off = [&](Eigen::Index k) { return m * N + n * (k - 1); };

  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index k = 0; k < N; ++k) qp.H.block(u_off(k), u_off(k), m, m) = 2.0 * R_infl;
  for (Eigen::Index k = 1; k < N; ++k)
    qp.H.block(x_off(k), x_off(k), n, n) = 2.0 * spec.cost.Q;
  qp.H.block(x_off(N), x_off(N), n, n) = 2.0 * P_tail;
  qp.f = Eigen::VectorXd::Zero(d);

  qp.A_eq = Eigen::MatrixXd::Zero(n * N, d);
  qp.b_eq = Eigen::VectorXd::Zero(n * N);
  qp.A_eq.block(0, x_off(1), n, n) = Eigen::MatrixXd::Identity(n, n);
  qp.A_eq.block(0, u_off(0), n, m) = -spec.system.B;
  qp.b_eq.head(n) = spec.system.A * x0;
  for (Eigen::Index k = 1; k < N; ++k) {
    qp.A_eq.block(n * k, x_off(k + 1), n, n) = Eigen::MatrixXd::Identity(n, n);
    qp.A_eq.block(n * k, x_off(k), n, n) = -spec.system.A;
    qp.A_eq.block(n * k, u_off(k), n, m) = -spec.system.B;
  }

  qp.A_in = Eigen::MatrixXd::Zero(n * N + m * N, d);
  qp.lo.resize(n * N + m * N);
  qp.hi.resize(n * N + m * N);
  Eigen::Index row = 0;
  for (Eigen::Index k = 1; k <= N; ++k) {
    qp.A_in.block(row, x_off(k), n, n) = Eigen::MatrixXd::Identity(n, n);
    qp.lo.segment(row, n) = spec.constraints.x_lo;
    qp.hi.segment(row, n) = spec.constraints.x_hi;
    row += n;
  }
  for (Eigen::Index k = 0; k < N; ++k) {
    qp.A_in.block(row, u_off(k), m, m) = Eigen::MatrixXd::Identity(m, m);
    qp.lo.segment(row, m) = spec.constraints.u_lo;
    qp.hi.segment(row, m) = spec.constraints.u_hi;
    row += m;
  }
  return qp;
}

std::optional<Trajectory> try_detuned_mpc(const RunConfig& config, double stop_tol) {
  const TaskSpec& spec = config.task;
  const Eigen::Index m = spec.system.input_dim();
  const Eigen::MatrixXd R_infl = config.init_params.r_scale * spec.cost.R;

  RiccatiSolution riccati;
  try {
    riccati = solve_riccati(spec.system.A, spec.system.B, spec.cost.Q, R_infl);
  } catch (const InfeasibleError&) {
    return std::nullopt;
  }

  QpProblem qp = build_mpc_qp(spec, R_infl, riccati.P, spec.x_start);
  QpSolver solver(config.solver);
  solver.setup(qp);

  std::vector<Eigen::VectorXd> states{spec.x_start};
  std::vector<Eigen::VectorXd> inputs;
  Eigen::VectorXd x = spec.x_start;
  for (int t = 0; t <= config.max_steps; ++t) {
    if ((x - spec.x_target).norm() <= stop_tol) {
      return make_trajectory(0, std::move(states), std::move(inputs), spec.cost);
    }
    if (t == config.max_steps) break;
    qp.b_eq.head(spec.system.state_dim()) = spec.system.A * x;
    solver.update_equality_rhs(qp.b_eq);
    const QpSolution sol = solver.solve();
    if (sol.status != SolveStatus::Optimal) return std::nullopt;
    const Eigen::VectorXd u = sol.z.head(m);
    const Eigen::VectorXd x_next = step(spec.system, x, u);
    if (!in_constraints(spec.constraints, x_next, u)) return std::nullopt;
    inputs.push_back(u);
    states.push_back(x_next);
    x = x_next;
  }
  return std::nullopt;  // did not settle within max_steps
}

Trajectory long_horizon_plan(const RunConfig& config, double stop_tol) {
  const TaskSpec& spec = config.task;
  const Eigen::Index n = spec.system.state_dim();
  const Eigen::Index m = spec.system.input_dim();
  const int T = config.init_params.horizon > 0 ? config.init_params.horizon : config.max_steps;
  const Eigen::MatrixXd R_infl = config.init_params.r_scale * spec.cost.R;
  const Eigen::Index d = m * T + n * T;
  auto u_off = [&](Eigen::Index k) { return m * k; };
  auto x_off = [&](Eigen::Index k) { return m * T + n * (k - 1); };

  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index k = 0; k < T; ++k) qp.H.block(u_off(k), u_off(k), m, m) = 2.0 * R_infl;
  for (Eigen::Index k = 1; k <= T; ++k)
    qp.H.block(x_off(k), x_off(k), n, n) = 2.0 * spec.cost.Q;
  qp.f = Eigen::VectorXd::Zero(d);

  // Dynamics plus the terminal equality x_T = x_target.
  qp.A_eq = Eigen::MatrixXd::Zero(n * T + n, d);
  qp.b_eq = Eigen::VectorXd::Zero(n * T + n);
  qp.A_eq.block(0, x_off(1), n, n) = Eigen::MatrixXd::Identity(n, n);
  qp.A_eq.block(0, u_off(0), n, m) = -spec.system.B;
  qp.b_eq.head(n) = spec.system.A * spec.x_start;
  for (Eigen::Index k = 1; k < T; ++k) {
    qp.A_eq.block(n * k, x_off(k + 1), n, n) = Eigen::MatrixXd::Identity(n, n);
    qp.A_eq.block(n * k, x_off(k), n, n) = -spec.system.A;
    qp.A_eq.block(n * k, u_off(k), n, m) = -spec.system.B;
  }
  qp.A_eq.block(n * T, x_off(T), n, n) = Eigen::MatrixXd::Identity(n, n);
  qp.b_eq.tail(n) = spec.x_target;

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

  const QpSolution sol = solve(qp, config.solver);
  if (sol.status != SolveStatus::Optimal)
    throw InfeasibleError(
        "initial trajectory: long-horizon plan is infeasible; the constraint boxes do not "
        "admit a path from x_start to the target within max_steps");

  std::vector<Eigen::VectorXd> states{spec.x_start};
  std::vector<Eigen::VectorXd> inputs;
  Eigen::VectorXd x = spec.x_start;
  for (int k = 0; k < T; ++k) {
    if ((x - spec.x_target).norm() <= stop_tol && k > 0) break;
    const Eigen::VectorXd u = sol.z.segment(m * k, m);
    x = step(spec.system, x, u);
    if (!in_constraints(spec.constraints, x, u))
      throw InfeasibleError("initial trajectory: rolled-out plan violates the constraints");
    inputs.push_back(u);
    states.push_back(x);
  }
  return make_trajectory(0, std::move(states), std::move(inputs), spec.cost);
}

}  // namespace

double trajectory_distance(const Trajectory& a, const Trajectory& b,
                           const Eigen::Ref<const Eigen::VectorXd>& x_target) {
  const std::size_t len = std::max(a.states.size(), b.states.size());
  const Eigen::VectorXd pad = x_target;
  double dist = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    const Eigen::VectorXd& xa = t < a.states.size() ? a.states[t] : pad;
    const Eigen::VectorXd& xb = t < b.states.size() ? b.states[t] : pad;
    dist = std::max(dist, (xa - xb).norm());
  }
  return dist;
}

Trajectory generate_initial_trajectory(const RunConfig& config) {
  validate_task(config.task);
  const double stop_tol = 0.1 * config.eps_terminal;

  if ((config.task.x_start - config.task.x_target).norm() <= stop_tol) {
    return make_trajectory(0, {config.task.x_start}, {}, config.task.cost);
  }

  if (config.init_strategy == InitStrategy::DetunedMpc) {
    if (auto traj = try_detuned_mpc(config, stop_tol)) return std::move(*traj);
  }
  return long_horizon_plan(config, stop_tol);
}

namespace {

std::pair<Trajectory, IterationReport> run_iteration_with(LmpcController& controller,
                                                          const RunConfig& config,
                                                          int iteration_index) {
  const TaskSpec& spec = config.task;
  IterationReport report;
  report.iteration = iteration_index;

  std::vector<Eigen::VectorXd> states{spec.x_start};
  std::vector<Eigen::VectorXd> inputs;
  std::vector<double> solve_times;

  Eigen::VectorXd x = spec.x_start;
  double prev_cost = 0.0;
  const int qp_dim = static_cast<int>(controller.formulation().qp.num_vars());

  for (int t = 0;; ++t) {
    if (t > config.max_steps) {
      report.feasible = false;
      std::ostringstream oss;
      oss << "iteration " << iteration_index << " did not reach eps_termination within "
          << config.max_steps << " steps";
      report.failure = oss.str();
      break;
    }

    ControlStep control;
    try {
      control = controller.solve_step(x);
    } catch (const InfeasibleError& err) {
      report.feasible = false;
      report.failure = err.what();
      break;
    }
    solve_times.push_back(control.solve_time);
    const double cost_here = control.optimal_cost;

    if (t > 0) {
      // Decrease along the closed loop: cost(x_t) - cost(x_{t-1}) + h <= 0.
      const double h_prev = stage_cost(spec.cost, states[static_cast<std::size_t>(t) - 1],
                                       inputs[static_cast<std::size_t>(t) - 1]);
      report.steps.back().lyapunov_residual = cost_here - prev_cost + h_prev;
    }
    prev_cost = cost_here;

    if (cost_here <= config.eps_termination) break;  // task complete, input not applied

    StepRecord record;
    record.state = x;
    record.input = control.input;
    record.lmpc_cost = cost_here;
    record.solve_time = control.solve_time;
    record.qp_dimension = qp_dim;
    report.steps.push_back(std::move(record));

    const Eigen::VectorXd u = control.input;
    x = step(spec.system, x, u);
    if (!in_constraints(spec.constraints, x, u)) {
      report.feasible = false;
      std::ostringstream oss;
      oss << "iteration " << iteration_index << ": realized state left the constraint set at step "
          << t;
      report.failure = oss.str();
      break;
    }
    inputs.push_back(u);
    states.push_back(x);
  }

  Trajectory traj;
  if (report.feasible) {
    traj = make_trajectory(iteration_index, std::move(states), std::move(inputs), spec.cost);
    report.iteration_cost = traj.iteration_cost();
    report.duration = traj.duration();
  }
  for (const StepRecord& record : report.steps)
    report.max_lyapunov_residual = std::max(report.max_lyapunov_residual,
                                            record.lyapunov_residual);
  if (!solve_times.empty()) {
    double total = 0.0;
    for (double v : solve_times) total += v;
    report.mean_solve_time_ms = 1000.0 * total / static_cast<double>(solve_times.size());
  }
  return {std::move(traj), std::move(report)};
}

}  // namespace

std::pair<Trajectory, IterationReport> run_iteration(const SafeSetStore& store,
                                                     const RunConfig& config,
                                                     int iteration_index) {
  if (store.size() == 0) throw ConfigError("run_iteration: safe set is empty; seed iteration 0");
  LmpcController controller(config.task, config.solver);
  controller.set_safe_set(store.snapshot());
  return run_iteration_with(controller, config, iteration_index);
}

RunResult run_learning(
    const RunConfig& config,
    const std::function<void(const IterationReport&, const SafeSetStore&)>& on_iteration) {
  validate_task(config.task);
  if (config.eps_termination <= 0 || config.gamma_steady <= 0 || config.eps_terminal <= 0)
    throw ConfigError("run config: tolerances must be positive");
  if (config.max_iterations < 1 || config.max_steps < 1)
    throw ConfigError("run config: iteration and step budgets must be positive");

  const auto t0 = Clock::now();

  Trajectory seed = generate_initial_trajectory(config);
  validate_trajectory(seed, config.task);

  SafeSetStore store(config.task.cost, config.task.x_target, config.max_safe_set_points);
  store.set_solver_settings(config.solver);
  {
    const auto added = store.add_trajectory(seed, config.eps_terminal);
    if (!added.accepted)
      throw InfeasibleError("run_learning: seed trajectory rejected: " + added.reason);
  }

  IterationReport seed_report;
  seed_report.iteration = 0;
  seed_report.iteration_cost = seed.iteration_cost();
  seed_report.duration = seed.duration();
  seed_report.safe_set_size = static_cast<int>(store.size());

  std::vector<IterationReport> reports{seed_report};
  std::vector<Trajectory> trajectories{seed};
  if (on_iteration) on_iteration(seed_report, store);

  LmpcController controller(config.task, config.solver);
  std::optional<int> steady;
  int total_solves = 0;

  for (int j = 1; j <= config.max_iterations; ++j) {
    controller.set_safe_set(store.snapshot());
    auto [traj, report] = run_iteration_with(controller, config, j);
    total_solves += static_cast<int>(report.steps.size()) + (report.feasible ? 1 : 0);

    if (!report.feasible) {
      reports.push_back(report);
      throw InfeasibleError("run_learning: " + report.failure);
    }

    const double prev_cost = reports.back().iteration_cost;
    if (report.iteration_cost > prev_cost + 1e-6) {
      std::ostringstream oss;
      oss << "run_learning: iteration cost increased from " << prev_cost << " to "
          << report.iteration_cost << " at iteration " << j;
      throw InvariantViolation(oss.str());
    }
    if (report.max_lyapunov_residual > 1e-6) {
      std::ostringstream oss;
      oss << "run_learning: Lyapunov decrease violated at iteration " << j << " (residual "
          << report.max_lyapunov_residual << ")";
      throw InvariantViolation(oss.str());
    }

    const auto added = store.add_trajectory(traj, config.eps_terminal);
    if (!added.accepted)
      throw InfeasibleError("run_learning: trajectory " + std::to_string(j) +
                            " rejected: " + added.reason);
    report.safe_set_size = static_cast<int>(store.size());
    reports.push_back(report);
    if (on_iteration) on_iteration(reports.back(), store);

    const double dist = trajectory_distance(traj, trajectories.back(), config.task.x_target);
    trajectories.push_back(std::move(traj));
    if (dist < config.gamma_steady) {
      steady = j;
      break;
    }
  }

  RunResult result{.reports = std::move(reports),
                   .trajectories = std::move(trajectories),
                   .steady_state_iteration = steady,
                   .final_trajectory = {},
                   .safe_set = std::move(store),
                   .total_wall_seconds = seconds_since(t0),
                   .total_qp_solves = total_solves};
  result.final_trajectory = result.trajectories.back();
  return result;
}

}  // namespace lmpc
