#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lmpc/controller.hpp"
#include "lmpc/linear_system.hpp"
#include "lmpc/qp.hpp"
#include "lmpc/safe_set.hpp"

namespace lmpc {

enum class InitStrategy { DetunedMpc, LongHorizonQp };

struct InitParams {
  double r_scale = 10.0;  // input-cost inflation of the seed controller
  int horizon = 0;        // long-horizon plan length; 0 uses max_steps
};

struct RunConfig {
  TaskSpec task;
  double eps_termination = 1e-8;  // iteration stops once the controller cost drops below this
  double gamma_steady = 1e-8;     // steady state: max state difference between iterations
  double eps_terminal = kDefaultTerminalTol;
  int max_iterations = 100;
  int max_steps = 500;
  InitStrategy init_strategy = InitStrategy::DetunedMpc;
  InitParams init_params;
  SolverSettings solver;
  std::size_t max_safe_set_points = 0;  // 0 = unlimited
};

struct StepRecord {
  Eigen::VectorXd state;
  Eigen::VectorXd input;
  double lmpc_cost = 0.0;           // controller optimal cost at this state
  double lyapunov_residual = 0.0;   // cost(x_{t+1}) - cost(x_t) + h(x_t, u_t)
  double solve_time = 0.0;
  int qp_dimension = 0;
};

struct IterationReport {
  int iteration = 0;
  double iteration_cost = 0.0;
  int duration = 0;
  bool feasible = true;
  std::vector<StepRecord> steps;
  double max_lyapunov_residual = 0.0;
  double mean_solve_time_ms = 0.0;
  int safe_set_size = 0;
  std::string failure;  // empty when feasible
};

struct RunResult {
  std::vector<IterationReport> reports;
  std::vector<Trajectory> trajectories;
  std::optional<int> steady_state_iteration;
  Trajectory final_trajectory;
  SafeSetStore safe_set;
  double total_wall_seconds = 0.0;
  int total_qp_solves = 0;
};

/// Feasible, deliberately suboptimal seed trajectory from x_start to the
/// target (the data the first learning iteration starts from). DetunedMpc
/// runs a plain MPC with inflated input cost and Riccati terminal cost,
/// falling back to LongHorizonQp on any constraint violation; LongHorizonQp
/// plans one long open-loop input sequence ending exactly at the target.
Trajectory generate_initial_trajectory(const RunConfig& config);

/// One closed-loop task execution against the current safe set: solves the
/// controller at every step, applies the first input, stops once the
/// controller cost falls below eps_termination. A solver failure marks the
/// report infeasible instead of throwing.
std::pair<Trajectory, IterationReport> run_iteration(const SafeSetStore& store,
                                                     const RunConfig& config,
                                                     int iteration_index);

/// Full learning loop: seeds the safe set, runs iterations until the
/// trajectory stops changing (steady state) or max_iterations, enforcing the
/// non-increasing-cost and Lyapunov-decrease guarantees at runtime. The
/// optional callback fires after every completed iteration (checkpointing).
RunResult run_learning(
    const RunConfig& config,
    const std::function<void(const IterationReport&, const SafeSetStore&)>& on_iteration = {});

/// Largest state difference between two trajectories, padding the shorter
/// one with x_target.
double trajectory_distance(const Trajectory& a, const Trajectory& b,
                           const Eigen::Ref<const Eigen::VectorXd>& x_target);

}  // namespace lmpc
