#pragma once

#include <Eigen/Dense>
#include <string>

#include "lmpc/linear_system.hpp"
#include "lmpc/qp.hpp"
#include "lmpc/safe_set.hpp"

namespace lmpc {

/// Index bookkeeping of the controller QP. Decision vector layout:
/// inputs u_0..u_{N-1}, then states x_1..x_N, then multipliers lambda_1..S.
/// Equality rows: N dynamics blocks, terminal coupling x_N = D lambda, and
/// the simplex row 1'lambda = 1. Inequality rows: state boxes, input boxes,
/// lambda >= 0, in that order.
struct LmpcLayout {
  Eigen::Index n = 0, m = 0;  // state / input dimension
  Eigen::Index N = 0;         // horizon
  Eigen::Index S = 0;         // safe-set points

  Eigen::Index num_vars() const { return m * N + n * N + S; }
  Eigen::Index input_offset(Eigen::Index k) const { return m * k; }
  Eigen::Index state_offset(Eigen::Index k) const { return m * N + n * (k - 1); }  // k in 1..N
  Eigen::Index lambda_offset() const { return m * N + n * N; }
  Eigen::Index num_eq() const { return n * N + n + 1; }
  Eigen::Index num_in() const { return n * N + m * N + S; }
};

/// The controller problem as one convex QP: N-step stage costs, dynamics and
/// box rows, terminal state tied to a convex combination of safe-set points
/// whose stored costs enter the objective linearly. cost_offset carries the
/// fixed first-stage state cost x_t'Q x_t so that cost_offset + qp objective
/// equals the controller's optimal cost.
struct LmpcFormulation {
  LmpcLayout layout;
  QpProblem qp;
  double cost_offset = 0.0;
};

LmpcFormulation build_qp(const TaskSpec& spec, const SafeSetSnapshot& snapshot,
                         const Eigen::Ref<const Eigen::VectorXd>& x_t);

/// Outcome of one receding-horizon solve.
struct ControlStep {
  Eigen::VectorXd input;             // first optimal input, applied to the plant
  Eigen::MatrixXd predicted_states;  // n x N, columns x_1..x_N
  Eigen::VectorXd lambda;
  double optimal_cost = 0.0;  // stage costs at x_t plus terminal cost
  double solve_time = 0.0;
  int qp_iterations = 0;
  bool polished = false;
};

/// Receding-horizon controller. One instance owns one solver workspace and
/// runs one closed-loop simulation; independent instances may run in
/// parallel. Within a fixed safe set only the initial-state entries of the
/// equality right-hand side change, so the factorization from set_safe_set()
/// is reused across all timesteps and each solve warm starts from the
/// previous one (inputs shifted, multipliers kept).
class LmpcController {
 public:
  explicit LmpcController(TaskSpec spec, SolverSettings settings = {});

  /// Rebuilds the QP for a new snapshot. The first solve of the previous
  /// snapshot seeds the first solve of this one (new multipliers start at 0).
  void set_safe_set(const SafeSetSnapshot& snapshot);

  /// Solves the controller QP at x_t and returns the applied input with
  /// diagnostics. Throws InfeasibleError (after dumping the QP to disk) if
  /// the solver does not certify optimality.
  ControlStep solve_step(const Eigen::Ref<const Eigen::VectorXd>& x_t);

  const LmpcFormulation& formulation() const { return form_; }
  const TaskSpec& task() const { return spec_; }

  /// Directory for diagnostic QP dumps on failure (default: current dir).
  void set_dump_directory(std::string dir) { dump_dir_ = std::move(dir); }

 private:
  TaskSpec spec_;
  SolverSettings settings_;
  LmpcFormulation form_;
  QpSolver solver_;
  bool have_snapshot_ = false;

  Eigen::VectorXd prev_z_, prev_y_;
  bool have_prev_ = false;
  Eigen::VectorXd first_z_, first_y_;
  Eigen::Index first_lambda_size_ = 0;
  bool have_first_ = false;
  std::string dump_dir_ = ".";
};

/// One-shot receding-horizon step with fresh workspace.
ControlStep solve_step(const TaskSpec& spec, const SafeSetSnapshot& snapshot,
                       const Eigen::Ref<const Eigen::VectorXd>& x_t,
                       const SolverSettings& settings = {});

}  // namespace lmpc
