#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "lmpc/linear_system.hpp"
#include "lmpc/qp.hpp"

namespace lmpc {

/// Terminal residual below which an iteration counts as having reached the
/// target equilibrium.
inline constexpr double kDefaultTerminalTol = 1e-4;

/// Realized closed-loop (or planned open-loop) data of one task execution.
/// states holds x_0..x_T, inputs u_0..u_{T-1} and cost_to_go the suffix sums
/// of the stage cost aligned with states (zero at the final state).
struct Trajectory {
  int iteration = 0;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> inputs;
  std::vector<double> cost_to_go;

  int duration() const { return static_cast<int>(inputs.size()); }
  double iteration_cost() const { return cost_to_go.empty() ? 0.0 : cost_to_go.front(); }
};

/// Builds a trajectory from realized states/inputs, filling in the suffix
/// cost-to-go. Throws ConfigError on inconsistent lengths.
Trajectory make_trajectory(int iteration, std::vector<Eigen::VectorXd> states,
                           std::vector<Eigen::VectorXd> inputs, const QuadraticStageCost& cost);

/// Structural validation against a task: lengths, start state, constraint
/// satisfaction of every (x_t, u_t). Throws ConfigError on the first problem.
void validate_trajectory(const Trajectory& traj, const TaskSpec& spec,
                         double tol = kConstraintTol);

struct SafeSetPoint {
  Eigen::VectorXd state;
  double cost_to_go = 0.0;
  int iteration = 0;
  int time = 0;
};

/// Immutable column view of the stored data: states(:, i) pairs with costs(i).
struct SafeSetSnapshot {
  Eigen::MatrixXd states;  // n x S
  Eigen::VectorXd costs;   // S

  Eigen::Index size() const { return costs.size(); }
};

/// Pool of (state, cost-to-go) records from successful iterations. The convex
/// hull of the stored states is the terminal set offered to the controller;
/// the cheapest convex combination of stored costs is the terminal cost.
///
/// A record (x_target, 0) is always present so that the truncated hull
/// contains the equilibrium exactly. Mutation is single-writer; snapshots are
/// value copies safe to hand to concurrently running solvers.
class SafeSetStore {
 public:
  SafeSetStore(QuadraticStageCost cost, Eigen::VectorXd x_target, std::size_t max_points = 0);

  struct AddResult {
    bool accepted = false;
    double terminal_residual = 0.0;
    std::string reason;
  };

  /// Appends a trajectory's (state, cost-to-go) pairs if its terminal state is
  /// within eps_terminal of the target. Rejects corrupt data (broken suffix
  /// identity, dimension mismatch, duplicate iteration index) with a reason.
  AddResult add_trajectory(const Trajectory& traj, double eps_terminal = kDefaultTerminalTol);

  /// Barycentric terminal cost: cheapest convex combination of stored costs
  /// whose states average to x. nullopt when x is outside the convex hull.
  std::optional<double> terminal_cost(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// Convex-hull membership, decided by feasibility of the same LP.
  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// All stored states/costs in deterministic order (equilibrium record first,
  /// then by iteration and time).
  SafeSetSnapshot snapshot() const;

  const std::vector<SafeSetPoint>& points() const { return points_; }
  const std::vector<int>& successful_iterations() const { return successful_; }
  const Eigen::VectorXd& target() const { return x_target_; }
  const QuadraticStageCost& cost() const { return cost_; }
  std::size_t max_points() const { return max_points_; }
  std::size_t size() const { return points_.size(); }
  Eigen::Index state_dim() const { return x_target_.size(); }

  /// Column index of the record for (iteration, time) in snapshot order, or -1.
  Eigen::Index find_point(int iteration, int time) const;

  void set_solver_settings(const SolverSettings& settings) { lp_settings_ = settings; }

  /// Deserialization entry: rebuilds a store from previously serialized state.
  /// points must start with the equilibrium record.
  static SafeSetStore restore(QuadraticStageCost cost, Eigen::VectorXd x_target,
                              std::size_t max_points, std::vector<SafeSetPoint> points,
                              std::vector<int> successful_iterations);

 private:
  QpProblem hull_lp(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  QuadraticStageCost cost_;
  Eigen::VectorXd x_target_;
  std::size_t max_points_ = 0;
  std::vector<SafeSetPoint> points_;
  std::vector<int> successful_;
  SolverSettings lp_settings_;
};

}  // namespace lmpc
